#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/autodiff/adamw.hpp"
#include "dptdr/encoder/encode.hpp"
#include "dptdr/io/dataset.hpp"
#include "dptdr/train/losses.hpp"

namespace dptdr::train {

using json = nlohmann::json;
using encoder::DualPrompts;
using encoder::EncoderModel;
using encoder::PrefixKV;
using encoder::TokenId;

struct TrainingExample {
    std::string qid;
    std::string query;
    std::string pos_pid;
    std::vector<std::string> neg_pids;
    std::vector<std::string> neg_tags;  // bm25 | dense | denoised
};

inline json to_json(const TrainingExample& e)
{
    return json{{"qid", e.qid}, {"query", e.query}, {"pos_pid", e.pos_pid}, {"neg_pids", e.neg_pids},
                {"neg_tags", e.neg_tags}};
}

inline TrainingExample example_from_json(const json& j)
{
    try {
        TrainingExample e;
        e.qid = j.at("qid").get<std::string>();
        e.query = j.at("query").get<std::string>();
        e.pos_pid = j.at("pos_pid").get<std::string>();
        e.neg_pids = j.at("neg_pids").get<std::vector<std::string>>();
        e.neg_tags = j.value("neg_tags", std::vector<std::string>(e.neg_pids.size(), "bm25"));
        if (e.neg_tags.size() != e.neg_pids.size()) {
            throw ValidationError("training example '" + e.qid + "': neg_tags and neg_pids differ in length");
        }
        return e;
    } catch (const json::exception& ex) {
        throw ValidationError(std::string("training example: ") + ex.what());
    }
}

inline std::string examples_to_jsonl(std::span<const TrainingExample> examples)
{
    std::string out;
    for (const auto& e : examples) {
        out += to_json(e).dump() + "\n";
    }
    return out;
}

inline std::vector<TrainingExample> read_examples(const std::string& path)
{
    std::vector<TrainingExample> out;
    std::istringstream in(io::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(example_from_json(json::parse(line)));
        }
    }
    return out;
}

/// Positive not among negatives, every id in the corpus.
inline void validate_example(const TrainingExample& e, const io::Corpus& corpus)
{
    if (!corpus.contains(e.pos_pid)) {
        throw ValidationError("example '" + e.qid + "': unknown positive '" + e.pos_pid + "'");
    }
    for (const auto& n : e.neg_pids) {
        if (n == e.pos_pid) {
            throw ValidationError("example '" + e.qid + "': positive '" + n + "' listed as a negative");
        }
        if (!corpus.contains(n)) {
            throw ValidationError("example '" + e.qid + "': unknown negative '" + n + "'");
        }
    }
}

enum class TrainMode { dpt, ft };

inline std::string to_string(TrainMode m) { return m == TrainMode::dpt ? "dpt" : "ft"; }

inline TrainMode parse_train_mode(const std::string& s)
{
    if (s == "dpt") {
        return TrainMode::dpt;
    }
    if (s == "ft") {
        return TrainMode::ft;
    }
    throw ValidationError("unknown training mode '" + s + "' (expected dpt or ft)");
}

struct TrainConfig {
    TrainMode mode = TrainMode::dpt;
    double learning_rate = 7e-3;
    double weight_decay = 0.0;
    double warmup_ratio = 0.1;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::size_t negatives_per_query = 8;
    bool use_in_batch_negatives = true;
    std::uint64_t seed = 0;
};

struct TrainStepReport {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;
};

inline json to_json(const TrainStepReport& r)
{
    return json{{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"learning_rate", r.learning_rate},
                {"grad_norm", r.grad_norm}};
}

/// Score-matrix layout of one batch: unique passage columns, each query's
/// positive column, and which columns enter each query's denominator.
struct BatchLayout {
    std::vector<std::string> columns;
    std::vector<std::size_t> positive_column;
    std::vector<std::uint8_t> allowed;  // queries x columns

    bool is_allowed(std::size_t q, std::size_t c) const { return allowed[q * columns.size() + c] != 0; }
};

/// Own positive and first `n` own negatives always count; with in-batch
/// negatives every other column does too. Columns holding another relevant
/// passage of the query (per `qrels`, when given) are masked out.
inline BatchLayout layout_batch(std::span<const TrainingExample> batch, std::size_t n, bool in_batch,
                                const io::Qrels* qrels = nullptr)
{
    BatchLayout out;
    std::unordered_map<std::string, std::size_t> col;
    auto column = [&](const std::string& pid) {
        auto [it, fresh] = col.emplace(pid, out.columns.size());
        if (fresh) {
            out.columns.push_back(pid);
        }
        return it->second;
    };
    std::vector<std::vector<std::size_t>> own(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.positive_column.push_back(column(batch[i].pos_pid));
        own[i].push_back(out.positive_column.back());
        const std::size_t take = std::min(n, batch[i].neg_pids.size());
        for (std::size_t j = 0; j < take; ++j) {
            own[i].push_back(column(batch[i].neg_pids[j]));
        }
    }
    const std::size_t nc = out.columns.size();
    out.allowed.assign(batch.size() * nc, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (in_batch) {
            std::fill_n(out.allowed.begin() + static_cast<std::ptrdiff_t>(i * nc), nc, 1);
        } else {
            for (auto c : own[i]) {
                out.allowed[i * nc + c] = 1;
            }
        }
        for (std::size_t c = 0; c < nc; ++c) {
            if (c == out.positive_column[i]) {
                continue;
            }
            const bool relevant = qrels != nullptr ? qrels->is_relevant(batch[i].qid, out.columns[c])
                                                   : out.columns[c] == batch[i].pos_pid;
            if (relevant) {
                out.allowed[i * nc + c] = 0;
            }
        }
    }
    return out;
}

/// Supervised dual-encoder training. In dpt mode only the prompts are
/// registered with the optimizer; in ft mode only the backbone is.
class DualTrainer {
  public:
    using EpochCallback = std::function<void(std::size_t epoch, std::span<const TrainStepReport>)>;

    DualTrainer(EncoderModel& model, DualPrompts* prompts, const io::Corpus& corpus, TrainConfig config,
                const io::Qrels* qrels = nullptr)
        : m_model(model), m_prompts(prompts), m_corpus(corpus), m_config(config), m_qrels(qrels)
    {
        if (m_config.batch_size == 0) {
            throw ValidationError("train: batch_size must be positive");
        }
        if (m_config.mode == TrainMode::dpt && m_prompts == nullptr) {
            throw ValidationError("train: dpt mode needs a prompt set");
        }
        if (m_prompts != nullptr) {
            m_prompts->for_query().check_compatible(m_model.config());
            m_prompts->for_passage().check_compatible(m_model.config());
        }
        const bool dpt = m_config.mode == TrainMode::dpt;
        m_model.set_trainable(!dpt);
        if (m_prompts != nullptr) {
            m_prompts->set_trainable(dpt);
        }
        m_trainable = dpt ? m_prompts->parameters() : m_model.trainable_parameters(false);
    }

    const std::vector<Tensor>& trainable() const noexcept { return m_trainable; }

    /// Optimizer schedule over `total_steps`; step() uses a constant rate
    /// until this is called.
    void plan(std::size_t total_steps)
    {
        ad::AdamWConfig oc;
        oc.learning_rate = m_config.learning_rate;
        oc.weight_decay = m_config.weight_decay;
        oc.warmup_ratio = m_config.warmup_ratio;
        oc.total_steps = total_steps;
        m_optimizer = std::make_unique<ad::AdamW>(m_trainable, oc);
    }

    /// Batch-mean loss without an update.
    Tensor batch_loss(std::span<const TrainingExample> batch, BatchLayout* layout_out = nullptr)
    {
        if (batch.empty()) {
            throw ValidationError("train: empty batch");
        }
        for (const auto& e : batch) {
            validate_example(e, m_corpus);
        }
        BatchLayout layout = layout_batch(batch, m_config.negatives_per_query, m_config.use_in_batch_negatives,
                                          m_qrels);
        PrefixKV qkv, pkv;
        const PrefixKV* qp = nullptr;
        const PrefixKV* pp = nullptr;
        if (m_prompts != nullptr) {
            qkv = encoder::prefix_for(m_model, m_prompts->for_query());
            qp = &qkv;
            if (m_prompts->passage) {
                pkv = encoder::prefix_for(m_model, *m_prompts->passage);
                pp = &pkv;
            } else {
                pp = &qkv;
            }
        }
        const std::size_t max_len = m_model.config().max_seq_len;
        std::vector<Tensor> qs, ps;
        for (const auto& e : batch) {
            qs.push_back(encoder::encode_with_prefix(m_model, qp, m_model.vocab().encode(e.query, max_len)));
        }
        for (const auto& pid : layout.columns) {
            ps.push_back(encoder::encode_with_prefix(m_model, pp, passage_ids(pid)));
        }
        Tensor scores = ad::matmul_nt(ad::concat_rows(qs), ad::concat_rows(ps));
        Tensor loss = ad::cross_entropy_rows(scores, layout.positive_column, layout.allowed);
        if (layout_out != nullptr) {
            *layout_out = std::move(layout);
        }
        return loss;
    }

    TrainStepReport step(std::span<const TrainingExample> batch)
    {
        if (!m_optimizer) {
            plan(0);
        }
        Tensor loss = batch_loss(batch);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            std::string ids;
            for (const auto& e : batch) {
                ids += (ids.empty() ? "" : ",") + e.qid;
            }
            throw Error("nan_loss", "train: non-finite loss at step " + std::to_string(m_optimizer->step_count())
                                        + " for queries [" + ids + "]");
        }
        ad::backward(loss);
        double norm = 0.0;
        for (const auto& t : m_trainable) {
            for (double g : t.grad()) {
                norm += g * g;
            }
        }
        TrainStepReport r;
        r.step = m_optimizer->step_count();
        r.epoch = m_epoch;
        r.loss = value;
        r.grad_norm = std::sqrt(norm);
        r.learning_rate = m_optimizer->step();
        return r;
    }

    /// Runs every epoch over a seeded shuffle of `examples`.
    std::vector<TrainStepReport> train(std::span<const TrainingExample> examples, const EpochCallback& on_epoch = {})
    {
        if (examples.empty()) {
            throw ValidationError("train: empty dataset");
        }
        const std::size_t bs = m_config.batch_size;
        const std::size_t per_epoch = (examples.size() + bs - 1) / bs;
        plan(per_epoch * m_config.epochs);
        std::vector<std::size_t> order(examples.size());
        std::mt19937_64 rng(m_config.seed);
        std::vector<TrainStepReport> log;
        std::vector<TrainingExample> batch;
        for (m_epoch = 0; m_epoch < m_config.epochs; ++m_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            const std::size_t first = log.size();
            for (std::size_t b = 0; b < order.size(); b += bs) {
                batch.clear();
                for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i) {
                    batch.push_back(examples[order[i]]);
                }
                log.push_back(step(batch));
            }
            if (on_epoch) {
                on_epoch(m_epoch, std::span<const TrainStepReport>(log).subspan(first));
            }
        }
        return log;
    }

  private:
    const std::vector<TokenId>& passage_ids(const std::string& pid)
    {
        auto it = m_passage_cache.find(pid);
        if (it == m_passage_cache.end()) {
            it = m_passage_cache
                     .emplace(pid, m_model.vocab().encode(m_corpus.text(pid), m_model.config().max_seq_len))
                     .first;
        }
        return it->second;
    }

    EncoderModel& m_model;
    DualPrompts* m_prompts;
    const io::Corpus& m_corpus;
    TrainConfig m_config;
    const io::Qrels* m_qrels;
    std::vector<Tensor> m_trainable;
    std::unique_ptr<ad::AdamW> m_optimizer;
    std::size_t m_epoch = 0;
    std::unordered_map<std::string, std::vector<TokenId>> m_passage_cache;
};

inline std::string reports_to_jsonl(std::span<const TrainStepReport> reports)
{
    std::string out;
    for (const auto& r : reports) {
        out += to_json(r).dump() + "\n";
    }
    return out;
}

}  // namespace dptdr::train
