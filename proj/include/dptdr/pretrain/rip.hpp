#pragma once

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/autodiff/adamw.hpp"
#include "dptdr/encoder/mlm.hpp"
#include "dptdr/pretrain/units.hpp"
#include "dptdr/train/losses.hpp"

namespace dptdr::pretrain {

using ad::Tensor;
using encoder::EncoderModel;
using encoder::PromptSet;

enum class PretrainMode { backbone, prompts_only };

inline std::string to_string(PretrainMode m) { return m == PretrainMode::backbone ? "backbone" : "prompts"; }

inline PretrainMode parse_pretrain_mode(const std::string& s)
{
    if (s == "backbone") {
        return PretrainMode::backbone;
    }
    if (s == "prompts" || s == "prompts_only") {
        return PretrainMode::prompts_only;
    }
    throw ValidationError("unknown pretraining mode '" + s + "' (expected backbone or prompts)");
}

struct RipConfig {
    PretrainMode mode = PretrainMode::backbone;
    std::size_t epochs = 1;
    std::size_t batch_size = 16;  // m passages, 2m units
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double warmup_ratio = 0.0;
    bool use_mlm = true;
    bool use_contrastive = true;
    UnitConfig units;
    encoder::MaskingConfig masking;
    std::uint64_t seed = 0;
};

struct PretrainStepReport {
    std::size_t step = 0;
    double l_c = 0.0;
    double l_s = 0.0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double mean_partner_rank = 0.0;  // 0 when the contrastive term is off
};

inline nlohmann::json to_json(const PretrainStepReport& r)
{
    return {{"step", r.step}, {"l_c", r.l_c}, {"l_s", r.l_s}, {"loss", r.loss},
            {"learning_rate", r.learning_rate}, {"mean_partner_rank", r.mean_partner_rank}};
}

struct RipLoss {
    Tensor total;
    double l_c = 0.0;
    double l_s = 0.0;
    double mean_partner_rank = 0.0;
};

/// L = (1/2m) sum over the 2m units of L_s + L_c. L_s is each unit's mean
/// masked-token cross-entropy on a separately masked copy; L_c uses the
/// first-token embeddings of the unmasked units.
inline RipLoss rip_loss(std::span<const UnitPair> batch, const EncoderModel& model, const PromptSet* prompts,
                        const RipConfig& cfg, std::mt19937_64& rng)
{
    if (batch.empty()) {
        throw ValidationError("rip: empty batch");
    }
    if (!cfg.use_mlm && !cfg.use_contrastive) {
        throw ValidationError("rip: both loss terms disabled");
    }
    encoder::PrefixKV kv;
    const encoder::PrefixKV* prefix = nullptr;
    if (prompts != nullptr) {
        kv = encoder::prefix_for(model, *prompts);
        prefix = &kv;
    }
    const std::size_t max_len = model.config().max_seq_len;
    std::vector<std::vector<encoder::TokenId>> ids;
    for (const auto& p : batch) {
        ids.push_back(model.vocab().encode(p.first, max_len));
        ids.push_back(model.vocab().encode(p.second, max_len));
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    RipLoss out;
    std::vector<Tensor> terms;
    if (cfg.use_mlm) {
        std::vector<Tensor> per_unit;
        for (const auto& u : ids) {
            auto masked = encoder::mask_tokens(u, model.config().vocab_size, rng, cfg.masking);
            per_unit.push_back(encoder::mlm_sequence_loss(model, prefix, masked));
        }
        Tensor ls = ad::scale(ad::sum(ad::concat_rows(per_unit)), inv);
        out.l_s = ls.item();
        terms.push_back(ls);
    }
    if (cfg.use_contrastive) {
        std::vector<Tensor> emb;
        for (const auto& u : ids) {
            emb.push_back(encoder::encode_with_prefix(model, prefix, u));
        }
        Tensor e = ad::concat_rows(emb);
        Tensor lc = train::contrastive_loss(e);
        out.l_c = lc.item();
        double rank_sum = 0.0;
        for (auto r : train::partner_ranks(e)) {
            rank_sum += static_cast<double>(r);
        }
        out.mean_partner_rank = rank_sum * inv;
        terms.push_back(lc);
    }
    out.total = terms.size() == 1 ? terms[0] : ad::add(terms[0], terms[1]);
    return out;
}

/// Backbone mode trains every backbone array (no prompts); prompts mode
/// trains only the prompt set against a frozen backbone.
class RipPretrainer {
  public:
    using EpochCallback = std::function<void(std::size_t epoch, std::span<const PretrainStepReport>)>;

    RipPretrainer(EncoderModel& model, PromptSet* prompts, std::vector<EligiblePassage> pool, RipConfig cfg)
        : m_model(model), m_prompts(prompts), m_pool(std::move(pool)), m_config(cfg), m_rng(cfg.seed)
    {
        if (m_config.mode == PretrainMode::backbone) {
            if (m_prompts != nullptr) {
                throw ValidationError("rip: backbone mode takes no prompts");
            }
            m_model.set_trainable(true);
            m_trainable = m_model.trainable_parameters(m_config.use_mlm);
        } else {
            if (m_prompts == nullptr) {
                throw ValidationError("rip: prompts mode needs a prompt set");
            }
            m_prompts->check_compatible(m_model.config());
            m_model.set_trainable(false);
            m_prompts->set_trainable(true);
            m_trainable = m_prompts->parameters();
        }
    }

    std::size_t steps_per_epoch() const { return std::max<std::size_t>(1, m_pool.size() / m_config.batch_size); }

    std::vector<PretrainStepReport> run(const EpochCallback& on_epoch = {})
    {
        ad::AdamWConfig oc;
        oc.learning_rate = m_config.learning_rate;
        oc.weight_decay = m_config.weight_decay;
        oc.warmup_ratio = m_config.warmup_ratio;
        oc.total_steps = steps_per_epoch() * m_config.epochs;
        ad::AdamW opt(m_trainable, oc);
        std::vector<PretrainStepReport> log;
        for (std::size_t epoch = 0; epoch < m_config.epochs; ++epoch) {
            const std::size_t first = log.size();
            for (std::size_t s = 0; s < steps_per_epoch(); ++s) {
                auto batch = sample_batch(m_pool, m_config.batch_size, m_rng);
                auto l = rip_loss(batch, m_model, m_prompts, m_config, m_rng);
                PretrainStepReport r;
                r.step = opt.step_count();
                r.l_c = l.l_c;
                r.l_s = l.l_s;
                r.loss = l.total.item();
                r.mean_partner_rank = l.mean_partner_rank;
                if (!std::isfinite(r.loss)) {
                    std::string ids;
                    for (const auto& p : batch) {
                        ids += (ids.empty() ? "" : ",") + p.passage_id;
                    }
                    throw Error("nan_loss", "rip: non-finite loss at step " + std::to_string(r.step) + " for passages ["
                                                + ids + "]");
                }
                ad::backward(l.total);
                r.learning_rate = opt.step();
                log.push_back(r);
            }
            if (on_epoch) {
                on_epoch(epoch, std::span<const PretrainStepReport>(log).subspan(first));
            }
        }
        return log;
    }

  private:
    EncoderModel& m_model;
    PromptSet* m_prompts;
    std::vector<EligiblePassage> m_pool;
    RipConfig m_config;
    std::mt19937_64 m_rng;
    std::vector<Tensor> m_trainable;
};

/// Mean partner rank over the first and last `fraction` of the steps.
inline std::pair<double, double> partner_rank_trend(std::span<const PretrainStepReport> log, double fraction = 0.1)
{
    if (log.empty()) {
        throw ValidationError("rip: empty log");
    }
    const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(log.size())));
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        head += log[i].mean_partner_rank;
        tail += log[log.size() - 1 - i].mean_partner_rank;
    }
    return {head / static_cast<double>(n), tail / static_cast<double>(n)};
}

}  // namespace dptdr::pretrain
