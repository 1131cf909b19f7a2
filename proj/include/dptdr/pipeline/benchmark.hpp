#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/index/metrics.hpp"
#include "dptdr/mining/dense.hpp"
#include "dptdr/mining/unm.hpp"
#include "dptdr/pretrain/rip.hpp"
#include "dptdr/synth/generator.hpp"
#include "dptdr/train/dual_trainer.hpp"

namespace dptdr::pipeline {

using json = nlohmann::json;

/// Retrieval on the test queries: top `depth` per query, then metrics.
inline std::vector<index::RetrievalResult> dense_run(const encoder::EncoderModel& model,
                                                     const encoder::DualPrompts* prompts, const index::VectorIndex& ix,
                                                     const io::Queries& queries, std::size_t depth)
{
    mining::DenseRetriever r(model, prompts, ix);
    std::vector<index::RetrievalResult> out;
    for (const auto& q : queries.records()) {
        out.push_back({q.id, r.search(q.text, depth)});
    }
    return out;
}

inline std::vector<index::RetrievalResult> bm25_run(const mining::Bm25Index& bm25, const io::Queries& queries,
                                                    std::size_t depth)
{
    std::vector<index::RetrievalResult> out;
    for (const auto& q : queries.records()) {
        out.push_back({q.id, bm25.search(q.text, depth)});
    }
    return out;
}

struct MiningConfig {
    std::size_t top_n = 200;
    std::size_t sample_size = 30;
    double threshold = 0.1;
    mining::MixConfig mix;
    std::uint64_t seed = 0;
};

/// One training example per (query, positive). `runs[i]` holds every
/// retriever's ranking for query i. With `denoise` off only undenoised
/// negatives are used.
inline std::vector<train::TrainingExample> mine_examples(const io::Corpus& corpus, const io::Queries& queries,
                                                         const io::Qrels& qrels,
                                                         const std::vector<std::vector<mining::RetrieverRun>>& runs,
                                                         const MiningConfig& cfg, bool denoise,
                                                         std::vector<mining::NegativePool>* pools = nullptr)
{
    std::mt19937_64 rng(cfg.seed);
    mining::LexicalOverlapScorer scorer;
    std::vector<train::TrainingExample> out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& q = queries[i];
        const auto& pos = qrels.relevant(q.id);
        auto pool = mining::mine(q.id, pos, runs[i], cfg.top_n, cfg.sample_size, rng);
        mining::MixConfig mix = cfg.mix;
        if (denoise) {
            mining::denoise(pool, q.text, [&](const std::string& pid) -> const std::string& { return corpus.text(pid); },
                            scorer, cfg.threshold);
        } else {
            mix = {0, cfg.mix.denoised + cfg.mix.undenoised};
        }
        for (const auto& p : pos) {
            out.push_back(mining::assemble(q.id, q.text, p, pos, pool, mix));
        }
        if (pools != nullptr) {
            pools->push_back(std::move(pool));
        }
    }
    return out;
}

struct BenchmarkConfig {
    synth::SynthConfig data;
    encoder::EncoderConfig encoder;
    double init_std = 0.02;
    pretrain::RipConfig vanilla;  // MLM only
    pretrain::RipConfig rip;      // MLM + contrastive, continues from the vanilla backbone
    train::TrainConfig dpt;
    train::TrainConfig ft;
    MiningConfig mining;
    std::size_t eval_depth = 100;
};

inline BenchmarkConfig default_benchmark()
{
    BenchmarkConfig c;
    c.encoder.num_layers = 2;
    c.encoder.hidden_size = 64;
    c.encoder.num_heads = 4;
    c.encoder.ffn_size = 128;
    c.encoder.max_seq_len = 48;
    c.encoder.prompt_length = 16;

    c.vanilla.mode = pretrain::PretrainMode::backbone;
    c.vanilla.use_contrastive = false;
    c.vanilla.epochs = 10;
    c.vanilla.batch_size = 16;
    c.vanilla.learning_rate = 1e-3;
    c.vanilla.warmup_ratio = 0.05;

    c.rip = c.vanilla;
    c.rip.use_contrastive = true;
    c.rip.epochs = 3;

    c.dpt.mode = train::TrainMode::dpt;
    c.dpt.learning_rate = 7e-3;
    c.dpt.epochs = 10;
    c.dpt.batch_size = 8;
    c.dpt.negatives_per_query = 8;

    c.ft = c.dpt;
    c.ft.mode = train::TrainMode::ft;
    c.ft.learning_rate = 1e-3;
    c.ft.weight_decay = 0.01;

    c.mining.mix = {4, 4};
    return c;
}

struct ArmResult {
    std::string name;
    index::EvalReport report;
    double seconds = 0.0;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::map<std::string, ArmResult> arms;
    std::vector<pretrain::PretrainStepReport> rip_log;
    std::vector<pretrain::PretrainStepReport> vanilla_log;
    double bm25_mrr = 0.0;
};

using Progress = std::function<void(const std::string&)>;

/// Everything the arms of one seed share: data, both backbones, the mined
/// example sets and the first-round retriever.
struct SeedContext {
    std::uint64_t seed = 0;
    synth::SynthData data;
    encoder::EncoderModel vanilla;
    encoder::EncoderModel ripped;
    std::vector<train::TrainingExample> bm25_examples;
    std::vector<train::TrainingExample> multi_examples;
    std::vector<train::TrainingExample> unm_examples;
    std::optional<ArmResult> first_round;  // dpt_rip_bm25
};

/// Trains one arm from `backbone` and evaluates it on the test queries.
inline ArmResult run_arm(const BenchmarkConfig& cfg, const SeedContext& ctx, const std::string& name,
                         const encoder::EncoderModel& backbone, const std::vector<train::TrainingExample>& examples,
                         train::TrainConfig tc, encoder::EncoderModel* model_out = nullptr,
                         encoder::DualPrompts* prompts_out = nullptr)
{
    const auto t = std::chrono::steady_clock::now();
    const auto& corpus = ctx.data.corpus;
    encoder::EncoderModel model = backbone;
    tc.seed = ctx.seed * 31 + 5;
    std::optional<encoder::DualPrompts> prompts;
    if (tc.mode == train::TrainMode::dpt) {
        prompts = encoder::DualPrompts::initialize(model.config(), name, ctx.seed * 31 + 6);
    }
    train::DualTrainer trainer(model, prompts ? &*prompts : nullptr, corpus, tc, &ctx.data.qrels);
    trainer.train(examples);
    model.set_trainable(false);
    if (prompts) {
        prompts->set_trainable(false);
    }
    const encoder::PromptSet* pp = prompts ? &prompts->for_passage() : nullptr;
    auto ix = index::encode_corpus(corpus, model, pp);
    auto run = dense_run(model, prompts ? &*prompts : nullptr, ix, ctx.data.test_queries, cfg.eval_depth);
    ArmResult a;
    a.name = name;
    a.report = index::evaluate(run, ctx.data.qrels, 10, {5, 20, 100});
    a.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    if (model_out != nullptr) {
        *model_out = std::move(model);
    }
    if (prompts_out != nullptr && prompts) {
        *prompts_out = std::move(*prompts);
    }
    return a;
}

/// Generates the data, pretrains the vanilla and RIP backbones, mines the
/// BM25 examples, trains the first-round retriever (dpt_rip_bm25) and mines
/// the multi-retriever and UNM examples with it.
inline SeedContext prepare_seed(const BenchmarkConfig& cfg, std::uint64_t seed, SeedResult& res,
                                const Progress& progress = {})
{
    using clock = std::chrono::steady_clock;
    auto say = [&](const std::string& s) {
        if (progress) {
            progress(s);
        }
    };
    SeedContext ctx;
    ctx.seed = seed;
    res.seed = seed;

    auto dcfg = cfg.data;
    dcfg.seed = seed;
    ctx.data = synth::generate(dcfg);
    const auto& data = ctx.data;
    const auto& corpus = data.corpus;

    auto vocab = text::Vocabulary::build(corpus.texts());
    auto base = encoder::EncoderModel::initialize(cfg.encoder, vocab, seed * 7919 + 1, cfg.init_std);

    auto t0 = clock::now();
    auto units = pretrain::prepare_units(corpus, cfg.vanilla.units, seed);
    auto vcfg = cfg.vanilla;
    vcfg.seed = seed * 31 + 2;
    ctx.vanilla = base;
    res.vanilla_log = pretrain::RipPretrainer(ctx.vanilla, nullptr, units, vcfg).run();
    ctx.vanilla.set_trainable(false);
    auto rcfg = cfg.rip;
    rcfg.seed = seed * 31 + 3;
    ctx.ripped = ctx.vanilla;
    res.rip_log = pretrain::RipPretrainer(ctx.ripped, nullptr, units, rcfg).run();
    ctx.ripped.set_trainable(false);
    say("pretraining " + std::to_string(std::chrono::duration<double>(clock::now() - t0).count()) + "s");

    const auto bm25 = mining::Bm25Index::build(corpus);
    res.bm25_mrr = index::mrr_at_k(bm25_run(bm25, data.test_queries, 10), data.qrels, 10);

    auto mcfg = cfg.mining;
    mcfg.seed = seed * 31 + 4;
    std::vector<std::vector<mining::RetrieverRun>> bm25_only;
    for (const auto& q : data.train_queries.records()) {
        bm25_only.push_back({{"bm25", bm25.search(q.text, mcfg.top_n)}});
    }
    ctx.bm25_examples = mine_examples(corpus, data.train_queries, data.qrels, bm25_only, mcfg, false);

    encoder::EncoderModel first_model;
    encoder::DualPrompts first_prompts;
    ctx.first_round = run_arm(cfg, ctx, "dpt_rip_bm25", ctx.ripped, ctx.bm25_examples, cfg.dpt, &first_model,
                              &first_prompts);
    say("dpt_rip_bm25 mrr@10=" + std::to_string(ctx.first_round->report.mrr));

    auto first_index = index::encode_corpus(corpus, first_model, &first_prompts.for_passage());
    mining::DenseRetriever first(first_model, &first_prompts, first_index);
    std::vector<std::vector<mining::RetrieverRun>> both;
    for (const auto& q : data.train_queries.records()) {
        both.push_back({{"bm25", bm25.search(q.text, mcfg.top_n)}, {"dense", first.search(q.text, mcfg.top_n)}});
    }
    ctx.multi_examples = mine_examples(corpus, data.train_queries, data.qrels, both, mcfg, false);
    ctx.unm_examples = mine_examples(corpus, data.train_queries, data.qrels, both, mcfg, true);
    return ctx;
}

/// Arm names: dpt_vanilla_bm25, ft_vanilla_bm25, dpt_rip_bm25, dpt_rip_multi
/// (bm25 + dense candidates, no denoising), dpt_rip_unm, ft_rip_unm.
/// dpt_rip_bm25 is also the first-round dense retriever whose rankings feed
/// the mined negatives.
inline SeedResult run_benchmark_seed(const BenchmarkConfig& cfg, std::uint64_t seed, const Progress& progress = {},
                                     SeedContext* ctx_out = nullptr)
{
    SeedResult res;
    auto ctx = prepare_seed(cfg, seed, res, progress);
    res.arms["dpt_rip_bm25"] = *ctx.first_round;
    auto arm = [&](const std::string& name, const encoder::EncoderModel& backbone,
                   const std::vector<train::TrainingExample>& examples, const train::TrainConfig& tc) {
        auto a = run_arm(cfg, ctx, name, backbone, examples, tc);
        if (progress) {
            progress(name + " mrr@10=" + std::to_string(a.report.mrr) + " (" + std::to_string(a.seconds) + "s)");
        }
        res.arms[name] = std::move(a);
    };
    arm("dpt_vanilla_bm25", ctx.vanilla, ctx.bm25_examples, cfg.dpt);
    arm("ft_vanilla_bm25", ctx.vanilla, ctx.bm25_examples, cfg.ft);
    arm("dpt_rip_multi", ctx.ripped, ctx.multi_examples, cfg.dpt);
    arm("dpt_rip_unm", ctx.ripped, ctx.unm_examples, cfg.dpt);
    arm("ft_rip_unm", ctx.ripped, ctx.unm_examples, cfg.ft);
    if (ctx_out != nullptr) {
        *ctx_out = std::move(ctx);
    }
    return res;
}

}  // namespace dptdr::pipeline
