// dptdr: command-line driver for the retrieval pipeline.
//
// Every subcommand writes its outputs plus config.resolved.json into --out.
// Data is TSV, structured records are JSON-lines, checkpoints and indexes
// use their binary formats. Errors go to stderr as one JSON object.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dptdr/cli/config.hpp"
#include "dptdr/encoder/checkpoint.hpp"
#include "dptdr/encoder/partition.hpp"
#include "dptdr/index/quality.hpp"
#include "dptdr/serving/http.hpp"

namespace fs = std::filesystem;
using namespace dptdr;
using json = nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out = ".";
};

json load_config(const Common& c)
{
    json user = json::object();
    if (!c.config_path.empty()) {
        try {
            user = json::parse(io::read_file(c.config_path));
        } catch (const json::exception& e) {
            throw ValidationError("config: " + c.config_path + " is not valid JSON: " + e.what());
        }
    }
    for (const auto& o : c.overrides) {
        cli::apply_override(user, o);
    }
    return cli::resolve(user);
}

std::string out_path(const Common& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

json begin(const Common& c)
{
    json cfg = load_config(c);
    fs::create_directories(c.out);
    io::write_file(out_path(c, "config.resolved.json"), cfg.dump(2) + "\n");
    return cfg;
}

void add_common(CLI::App* app, Common& c)
{
    app->add_option("-c,--config", c.config_path, "JSON config file; unknown keys are rejected");
    app->add_option("--set", c.overrides, "Override a config value, e.g. --set train.epochs=3 (repeatable)");
    app->add_option("-o,--out", c.out, "Output directory")->capture_default_str();
}

template <class Range>
std::string jsonl(const Range& items)
{
    std::string out;
    for (const auto& it : items) {
        out += it.dump() + "\n";
    }
    return out;
}

std::vector<json> read_jsonl(const std::string& path)
{
    std::istringstream in(io::read_file(path));
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::optional<encoder::DualPrompts> maybe_prompts(const std::string& path)
{
    if (path.empty()) {
        return std::nullopt;
    }
    return encoder::load_prompts(path);
}

std::vector<index::RetrievalResult> retrieve(const std::function<std::vector<mining::ScoredPassage>(const std::string&)>& f,
                                             const io::Queries& queries)
{
    std::vector<index::RetrievalResult> out;
    for (const auto& q : queries.records()) {
        out.push_back({q.id, f(q.text)});
    }
    return out;
}

// --- synth ----------------------------------------------------------------

void cmd_synth(const Common& c)
{
    const auto cfg = begin(c);
    const auto d = synth::generate(cli::synth_config(cfg));
    io::write_file(out_path(c, "corpus.tsv"), d.corpus.to_tsv());
    io::write_file(out_path(c, "train_queries.tsv"), d.train_queries.to_tsv());
    io::write_file(out_path(c, "test_queries.tsv"), d.test_queries.to_tsv());
    io::write_file(out_path(c, "qrels.tsv"), d.qrels.to_tsv());
}

// --- pretrain ---------------------------------------------------------------

struct PretrainArgs {
    std::string corpus, checkpoint, prompts, task = "retrieval";
};

void cmd_pretrain(const Common& c, const PretrainArgs& a)
{
    const auto cfg = begin(c);
    const auto rc = cli::rip_config(cfg);
    const auto corpus = io::Corpus::load(a.corpus);
    const std::uint64_t seed = cfg.at("seed");
    encoder::EncoderModel model;
    if (!a.checkpoint.empty()) {
        model = encoder::load_checkpoint(a.checkpoint);
    } else {
        if (rc.mode == pretrain::PretrainMode::prompts_only) {
            throw ValidationError("pretrain: prompts mode needs --checkpoint");
        }
        auto vocab = text::Vocabulary::build(corpus.texts(), cfg.at("encoder").at("vocab_min_freq"));
        model = encoder::EncoderModel::initialize(cli::encoder_config(cfg), vocab, seed * 7919 + 1,
                                                  cfg.at("encoder").at("init_std"));
    }
    pretrain::SkipReport skipped;
    auto units = pretrain::prepare_units(corpus, rc.units, seed, &skipped);
    io::write_file(out_path(c, "skipped.json"), pretrain::to_json(skipped).dump(2) + "\n");
    std::vector<pretrain::PretrainStepReport> log;
    if (rc.mode == pretrain::PretrainMode::backbone) {
        log = pretrain::RipPretrainer(model, nullptr, std::move(units), rc).run();
        model.set_trainable(false);
        encoder::save_checkpoint(model, out_path(c, "model.ckpt"));
    } else {
        auto prompts = a.prompts.empty()
                           ? encoder::PromptSet::initialize(model.config(), a.task, seed * 31 + 6,
                                                            cfg.at("encoder").at("prompt_init_std"))
                           : encoder::load_prompts(a.prompts).query;
        log = pretrain::RipPretrainer(model, &prompts, std::move(units), rc).run();
        prompts.set_trainable(false);
        encoder::save_prompts(encoder::DualPrompts{prompts, std::nullopt}, out_path(c, "prompts.json"));
    }
    std::vector<json> rows;
    for (const auto& r : log) {
        rows.push_back(pretrain::to_json(r));
    }
    io::write_file(out_path(c, "pretrain_log.jsonl"), jsonl(rows));
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
    std::string checkpoint, corpus, examples, qrels, prompts, task = "retrieval";
};

void cmd_train(const Common& c, const TrainArgs& a)
{
    const auto cfg = begin(c);
    const auto tc = cli::train_config(cfg);
    auto model = encoder::load_checkpoint(a.checkpoint);
    const auto corpus = io::Corpus::load(a.corpus);
    const auto examples = train::read_examples(a.examples);
    std::optional<io::Qrels> qrels;
    if (!a.qrels.empty()) {
        qrels = io::Qrels::load(a.qrels);
    }
    std::optional<encoder::DualPrompts> prompts = maybe_prompts(a.prompts);
    if (!prompts && tc.mode == train::TrainMode::dpt) {
        prompts = encoder::DualPrompts::initialize(model.config(), a.task, tc.seed * 31 + 6,
                                                   cfg.at("encoder").at("prompt_init_std"));
    }
    train::DualTrainer trainer(model, prompts ? &*prompts : nullptr, corpus, tc, qrels ? &*qrels : nullptr);
    const auto log = tc.epochs == 0 ? std::vector<train::TrainStepReport>{} : trainer.train(examples);
    io::write_file(out_path(c, "train_log.jsonl"), train::reports_to_jsonl(log));
    if (prompts) {
        prompts->set_trainable(false);
        encoder::save_prompts(*prompts, out_path(c, "prompts.json"));
    }
    if (tc.mode == train::TrainMode::ft) {
        model.set_trainable(false);
        encoder::save_checkpoint(model, out_path(c, "model.ckpt"));
    }
}

// --- mine -----------------------------------------------------------------

struct MineArgs {
    std::string corpus, queries, qrels, checkpoint, prompts, index, pools;
    std::vector<std::string> runs;  // tag=path
};

std::map<std::string, std::vector<index::RetrievalResult>> load_runs(const std::vector<std::string>& specs)
{
    std::map<std::string, std::vector<index::RetrievalResult>> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ValidationError("mine: --run expects tag=path, got '" + s + "'");
        }
        out[s.substr(0, eq)] = index::read_run(s.substr(eq + 1));
    }
    return out;
}

void cmd_mine(const Common& c, const std::string& stage, const MineArgs& a)
{
    const auto cfg = begin(c);
    const auto mc = cli::mining_config(cfg);
    const auto queries = io::Queries::load(a.queries);
    if (stage == "bm25") {
        const auto bm25 = mining::Bm25Index::build(io::Corpus::load(a.corpus));
        const auto run = retrieve([&](const std::string& q) { return bm25.search(q, mc.top_n); }, queries);
        io::write_file(out_path(c, "run.tsv"), index::run_to_tsv(run));
    } else if (stage == "dense") {
        const auto model = encoder::load_checkpoint(a.checkpoint);
        const auto prompts = maybe_prompts(a.prompts);
        const auto ix = index::VectorIndex::load(a.index);
        mining::DenseRetriever r(model, prompts ? &*prompts : nullptr, ix);
        const auto run = retrieve([&](const std::string& q) { return r.search(q, mc.top_n); }, queries);
        io::write_file(out_path(c, "run.tsv"), index::run_to_tsv(run));
    } else if (stage == "denoise") {
        const auto corpus = io::Corpus::load(a.corpus);
        const auto qrels = io::Qrels::load(a.qrels);
        const auto runs = load_runs(a.runs);
        if (runs.empty()) {
            throw ValidationError("mine denoise: at least one --run is required");
        }
        std::map<std::string, std::map<std::string, std::vector<mining::ScoredPassage>>> by_query;
        for (const auto& [tag, results] : runs) {
            for (const auto& r : results) {
                by_query[r.query_id][tag] = r.hits;
            }
        }
        std::mt19937_64 rng(mc.seed);
        mining::LexicalOverlapScorer scorer;
        const bool denoise = cfg.at("mining").at("denoise");
        std::vector<json> rows;
        for (const auto& q : queries.records()) {
            std::vector<mining::RetrieverRun> rr;
            for (const auto& [tag, hits] : by_query[q.id]) {
                rr.push_back({tag, hits});
            }
            if (rr.empty()) {
                throw ValidationError("mine denoise: no run covers query '" + q.id + "'");
            }
            auto pool = mining::mine(q.id, qrels.relevant(q.id), rr, mc.top_n, mc.sample_size, rng);
            if (denoise) {
                mining::denoise(pool, q.text, [&](const std::string& pid) -> const std::string& { return corpus.text(pid); },
                                scorer, mc.threshold);
            }
            rows.push_back(mining::to_json(pool));
        }
        io::write_file(out_path(c, "pools.jsonl"), jsonl(rows));
    } else if (stage == "assemble") {
        const auto qrels = io::Qrels::load(a.qrels);
        std::vector<train::TrainingExample> out;
        for (const auto& row : read_jsonl(a.pools)) {
            const auto pool = mining::pool_from_json(row);
            const auto& pos = qrels.relevant(pool.query_id);
            const auto& text = queries.text(pool.query_id);
            for (const auto& p : pos) {
                out.push_back(mining::assemble(pool.query_id, text, p, pos, pool, mc.mix));
            }
        }
        io::write_file(out_path(c, "examples.jsonl"), train::examples_to_jsonl(out));
    } else {
        throw ValidationError("mine: unknown stage '" + stage + "'");
    }
}

// --- index / search / eval -------------------------------------------------

void cmd_index(const Common& c, const std::string& checkpoint, const std::string& prompts_path,
               const std::string& corpus_path)
{
    begin(c);
    const auto model = encoder::load_checkpoint(checkpoint);
    const auto prompts = maybe_prompts(prompts_path);
    const auto ix = index::encode_corpus(io::Corpus::load(corpus_path), model, prompts ? &prompts->for_passage() : nullptr);
    ix.save(out_path(c, "index.bin"));
}

struct SearchArgs {
    std::string retriever = "dense", checkpoint, prompts, index, corpus, queries;
};

void cmd_search(const Common& c, const SearchArgs& a)
{
    const auto cfg = begin(c);
    const std::size_t depth = cfg.at("eval").at("depth");
    const auto queries = io::Queries::load(a.queries);
    std::vector<index::RetrievalResult> run;
    if (a.retriever == "bm25") {
        const auto bm25 = mining::Bm25Index::build(io::Corpus::load(a.corpus));
        run = retrieve([&](const std::string& q) { return bm25.search(q, depth); }, queries);
    } else if (a.retriever == "dense") {
        const auto model = encoder::load_checkpoint(a.checkpoint);
        const auto prompts = maybe_prompts(a.prompts);
        const auto ix = index::VectorIndex::load(a.index);
        mining::DenseRetriever r(model, prompts ? &*prompts : nullptr, ix);
        run = retrieve([&](const std::string& q) { return r.search(q, depth); }, queries);
    } else {
        throw ValidationError("search: retriever must be bm25 or dense");
    }
    io::write_file(out_path(c, "run.tsv"), index::run_to_tsv(run));
}

void cmd_eval(const Common& c, const std::string& run_path, const std::string& qrels_path)
{
    const auto cfg = begin(c);
    const auto run = index::read_run(run_path);
    const auto report = index::evaluate(run, io::Qrels::load(qrels_path), cfg.at("eval").at("mrr_cutoff"),
                                        cfg.at("eval").at("recall_cuts").get<std::vector<std::size_t>>());
    const auto text = index::to_json(report).dump(2) + "\n";
    io::write_file(out_path(c, "metrics.json"), text);
    std::cout << text;
}

// --- encode / analyze / serve ------------------------------------------------

struct EncodeArgs {
    std::string checkpoint, prompts, input, role = "query", precision = "f32";
};

void cmd_encode(const Common& c, const EncodeArgs& a)
{
    begin(c);
    const auto model = encoder::load_checkpoint(a.checkpoint);
    const auto prompts = maybe_prompts(a.prompts);
    const auto role = serving::parse_role(a.role);
    const auto precision = serving::parse_precision(a.precision);
    const encoder::PromptSet* p = nullptr;
    if (prompts) {
        p = role == serving::Role::query ? &prompts->for_query() : &prompts->for_passage();
    }
    encoder::PrefixKV kv;
    if (p != nullptr) {
        kv = encoder::prefix_for(model, *p);
    }
    const auto input = io::TextCollection::load(a.input);
    std::string out;
    for (const auto& r : input.records()) {
        auto v = encoder::encode_with_prefix(model, p ? &kv : nullptr, model.vocab().encode(r.text, model.config().max_seq_len));
        out += "{\"id\":" + json(r.id).dump() + ",\"vector\":"
               + serving::render_vector({v.data().begin(), v.data().end()}, precision) + "}\n";
    }
    io::write_file(out_path(c, "vectors.jsonl"), out);
}

struct AnalyzeArgs {
    std::string checkpoint, prompts, corpus, queries, qrels;
    bool raw = false;
};

void cmd_analyze(const Common& c, const AnalyzeArgs& a)
{
    begin(c);
    const auto model = encoder::load_checkpoint(a.checkpoint);
    const auto prompts = maybe_prompts(a.prompts);
    const auto corpus = io::Corpus::load(a.corpus);
    const auto queries = io::Queries::load(a.queries);
    const auto qrels = io::Qrels::load(a.qrels);
    encoder::PrefixKV qkv, pkv;
    if (prompts) {
        qkv = encoder::prefix_for(model, prompts->for_query());
        pkv = encoder::prefix_for(model, prompts->for_passage());
    }
    auto enc = [&](const std::string& text, const encoder::PrefixKV& kv) {
        auto v = encoder::encode_with_prefix(model, prompts ? &kv : nullptr,
                                             model.vocab().encode(text, model.config().max_seq_len));
        return std::vector<double>(v.data().begin(), v.data().end());
    };
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (const auto& q : queries.records()) {
        for (const auto& pid : qrels.relevant(q.id)) {
            pairs.emplace_back(enc(q.text, qkv), enc(corpus.text(pid), pkv));
        }
    }
    const auto qual = index::alignment_uniformity(pairs, !a.raw);
    json j{{"l_align", qual.l_align},
           {"l_uniform", qual.l_uniform},
           {"pair_count", qual.pair_count},
           {"normalized", qual.normalized}};
    if (prompts) {
        const auto part = encoder::param_partition(model, prompts->for_query());
        j["trainable_ratio"] = part.ratio();
    }
    io::write_file(out_path(c, "quality.json"), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
}

void cmd_serve(const Common& c, const std::string& checkpoint, const std::vector<std::string>& preload)
{
    const auto cfg = begin(c);
    serving::EncoderService service(encoder::load_checkpoint(checkpoint));
    for (const auto& p : preload) {
        const auto id = service.register_prompts(json::parse(io::read_file(p)));
        std::cerr << "registered " << p << " as " << id << "\n";
    }
    serving::HttpServer server(service);
    const std::string host = cfg.at("serve").at("host");
    const int port = cfg.at("serve").at("port");
    std::cerr << "serving " << service.fingerprint() << " on " << host << ":" << port << "\n";
    server.run(host, port);
}

// --- ablate -----------------------------------------------------------------

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fixed4(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

struct ArmTable {
    // arm -> per-seed reports
    std::map<std::string, std::vector<index::EvalReport>> reports;

    json row(const std::string& arm) const
    {
        const auto& rs = reports.at(arm);
        std::vector<double> mrr;
        std::map<std::size_t, std::vector<double>> rec;
        for (const auto& r : rs) {
            mrr.push_back(r.mrr);
            for (const auto& [k, v] : r.recall) {
                rec[k].push_back(v);
            }
        }
        json j{{"arm", arm}, {"mrr_at_10", median(mrr)}, {"mrr_at_10_per_seed", mrr}};
        for (const auto& [k, v] : rec) {
            j["recall_at_" + std::to_string(k)] = median(v);
        }
        return j;
    }
};

std::string md_table(const std::vector<json>& rows, const std::vector<std::string>& label_keys)
{
    std::string out = "|";
    for (const auto& k : label_keys) {
        out += " " + k + " |";
    }
    out += " MRR@10 | R@5 | R@20 | R@100 |\n|";
    for (std::size_t i = 0; i < label_keys.size() + 4; ++i) {
        out += "---|";
    }
    out += "\n";
    for (const auto& r : rows) {
        out += "|";
        for (const auto& k : label_keys) {
            out += " " + (r.at(k).is_string() ? r.at(k).get<std::string>() : r.at(k).dump()) + " |";
        }
        for (const char* m : {"mrr_at_10", "recall_at_5", "recall_at_20", "recall_at_100"}) {
            out += " " + fixed4(r.at(m).get<double>()) + " |";
        }
        out += "\n";
    }
    return out;
}

void cmd_ablate(const Common& c)
{
    const auto cfg = begin(c);
    const auto bc = cli::benchmark_config(cfg);
    const auto seeds = cfg.at("ablate").at("seeds").get<std::vector<std::uint64_t>>();
    if (seeds.empty()) {
        throw ValidationError("ablate: ablate.seeds is empty");
    }
    const auto lengths = cfg.at("ablate").at("prompt_lengths").get<std::vector<std::size_t>>();
    const auto modes = cfg.at("ablate").at("reparam_modes").get<std::vector<std::string>>();
    ArmTable t;
    std::vector<double> bm25;
    auto progress = [](const std::string& s) { std::cerr << s << "\n"; };
    for (auto seed : seeds) {
        std::cerr << "seed " << seed << "\n";
        pipeline::SeedContext ctx;
        auto res = pipeline::run_benchmark_seed(bc, seed, progress, &ctx);
        bm25.push_back(res.bm25_mrr);
        for (const auto& [name, arm] : res.arms) {
            t.reports[name].push_back(arm.report);
        }
        auto sweep = [&](const std::string& name, std::size_t l, encoder::ReparamMode mode) {
            if (l == bc.encoder.prompt_length && mode == bc.encoder.reparam_mode) {
                t.reports[name].push_back(res.arms.at("dpt_rip_unm").report);
                return;
            }
            auto backbone = ctx.ripped;
            backbone.mutable_config().prompt_length = l;
            backbone.mutable_config().reparam_mode = mode;
            auto a = pipeline::run_arm(bc, ctx, name, backbone, ctx.unm_examples, bc.dpt);
            progress(name + " mrr@10=" + std::to_string(a.report.mrr));
            t.reports[name].push_back(a.report);
        };
        for (auto l : lengths) {
            sweep("dpt_rip_unm_l" + std::to_string(l), l, bc.encoder.reparam_mode);
        }
        for (const auto& m : modes) {
            sweep("dpt_rip_unm_" + m, bc.encoder.prompt_length, encoder::parse_reparam_mode(m));
        }
    }

    auto cell = [&](const std::string& method, bool with, const std::string& arm) {
        json r = t.row(arm);
        r["method"] = method;
        r["rip_unm"] = with ? "with" : "without";
        return r;
    };
    std::vector<json> grid{cell("FT", false, "ft_vanilla_bm25"), cell("DPT", false, "dpt_vanilla_bm25"),
                           cell("FT", true, "ft_rip_unm"), cell("DPT", true, "dpt_rip_unm")};
    const double gap_without = grid[0]["mrr_at_10"].get<double>() - grid[1]["mrr_at_10"].get<double>();
    const double gap_with = grid[2]["mrr_at_10"].get<double>() - grid[3]["mrr_at_10"].get<double>();
    std::vector<json> negatives;
    for (const auto& [label, arm] : std::vector<std::pair<std::string, std::string>>{
             {"bm25", "dpt_rip_bm25"}, {"bm25 + dense", "dpt_rip_multi"}, {"bm25 + dense, denoised", "dpt_rip_unm"}}) {
        json r = t.row(arm);
        r["negatives"] = label;
        negatives.push_back(r);
    }
    std::vector<json> by_length, by_mode;
    for (auto l : lengths) {
        json r = t.row("dpt_rip_unm_l" + std::to_string(l));
        r["prompt_length"] = l;
        by_length.push_back(r);
    }
    for (const auto& m : modes) {
        json r = t.row("dpt_rip_unm_" + m);
        r["reparam_mode"] = m;
        by_mode.push_back(r);
    }
    json out{{"seeds", seeds},
             {"bm25_mrr_at_10", median(bm25)},
             {"grid", grid},
             {"ft_minus_dpt_gap", {{"without", gap_without}, {"with", gap_with}, {"reduction", gap_without - gap_with}}},
             {"negatives", negatives},
             {"prompt_length", by_length},
             {"reparam", by_mode}};
    io::write_file(out_path(c, "ablation.json"), out.dump(2) + "\n");

    std::string md = "# Ablation (median over " + std::to_string(seeds.size()) + " seeds)\n\n";
    md += "BM25 MRR@10: " + fixed4(median(bm25)) + "\n\n## FT vs DPT, with and without RIP + UNM\n\n";
    md += md_table(grid, {"method", "rip_unm"});
    md += "\nFT - DPT gap: without " + fixed4(gap_without) + ", with " + fixed4(gap_with) + "\n";
    md += "\n## Negatives (DPT, RIP backbone)\n\n" + md_table(negatives, {"negatives"});
    md += "\n## Prompt length\n\n" + md_table(by_length, {"prompt_length"});
    md += "\n## Reparametrization\n\n" + md_table(by_mode, {"reparam_mode"});
    io::write_file(out_path(c, "ablation.md"), md);
    std::cout << md;
}

void print_error(const std::string& code, const std::string& message)
{
    std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deep-prompt-tuned dense retrieval toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic corpus, queries and qrels");
    add_common(synth_cmd, common);

    PretrainArgs pa;
    std::string pretrain_mode;
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Sentence-pair contrastive + MLM pretraining");
    add_common(pretrain_cmd, common);
    pretrain_cmd->add_option("mode", pretrain_mode, "backbone | prompts")->check(CLI::IsMember({"backbone", "prompts"}));
    pretrain_cmd->add_option("--corpus", pa.corpus, "Corpus TSV")->required();
    pretrain_cmd->add_option("--checkpoint", pa.checkpoint, "Starting backbone (required in prompts mode)");
    pretrain_cmd->add_option("--prompts", pa.prompts, "Starting prompts (prompts mode)");
    pretrain_cmd->add_option("--task", pa.task, "Task name for fresh prompts")->capture_default_str();

    TrainArgs ta;
    std::string train_mode;
    std::optional<std::size_t> train_epochs;
    auto* train_cmd = app.add_subcommand("train", "Supervised dual-encoder training");
    add_common(train_cmd, common);
    train_cmd->add_option("mode", train_mode, "dpt | ft")->check(CLI::IsMember({"dpt", "ft"}));
    train_cmd->add_option("--checkpoint", ta.checkpoint, "Backbone checkpoint")->required();
    train_cmd->add_option("--corpus", ta.corpus, "Corpus TSV")->required();
    train_cmd->add_option("--examples", ta.examples, "TrainingExample JSON-lines")->required();
    train_cmd->add_option("--qrels", ta.qrels, "Qrels TSV; masks known positives among in-batch negatives");
    train_cmd->add_option("--prompts", ta.prompts, "Initial prompts (default: fresh, seeded)");
    train_cmd->add_option("--task", ta.task, "Task name for fresh prompts")->capture_default_str();
    train_cmd->add_option("--epochs", train_epochs, "Shorthand for --set train.epochs=N");

    MineArgs ma;
    std::string mine_stage;
    auto* mine_cmd = app.add_subcommand("mine", "Negative mining: bm25 | dense | denoise | assemble");
    add_common(mine_cmd, common);
    mine_cmd->add_option("stage", mine_stage, "bm25 | dense | denoise | assemble")
        ->required()
        ->check(CLI::IsMember({"bm25", "dense", "denoise", "assemble"}));
    mine_cmd->add_option("--queries", ma.queries, "Queries TSV")->required();
    mine_cmd->add_option("--corpus", ma.corpus, "Corpus TSV (bm25, denoise)");
    mine_cmd->add_option("--qrels", ma.qrels, "Qrels TSV (denoise, assemble)");
    mine_cmd->add_option("--checkpoint", ma.checkpoint, "Backbone (dense)");
    mine_cmd->add_option("--prompts", ma.prompts, "Prompts (dense)");
    mine_cmd->add_option("--index", ma.index, "Vector index (dense)");
    mine_cmd->add_option("--run", ma.runs, "tag=run.tsv, one per retriever (denoise)");
    mine_cmd->add_option("--pools", ma.pools, "pools.jsonl (assemble)");

    std::string ix_ckpt, ix_prompts, ix_corpus;
    auto* index_cmd = app.add_subcommand("index", "Encode a corpus into an exact inner-product index");
    add_common(index_cmd, common);
    index_cmd->add_option("--checkpoint", ix_ckpt, "Backbone checkpoint")->required();
    index_cmd->add_option("--prompts", ix_prompts, "Prompts (passage side is used)");
    index_cmd->add_option("--corpus", ix_corpus, "Corpus TSV")->required();

    SearchArgs sa;
    auto* search_cmd = app.add_subcommand("search", "Retrieve the top eval.depth passages per query");
    add_common(search_cmd, common);
    search_cmd->add_option("--retriever", sa.retriever, "bm25 | dense")
        ->capture_default_str()
        ->check(CLI::IsMember({"bm25", "dense"}));
    search_cmd->add_option("--queries", sa.queries, "Queries TSV")->required();
    search_cmd->add_option("--corpus", sa.corpus, "Corpus TSV (bm25)");
    search_cmd->add_option("--checkpoint", sa.checkpoint, "Backbone (dense)");
    search_cmd->add_option("--prompts", sa.prompts, "Prompts (dense)");
    search_cmd->add_option("--index", sa.index, "Vector index (dense)");

    std::string ev_run, ev_qrels;
    auto* eval_cmd = app.add_subcommand("eval", "MRR@k and Recall@k of a run file");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--run", ev_run, "Run TSV")->required();
    eval_cmd->add_option("--qrels", ev_qrels, "Qrels TSV")->required();

    EncodeArgs ea;
    auto* encode_cmd = app.add_subcommand("encode", "Encode texts to vectors (JSON-lines)");
    add_common(encode_cmd, common);
    encode_cmd->add_option("--checkpoint", ea.checkpoint, "Backbone checkpoint")->required();
    encode_cmd->add_option("--prompts", ea.prompts, "Prompts file");
    encode_cmd->add_option("--input", ea.input, "id<TAB>text TSV")->required();
    encode_cmd->add_option("--role", ea.role, "query | passage")->capture_default_str();
    encode_cmd->add_option("--precision", ea.precision, "f32 | f64")->capture_default_str();

    AnalyzeArgs aa;
    auto* analyze_cmd = app.add_subcommand("analyze", "Alignment and uniformity of query/positive pairs");
    add_common(analyze_cmd, common);
    analyze_cmd->add_option("--checkpoint", aa.checkpoint, "Backbone checkpoint")->required();
    analyze_cmd->add_option("--prompts", aa.prompts, "Prompts file");
    analyze_cmd->add_option("--corpus", aa.corpus, "Corpus TSV")->required();
    analyze_cmd->add_option("--queries", aa.queries, "Queries TSV")->required();
    analyze_cmd->add_option("--qrels", aa.qrels, "Qrels TSV")->required();
    analyze_cmd->add_flag("--raw", aa.raw, "Skip L2 normalization");

    std::string sv_ckpt;
    std::vector<std::string> sv_prompts;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP encoding service over a frozen backbone");
    add_common(serve_cmd, common);
    serve_cmd->add_option("--checkpoint", sv_ckpt, "Backbone checkpoint")->required();
    serve_cmd->add_option("--prompts", sv_prompts, "Prompt files to register at startup");

    auto* ablate_cmd = app.add_subcommand("ablate", "FT/DPT x with/without RIP+UNM grid and prompt sweeps");
    add_common(ablate_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (!pretrain_mode.empty()) {
            common.overrides.insert(common.overrides.begin(), "pretrain.mode=\"" + pretrain_mode + "\"");
        }
        if (!train_mode.empty()) {
            common.overrides.insert(common.overrides.begin(), "train.mode=\"" + train_mode + "\"");
        }
        if (train_epochs) {
            common.overrides.push_back("train.epochs=" + std::to_string(*train_epochs));
        }
        if (*synth_cmd) {
            cmd_synth(common);
        } else if (*pretrain_cmd) {
            cmd_pretrain(common, pa);
        } else if (*train_cmd) {
            cmd_train(common, ta);
        } else if (*mine_cmd) {
            cmd_mine(common, mine_stage, ma);
        } else if (*index_cmd) {
            cmd_index(common, ix_ckpt, ix_prompts, ix_corpus);
        } else if (*search_cmd) {
            cmd_search(common, sa);
        } else if (*eval_cmd) {
            cmd_eval(common, ev_run, ev_qrels);
        } else if (*encode_cmd) {
            cmd_encode(common, ea);
        } else if (*analyze_cmd) {
            cmd_analyze(common, aa);
        } else if (*serve_cmd) {
            cmd_serve(common, sv_ckpt, sv_prompts);
        } else if (*ablate_cmd) {
            cmd_ablate(common);
        }
    } catch (const Error& e) {
        print_error(e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
    return 0;
}
