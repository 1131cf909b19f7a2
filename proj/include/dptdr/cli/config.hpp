#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/pipeline/benchmark.hpp"

namespace dptdr::cli {

using json = nlohmann::json;

/// Every config key with its default. A user file may only set keys that
/// appear here, with a value of the same JSON kind.
inline json default_config()
{
    const auto b = pipeline::default_benchmark();
    const auto& e = b.encoder;
    const auto& v = b.vanilla;
    const auto& d = b.data;
    return {
        {"seed", std::uint64_t{1}},
        {"synth",
         {{"num_topics", d.num_topics},
          {"passages_per_topic", d.passages_per_topic},
          {"min_sentences", d.min_sentences},
          {"max_sentences", d.max_sentences},
          {"min_sentence_words", d.min_sentence_words},
          {"max_sentence_words", d.max_sentence_words},
          {"topic_vocab_size", d.topic_vocab_size},
          {"background_vocab_size", d.background_vocab_size},
          {"detail_vocab_size", d.detail_vocab_size},
          {"details_per_passage", d.details_per_passage},
          {"overlap", d.overlap},
          {"topic_word_rate", d.topic_word_rate},
          {"detail_word_rate", d.detail_word_rate},
          {"train_queries_per_topic", d.train_queries_per_topic},
          {"test_queries_per_topic", d.test_queries_per_topic}}},
        {"encoder",
         {{"num_layers", e.num_layers},
          {"hidden_size", e.hidden_size},
          {"num_heads", e.num_heads},
          {"ffn_size", e.ffn_size},
          {"max_seq_len", e.max_seq_len},
          {"prompt_length", e.prompt_length},
          {"reparam_mode", encoder::to_string(e.reparam_mode)},
          {"mlp_hidden", e.mlp_hidden},
          {"separate_prompts", e.separate_prompts},
          {"init_std", b.init_std},
          {"prompt_init_std", 0.5},
          {"vocab_min_freq", 1U}}},
        {"pretrain",
         {{"mode", "backbone"},
          {"epochs", v.epochs},
          {"batch_size", v.batch_size},
          {"learning_rate", v.learning_rate},
          {"weight_decay", v.weight_decay},
          {"warmup_ratio", v.warmup_ratio},
          {"use_mlm", true},
          {"use_contrastive", true},
          {"units",
           {{"kind", "sentence"},
            {"min_sentence_words", v.units.min_sentence_words},
            {"span_min_tokens", v.units.span_min_tokens},
            {"span_max_tokens", v.units.span_max_tokens}}},
          {"masking",
           {{"rate", v.masking.rate},
            {"replace_with_mask", v.masking.replace_with_mask},
            {"replace_with_random", v.masking.replace_with_random}}}}},
        {"train",
         {{"mode", "dpt"},
          {"learning_rate", b.dpt.learning_rate},
          {"weight_decay", b.dpt.weight_decay},
          {"warmup_ratio", b.dpt.warmup_ratio},
          {"epochs", b.dpt.epochs},
          {"batch_size", b.dpt.batch_size},
          {"negatives_per_query", b.dpt.negatives_per_query},
          {"use_in_batch_negatives", b.dpt.use_in_batch_negatives}}},
        {"mining",
         {{"top_n", b.mining.top_n},
          {"sample_size", b.mining.sample_size},
          {"threshold", b.mining.threshold},
          {"denoised", b.mining.mix.denoised},
          {"undenoised", b.mining.mix.undenoised},
          {"denoise", true}}},
        {"eval", {{"depth", b.eval_depth}, {"mrr_cutoff", 10U}, {"recall_cuts", {5U, 20U, 100U, 1000U}}}},
        {"serve", {{"host", "127.0.0.1"}, {"port", 8080}}},
        {"ablate",
         {{"seeds", {1U, 2U, 3U}},
          {"vanilla_epochs", b.vanilla.epochs},
          {"rip_epochs", b.rip.epochs},
          {"ft_learning_rate", b.ft.learning_rate},
          {"ft_weight_decay", b.ft.weight_decay},
          {"prompt_lengths", {4U, 16U, 32U}},
          {"reparam_modes", {"direct_embedding", "mlp"}}}},
    };
}

namespace detail {

inline bool same_kind(const json& a, const json& b)
{
    if (a.is_number() && b.is_number()) {
        // integers may not silently become fractions
        return !(a.is_number_integer() && b.is_number_float());
    }
    return a.type() == b.type();
}

inline std::string kind_name(const json& v)
{
    if (v.is_number_integer()) {
        return "integer";
    }
    if (v.is_number_float()) {
        return "number";
    }
    return v.type_name();
}

inline void merge_into(json& base, const json& user, const std::string& path, std::vector<std::string>& errors)
{
    for (const auto& [k, v] : user.items()) {
        const std::string key = path.empty() ? k : path + "." + k;
        if (!base.contains(k)) {
            errors.push_back(key + ": unknown key");
            continue;
        }
        auto& slot = base[k];
        if (slot.is_object()) {
            if (!v.is_object()) {
                errors.push_back(key + ": expected an object");
            } else {
                merge_into(slot, v, key, errors);
            }
        } else if (!same_kind(slot, v)) {
            errors.push_back(key + ": expected " + kind_name(slot) + ", got " + kind_name(v));
        } else if (slot.is_number_unsigned() && v.is_number_integer() && v.get<std::int64_t>() < 0) {
            errors.push_back(key + ": must be non-negative");
        } else {
            slot = v;
        }
    }
}

inline void check_ranges(const json& c, std::vector<std::string>& errors)
{
    auto in = [&](const std::string& key, const std::vector<std::string>& allowed) {
        const auto ptr = json::json_pointer("/" + std::string(key).replace(key.find('.'), 1, "/"));
        const auto v = c.at(ptr).get<std::string>();
        if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
            errors.push_back(key + ": '" + v + "' is not one of the allowed values");
        }
    };
    in("encoder.reparam_mode", {"direct_embedding", "mlp"});
    in("pretrain.mode", {"backbone", "prompts"});
    in("train.mode", {"dpt", "ft"});
    if (c.at("pretrain").at("units").at("kind") != "sentence" && c.at("pretrain").at("units").at("kind") != "span") {
        errors.emplace_back("pretrain.units.kind: must be sentence or span");
    }
    for (const auto& m : c.at("ablate").at("reparam_modes")) {
        if (m != "direct_embedding" && m != "mlp") {
            errors.push_back("ablate.reparam_modes: unknown mode " + m.dump());
        }
    }
    for (const char* k : {"ablate.seeds", "ablate.prompt_lengths", "eval.recall_cuts"}) {
        const std::string key(k);
        const auto& a = c.at(json::json_pointer("/" + std::string(key).replace(key.find('.'), 1, "/")));
        for (const auto& x : a) {
            if (!x.is_number_unsigned()) {
                errors.push_back(key + ": entries must be non-negative integers");
                break;
            }
        }
    }
}

}  // namespace detail

/// Parses `a.b.c=value` where value is JSON when it parses, else a string.
inline void apply_override(json& user, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override '" + assignment + "' is not key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    json* node = &user;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null()) {
            throw ValidationError("override '" + key + "' descends into a non-object");
        }
        start = dot + 1;
    }
}

/// Merges the user document over the defaults. Throws one ValidationError
/// naming every violated key.
inline json resolve(const json& user)
{
    json c = default_config();
    std::vector<std::string> errors;
    if (!user.is_null()) {
        if (!user.is_object()) {
            throw ValidationError("config: top level must be an object");
        }
        detail::merge_into(c, user, "", errors);
    }
    if (errors.empty()) {
        detail::check_ranges(c, errors);
    }
    if (!errors.empty()) {
        std::string msg = "config has " + std::to_string(errors.size()) + " invalid key(s):";
        for (const auto& e : errors) {
            msg += "\n  " + e;
        }
        throw ValidationError(msg);
    }
    return c;
}

inline synth::SynthConfig synth_config(const json& c)
{
    const auto& s = c.at("synth");
    synth::SynthConfig o;
    o.num_topics = s.at("num_topics");
    o.passages_per_topic = s.at("passages_per_topic");
    o.min_sentences = s.at("min_sentences");
    o.max_sentences = s.at("max_sentences");
    o.min_sentence_words = s.at("min_sentence_words");
    o.max_sentence_words = s.at("max_sentence_words");
    o.topic_vocab_size = s.at("topic_vocab_size");
    o.background_vocab_size = s.at("background_vocab_size");
    o.detail_vocab_size = s.at("detail_vocab_size");
    o.details_per_passage = s.at("details_per_passage");
    o.overlap = s.at("overlap");
    o.topic_word_rate = s.at("topic_word_rate");
    o.detail_word_rate = s.at("detail_word_rate");
    o.train_queries_per_topic = s.at("train_queries_per_topic");
    o.test_queries_per_topic = s.at("test_queries_per_topic");
    o.seed = c.at("seed");
    return o;
}

inline encoder::EncoderConfig encoder_config(const json& c)
{
    const auto& e = c.at("encoder");
    encoder::EncoderConfig o;
    o.num_layers = e.at("num_layers");
    o.hidden_size = e.at("hidden_size");
    o.num_heads = e.at("num_heads");
    o.ffn_size = e.at("ffn_size");
    o.max_seq_len = e.at("max_seq_len");
    o.prompt_length = e.at("prompt_length");
    o.reparam_mode = encoder::parse_reparam_mode(e.at("reparam_mode"));
    o.mlp_hidden = e.at("mlp_hidden");
    o.separate_prompts = e.at("separate_prompts");
    return o;
}

inline pretrain::RipConfig rip_config(const json& c)
{
    const auto& p = c.at("pretrain");
    pretrain::RipConfig o;
    o.mode = pretrain::parse_pretrain_mode(p.at("mode"));
    o.epochs = p.at("epochs");
    o.batch_size = p.at("batch_size");
    o.learning_rate = p.at("learning_rate");
    o.weight_decay = p.at("weight_decay");
    o.warmup_ratio = p.at("warmup_ratio");
    o.use_mlm = p.at("use_mlm");
    o.use_contrastive = p.at("use_contrastive");
    const auto& u = p.at("units");
    o.units.kind = pretrain::parse_unit_kind(u.at("kind"));
    o.units.min_sentence_words = u.at("min_sentence_words");
    o.units.span_min_tokens = u.at("span_min_tokens");
    o.units.span_max_tokens = u.at("span_max_tokens");
    const auto& m = p.at("masking");
    o.masking.rate = m.at("rate");
    o.masking.replace_with_mask = m.at("replace_with_mask");
    o.masking.replace_with_random = m.at("replace_with_random");
    o.seed = c.at("seed");
    return o;
}

inline train::TrainConfig train_config(const json& c)
{
    const auto& t = c.at("train");
    train::TrainConfig o;
    o.mode = train::parse_train_mode(t.at("mode"));
    o.learning_rate = t.at("learning_rate");
    o.weight_decay = t.at("weight_decay");
    o.warmup_ratio = t.at("warmup_ratio");
    o.epochs = t.at("epochs");
    o.batch_size = t.at("batch_size");
    o.negatives_per_query = t.at("negatives_per_query");
    o.use_in_batch_negatives = t.at("use_in_batch_negatives");
    o.seed = c.at("seed");
    return o;
}

inline pipeline::MiningConfig mining_config(const json& c)
{
    const auto& m = c.at("mining");
    pipeline::MiningConfig o;
    o.top_n = m.at("top_n");
    o.sample_size = m.at("sample_size");
    o.threshold = m.at("threshold");
    o.mix.denoised = m.at("denoised");
    o.mix.undenoised = m.at("undenoised");
    o.seed = c.at("seed");
    return o;
}

/// The benchmark built from the resolved config: `pretrain` drives both
/// pretraining stages (MLM only for vanilla), `train` drives DPT and, with
/// the ablate learning rate and weight decay, FT.
inline pipeline::BenchmarkConfig benchmark_config(const json& c)
{
    pipeline::BenchmarkConfig b;
    b.data = synth_config(c);
    b.encoder = encoder_config(c);
    b.init_std = c.at("encoder").at("init_std");
    b.vanilla = rip_config(c);
    b.vanilla.mode = pretrain::PretrainMode::backbone;
    b.vanilla.use_contrastive = false;
    b.vanilla.epochs = c.at("ablate").at("vanilla_epochs");
    b.rip = b.vanilla;
    b.rip.use_contrastive = true;
    b.rip.epochs = c.at("ablate").at("rip_epochs");
    b.dpt = train_config(c);
    b.dpt.mode = train::TrainMode::dpt;
    b.ft = b.dpt;
    b.ft.mode = train::TrainMode::ft;
    b.ft.learning_rate = c.at("ablate").at("ft_learning_rate");
    b.ft.weight_decay = c.at("ablate").at("ft_weight_decay");
    b.mining = mining_config(c);
    b.eval_depth = c.at("eval").at("depth");
    return b;
}

}  // namespace dptdr::cli
