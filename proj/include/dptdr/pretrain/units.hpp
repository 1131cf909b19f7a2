#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/io/dataset.hpp"
#include "dptdr/text/tokenizer.hpp"

namespace dptdr::pretrain {

enum class UnitKind { sentence, span };

struct UnitConfig {
    UnitKind kind = UnitKind::sentence;
    std::size_t min_sentence_words = 3;
    std::size_t span_min_tokens = 8;
    std::size_t span_max_tokens = 16;

    void validate() const
    {
        if (kind == UnitKind::span && (span_min_tokens == 0 || span_min_tokens > span_max_tokens)) {
            throw ValidationError("units: span range [" + std::to_string(span_min_tokens) + ", "
                                  + std::to_string(span_max_tokens) + "] is invalid");
        }
    }
};

inline UnitKind parse_unit_kind(const std::string& s)
{
    if (s == "sentence") {
        return UnitKind::sentence;
    }
    if (s == "span") {
        return UnitKind::span;
    }
    throw ValidationError("unknown unit kind '" + s + "' (expected sentence or span)");
}

namespace detail {

inline std::size_t word_count(const std::string& s)
{
    std::size_t n = 0;
    for (const auto& t : text::tokenize(s)) {
        n += text::is_punct_token(t) ? 0 : 1;
    }
    return n;
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Sentences end at '.', '!' or '?' followed by whitespace or the end of the
/// text. Sentences under `min_words` words are merged into the next one (the
/// last into the previous).
inline std::vector<std::string> split_sentences(const std::string& text, std::size_t min_words = 3)
{
    std::vector<std::string> raw;
    std::string cur;
    for (std::size_t i = 0; i < text.size(); ++i) {
        cur.push_back(text[i]);
        const char c = text[i];
        const bool end = c == '.' || c == '!' || c == '?';
        if (end && (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\t')) {
            auto s = detail::trim(cur);
            if (!s.empty()) {
                raw.push_back(std::move(s));
            }
            cur.clear();
        }
    }
    if (auto s = detail::trim(cur); !s.empty()) {
        raw.push_back(std::move(s));
    }
    std::vector<std::string> out;
    std::string carry;
    for (auto& s : raw) {
        std::string joined = carry.empty() ? s : carry + " " + s;
        if (detail::word_count(joined) < min_words) {
            carry = std::move(joined);
        } else {
            out.push_back(std::move(joined));
            carry.clear();
        }
    }
    if (!carry.empty()) {
        if (out.empty()) {
            out.push_back(std::move(carry));
        } else {
            out.back() += " " + carry;
        }
    }
    return out;
}

/// Consecutive token windows with lengths drawn uniformly from the range; a
/// remainder shorter than the minimum is dropped.
inline std::vector<std::string> split_spans(const std::string& text, std::size_t min_tokens, std::size_t max_tokens,
                                            std::mt19937_64& rng)
{
    const auto toks = text::tokenize(text);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (toks.size() - pos >= min_tokens) {
        std::size_t len = std::uniform_int_distribution<std::size_t>(min_tokens, max_tokens)(rng);
        len = std::min(len, toks.size() - pos);
        if (len < min_tokens) {
            break;
        }
        std::string span;
        for (std::size_t i = pos; i < pos + len; ++i) {
            span += (span.empty() ? "" : " ") + toks[i];
        }
        out.push_back(std::move(span));
        pos += len;
    }
    return out;
}

inline std::vector<std::string> split_units(const std::string& text, const UnitConfig& cfg, std::mt19937_64& rng)
{
    cfg.validate();
    if (cfg.kind == UnitKind::sentence) {
        return split_sentences(text, cfg.min_sentence_words);
    }
    return split_spans(text, cfg.span_min_tokens, cfg.span_max_tokens, rng);
}

/// A passage with at least two units.
struct EligiblePassage {
    std::string passage_id;
    std::vector<std::string> units;
};

struct SkipReport {
    std::size_t skipped_passages = 0;
    std::map<std::string, std::size_t> reasons;
};

inline nlohmann::json to_json(const SkipReport& r)
{
    return {{"skipped_passages", r.skipped_passages}, {"reasons", r.reasons}};
}

inline std::vector<EligiblePassage> prepare_units(const io::Corpus& corpus, const UnitConfig& cfg, std::uint64_t seed,
                                                  SkipReport* report = nullptr)
{
    std::mt19937_64 rng(seed);
    std::vector<EligiblePassage> out;
    SkipReport local;
    for (const auto& rec : corpus.records()) {
        if (detail::trim(rec.text).empty()) {
            ++local.skipped_passages;
            ++local.reasons["empty_text"];
            continue;
        }
        auto units = split_units(rec.text, cfg, rng);
        if (units.size() < 2) {
            ++local.skipped_passages;
            ++local.reasons["fewer_than_two_units"];
            continue;
        }
        out.push_back({rec.id, std::move(units)});
    }
    if (report != nullptr) {
        *report = local;
    }
    return out;
}

struct UnitPair {
    std::string passage_id;
    std::string first;
    std::string second;
};

/// m distinct passages, and two distinct units of each, drawn uniformly.
inline std::vector<UnitPair> sample_batch(const std::vector<EligiblePassage>& pool, std::size_t m,
                                          std::mt19937_64& rng)
{
    if (m == 0) {
        throw ValidationError("pretrain: batch size must be positive");
    }
    if (pool.size() < m) {
        throw ValidationError("pretrain: " + std::to_string(pool.size()) + " eligible passages, batch needs "
                              + std::to_string(m));
    }
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    // Partial Fisher-Yates: the first m entries are a uniform sample.
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<UnitPair> out;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& p = pool[idx[i]];
        const std::size_t n = p.units.size();
        const std::size_t a = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        std::size_t b = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
        b += b >= a ? 1 : 0;
        out.push_back({p.passage_id, p.units[a], p.units[b]});
    }
    return out;
}

}  // namespace dptdr::pretrain
