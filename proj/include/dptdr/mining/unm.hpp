#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/mining/bm25.hpp"
#include "dptdr/text/tokenizer.hpp"
#include "dptdr/train/dual_trainer.hpp"

namespace dptdr::mining {

using json = nlohmann::json;

/// Relevance estimate in [0, 1]; higher means more likely relevant.
class DenoiseScorer {
  public:
    virtual ~DenoiseScorer() = default;
    virtual double score(const std::string& query, const std::string& passage) const = 0;
};

/// |q ∩ p| / |q| over the distinct non-punctuation tokens of the query.
class LexicalOverlapScorer final : public DenoiseScorer {
  public:
    double score(const std::string& query, const std::string& passage) const override
    {
        std::set<std::string> q, p;
        for (auto& t : text::tokenize(query)) {
            if (!text::is_punct_token(t)) {
                q.insert(std::move(t));
            }
        }
        if (q.empty()) {
            return 0.0;
        }
        for (auto& t : text::tokenize(passage)) {
            p.insert(std::move(t));
        }
        std::size_t hit = 0;
        for (const auto& t : q) {
            hit += p.count(t);
        }
        return static_cast<double>(hit) / static_cast<double>(q.size());
    }
};

class ConstantScorer final : public DenoiseScorer {
  public:
    explicit ConstantScorer(double v) : m_value(v) {}
    double score(const std::string&, const std::string&) const override { return m_value; }

  private:
    double m_value;
};

/// Ranked candidates from one retriever.
struct RetrieverRun {
    std::string tag;  // bm25 | dense | ...
    std::vector<ScoredPassage> ranked;
};

struct PoolCandidate {
    std::string passage_id;
    std::size_t best_rank = 0;  // 1-based, over all retrievers
    std::vector<std::string> tags;
};

struct NegativePool {
    std::string query_id;
    std::map<std::string, std::vector<ScoredPassage>> per_retriever;
    std::size_t merged_size = 0;
    std::vector<PoolCandidate> undenoised;  // the uniform sample from the merged pool
    std::vector<PoolCandidate> denoised;    // members of `undenoised` the scorer passed
    std::vector<std::string> scorer_failures;
};

inline json to_json(const NegativePool& p)
{
    auto cands = [](const std::vector<PoolCandidate>& v) {
        json a = json::array();
        for (const auto& c : v) {
            a.push_back({{"pid", c.passage_id}, {"best_rank", c.best_rank}, {"tags", c.tags}});
        }
        return a;
    };
    json runs = json::object();
    for (const auto& [tag, ranked] : p.per_retriever) {
        json a = json::array();
        for (const auto& h : ranked) {
            a.push_back({h.passage_id, h.score});
        }
        runs[tag] = a;
    }
    return {{"qid", p.query_id},           {"retrievers", runs},
            {"merged_size", p.merged_size}, {"undenoised", cands(p.undenoised)},
            {"denoised", cands(p.denoised)}, {"scorer_failures", p.scorer_failures}};
}

inline NegativePool pool_from_json(const json& j)
{
    auto cands = [](const json& a) {
        std::vector<PoolCandidate> v;
        for (const auto& c : a) {
            v.push_back({c.at("pid").get<std::string>(), c.at("best_rank").get<std::size_t>(),
                         c.at("tags").get<std::vector<std::string>>()});
        }
        return v;
    };
    NegativePool p;
    try {
        p.query_id = j.at("qid").get<std::string>();
        for (const auto& [tag, ranked] : j.at("retrievers").items()) {
            auto& out = p.per_retriever[tag];
            for (const auto& h : ranked) {
                out.push_back({h.at(0).get<std::string>(), h.at(1).get<double>()});
            }
        }
        p.merged_size = j.at("merged_size").get<std::size_t>();
        p.undenoised = cands(j.at("undenoised"));
        p.denoised = cands(j.at("denoised"));
        p.scorer_failures = j.at("scorer_failures").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("negative pool: ") + e.what());
    }
    return p;
}

/// Takes each retriever's top `top_n`, drops the query's positives, merges
/// keeping the best rank and every provenance tag, then samples
/// `sample_size` candidates uniformly without replacement.
inline NegativePool mine(const std::string& query_id, const std::set<std::string>& positives,
                         std::span<const RetrieverRun> runs, std::size_t top_n, std::size_t sample_size,
                         std::mt19937_64& rng)
{
    if (runs.empty()) {
        throw ValidationError("mine: at least one retriever is required");
    }
    NegativePool pool;
    pool.query_id = query_id;
    std::vector<PoolCandidate> merged;
    std::unordered_map<std::string, std::size_t> where;
    for (const auto& run : runs) {
        const std::size_t n = std::min(top_n, run.ranked.size());
        auto& kept = pool.per_retriever[run.tag];
        for (std::size_t r = 0; r < n; ++r) {
            const auto& pid = run.ranked[r].passage_id;
            if (positives.count(pid) != 0) {
                continue;
            }
            kept.push_back(run.ranked[r]);
            auto [it, fresh] = where.emplace(pid, merged.size());
            if (fresh) {
                merged.push_back({pid, r + 1, {run.tag}});
                continue;
            }
            auto& c = merged[it->second];
            c.best_rank = std::min(c.best_rank, r + 1);
            if (std::find(c.tags.begin(), c.tags.end(), run.tag) == c.tags.end()) {
                c.tags.push_back(run.tag);
            }
        }
    }
    pool.merged_size = merged.size();
    const std::size_t take = std::min(sample_size, merged.size());
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, merged.size() - 1);
        std::swap(merged[i], merged[pick(rng)]);
    }
    merged.resize(take);
    pool.undenoised = std::move(merged);
    return pool;
}

/// denoised = sampled candidates whose scorer value is below `threshold`.
/// A scorer failure drops that candidate and is recorded.
inline void denoise(NegativePool& pool, const std::string& query_text,
                    const std::function<const std::string&(const std::string&)>& passage_text,
                    const DenoiseScorer& scorer, double threshold = 0.1)
{
    pool.denoised.clear();
    pool.scorer_failures.clear();
    for (const auto& c : pool.undenoised) {
        double s = 0.0;
        try {
            s = scorer.score(query_text, passage_text(c.passage_id));
        } catch (const std::exception& e) {
            pool.scorer_failures.push_back(c.passage_id + ": " + e.what());
            continue;
        }
        if (s < threshold) {
            pool.denoised.push_back(c);
        }
    }
}

struct MixConfig {
    std::size_t denoised = 4;
    std::size_t undenoised = 4;
};

/// `denoised` negatives from the denoised part, then undenoised ones until
/// the total reaches denoised + undenoised (short denoised parts are
/// backfilled). Positives are never emitted.
inline train::TrainingExample assemble(const std::string& query_id, const std::string& query_text,
                                       const std::string& positive, const std::set<std::string>& positives,
                                       const NegativePool& pool, const MixConfig& mix)
{
    train::TrainingExample ex{query_id, query_text, positive, {}, {}};
    std::unordered_set<std::string> used;
    auto take = [&](const PoolCandidate& c, const std::string& tag) {
        if (positives.count(c.passage_id) != 0 || c.passage_id == positive || !used.insert(c.passage_id).second) {
            return false;
        }
        ex.neg_pids.push_back(c.passage_id);
        ex.neg_tags.push_back(tag);
        return true;
    };
    std::size_t got = 0;
    for (const auto& c : pool.denoised) {
        if (got == mix.denoised) {
            break;
        }
        got += take(c, "denoised") ? 1 : 0;
    }
    const std::size_t total = mix.denoised + mix.undenoised;
    for (const auto& c : pool.undenoised) {
        if (ex.neg_pids.size() == total) {
            break;
        }
        take(c, c.tags.empty() ? "bm25" : c.tags.front());
    }
    return ex;
}

}  // namespace dptdr::mining
