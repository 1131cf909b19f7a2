#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/index/vector_index.hpp"

namespace dptdr::index {

namespace detail {

inline const std::set<std::string>& relevant_for(const io::Qrels& qrels, const RetrievalResult& r)
{
    if (!qrels.has_query(r.query_id)) {
        throw ValidationError("eval: query '" + r.query_id + "' missing from qrels");
    }
    return qrels.relevant(r.query_id);
}

}  // namespace detail

/// 1/rank of the first relevant hit within the top k, else 0.
inline double reciprocal_rank(const RetrievalResult& r, const io::Qrels& qrels, std::size_t k)
{
    const auto& rel = detail::relevant_for(qrels, r);
    const std::size_t n = std::min(k, r.hits.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (rel.count(r.hits[i].passage_id) != 0) {
            return 1.0 / static_cast<double>(i + 1);
        }
    }
    return 0.0;
}

/// |relevant in top k| / |relevant|.
inline double recall(const RetrievalResult& r, const io::Qrels& qrels, std::size_t k)
{
    const auto& rel = detail::relevant_for(qrels, r);
    const std::size_t n = std::min(k, r.hits.size());
    std::size_t found = 0;
    for (std::size_t i = 0; i < n; ++i) {
        found += rel.count(r.hits[i].passage_id);
    }
    return static_cast<double>(found) / static_cast<double>(rel.size());
}

inline double mrr_at_k(std::span<const RetrievalResult> results, const io::Qrels& qrels, std::size_t k = 10,
                       std::vector<double>* per_query = nullptr)
{
    if (results.empty()) {
        throw ValidationError("eval: no results");
    }
    double total = 0.0;
    for (const auto& r : results) {
        const double rr = reciprocal_rank(r, qrels, k);
        if (per_query != nullptr) {
            per_query->push_back(rr);
        }
        total += rr;
    }
    return total / static_cast<double>(results.size());
}

inline double recall_at_k(std::span<const RetrievalResult> results, const io::Qrels& qrels, std::size_t k)
{
    if (results.empty()) {
        throw ValidationError("eval: no results");
    }
    double total = 0.0;
    for (const auto& r : results) {
        total += recall(r, qrels, k);
    }
    return total / static_cast<double>(results.size());
}

struct EvalReport {
    std::size_t query_count = 0;
    std::size_t mrr_cutoff = 10;
    double mrr = 0.0;
    std::map<std::size_t, double> recall;
    std::map<std::string, double> reciprocal_ranks;
};

inline EvalReport evaluate(std::span<const RetrievalResult> results, const io::Qrels& qrels,
                           std::size_t mrr_cutoff = 10, const std::vector<std::size_t>& recall_cuts = {5, 20, 100, 1000})
{
    EvalReport rep;
    rep.query_count = results.size();
    rep.mrr_cutoff = mrr_cutoff;
    std::vector<double> rr;
    rep.mrr = mrr_at_k(results, qrels, mrr_cutoff, &rr);
    for (std::size_t i = 0; i < results.size(); ++i) {
        rep.reciprocal_ranks[results[i].query_id] = rr[i];
    }
    for (auto k : recall_cuts) {
        rep.recall[k] = recall_at_k(results, qrels, k);
    }
    return rep;
}

inline nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json j;
    j["query_count"] = r.query_count;
    j["mrr@" + std::to_string(r.mrr_cutoff)] = r.mrr;
    for (const auto& [k, v] : r.recall) {
        j["recall@" + std::to_string(k)] = v;
    }
    j["reciprocal_ranks"] = r.reciprocal_ranks;
    return j;
}

}  // namespace dptdr::index
