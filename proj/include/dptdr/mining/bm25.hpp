#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dptdr/io/dataset.hpp"
#include "dptdr/text/tokenizer.hpp"

namespace dptdr::mining {

struct ScoredPassage {
    std::string passage_id;
    double score = 0.0;
};

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Okapi BM25 over the raw token stream of the encoder tokenizer.
class Bm25Index {
  public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    /// Documents are numbered in ascending passage-id order, so postings and
    /// the score tie rule both follow passage ids.
    static Bm25Index build(const io::Corpus& corpus, Bm25Params params = {})
    {
        if (corpus.empty()) {
            throw ValidationError("bm25: empty corpus");
        }
        Bm25Index ix;
        ix.m_params = params;
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return corpus[a].id < corpus[b].id; });
        double total = 0.0;
        for (std::size_t doc = 0; doc < order.size(); ++doc) {
            const auto& rec = corpus[order[doc]];
            ix.m_ids.push_back(rec.id);
            auto toks = text::tokenize(rec.text);
            ix.m_lengths.push_back(static_cast<std::uint32_t>(toks.size()));
            total += static_cast<double>(toks.size());
            std::map<std::string, std::uint32_t> tf;
            for (auto& t : toks) {
                ++tf[t];
            }
            for (auto& [term, n] : tf) {
                ix.m_postings[term].push_back({static_cast<std::uint32_t>(doc), n});
            }
        }
        ix.m_avg_length = total / static_cast<double>(order.size());
        return ix;
    }

    std::size_t document_count() const noexcept { return m_ids.size(); }
    double average_length() const noexcept { return m_avg_length; }
    const Bm25Params& params() const noexcept { return m_params; }
    const std::vector<std::string>& passage_ids() const noexcept { return m_ids; }
    const std::vector<std::uint32_t>& lengths() const noexcept { return m_lengths; }

    std::size_t document_frequency(const std::string& term) const
    {
        auto it = m_postings.find(term);
        return it == m_postings.end() ? 0 : it->second.size();
    }

    const std::vector<Posting>* postings(const std::string& term) const
    {
        auto it = m_postings.find(term);
        return it == m_postings.end() ? nullptr : &it->second;
    }

    /// ln((N - df + 0.5) / (df + 0.5) + 1), never negative.
    double idf(std::size_t df) const
    {
        const double n = static_cast<double>(m_ids.size());
        const double d = static_cast<double>(df);
        return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
    }

    /// Top-k by score, ties by ascending passage id. Each distinct query term
    /// counts once; passages sharing no term with the query are not returned.
    std::vector<ScoredPassage> search(const std::string& query, std::size_t k) const
    {
        if (k == 0) {
            throw ValidationError("bm25: k must be positive");
        }
        std::unordered_map<std::uint32_t, double> acc;
        std::unordered_set<std::string> seen;
        for (const auto& term : text::tokenize(query)) {
            if (!seen.insert(term).second) {
                continue;
            }
            const auto* plist = postings(term);
            if (plist == nullptr) {
                continue;
            }
            const double w = idf(plist->size());
            for (const auto& p : *plist) {
                const double tf = p.tf;
                const double norm = m_params.k1 * (1.0 - m_params.b + m_params.b * m_lengths[p.doc] / m_avg_length);
                acc[p.doc] += w * tf * (m_params.k1 + 1.0) / (tf + norm);
            }
        }
        std::vector<std::pair<std::uint32_t, double>> hits(acc.begin(), acc.end());
        auto better = [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        };
        const std::size_t top = std::min(k, hits.size());
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top), hits.end(), better);
        std::vector<ScoredPassage> out;
        out.reserve(top);
        for (std::size_t i = 0; i < top; ++i) {
            out.push_back({m_ids[hits[i].first], hits[i].second});
        }
        return out;
    }

  private:
    Bm25Params m_params;
    std::vector<std::string> m_ids;
    std::vector<std::uint32_t> m_lengths;
    double m_avg_length = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> m_postings;
};

}  // namespace dptdr::mining
