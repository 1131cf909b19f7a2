#pragma once

#include <string>
#include <vector>

#include "dptdr/index/vector_index.hpp"

namespace dptdr::mining {

/// Query side of a dense retriever over a prebuilt index. Construction
/// rejects an index built by a different backbone or passage prompt set.
class DenseRetriever {
  public:
    DenseRetriever(const encoder::EncoderModel& model, const encoder::DualPrompts* prompts, const index::VectorIndex& ix)
        : m_model(model), m_index(ix)
    {
        const encoder::PromptSet* pp = prompts != nullptr ? &prompts->for_passage() : nullptr;
        const auto fp = index::retriever_fingerprint(model, pp);
        if (fp != ix.fingerprint()) {
            throw Error("fingerprint_mismatch",
                        "dense retriever: index built by encoder " + ix.fingerprint() + ", query encoder is " + fp);
        }
        if (prompts != nullptr) {
            m_prefix = encoder::prefix_for(model, prompts->for_query());
            m_has_prefix = true;
        }
    }

    std::vector<double> encode_query(const std::string& query) const
    {
        auto ids = m_model.vocab().encode(query, m_model.config().max_seq_len);
        auto v = encoder::encode_with_prefix(m_model, m_has_prefix ? &m_prefix : nullptr, ids);
        return {v.data().begin(), v.data().end()};
    }

    std::vector<ScoredPassage> search(const std::string& query, std::size_t k) const
    {
        return m_index.search(encode_query(query), k);
    }

  private:
    const encoder::EncoderModel& m_model;
    const index::VectorIndex& m_index;
    encoder::PrefixKV m_prefix;
    bool m_has_prefix = false;
};

inline std::vector<ScoredPassage> dense_candidates(const encoder::EncoderModel& model,
                                                   const encoder::DualPrompts* prompts,
                                                   const index::VectorIndex& ix, const std::string& query,
                                                   std::size_t k)
{
    return DenseRetriever(model, prompts, ix).search(query, k);
}

}  // namespace dptdr::mining
