#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dptdr/encoder/encode.hpp"

namespace dptdr::encoder {

/// Corrupted input, the original token at every position, and the flags
/// selecting which positions the loss is computed on.
struct MaskedSequence {
    std::vector<TokenId> input;
    std::vector<TokenId> labels;
    std::vector<std::uint8_t> masked;

    std::size_t masked_count() const
    {
        std::size_t n = 0;
        for (auto m : masked) {
            n += m != 0 ? 1 : 0;
        }
        return n;
    }
};

struct MaskingConfig {
    double rate = 0.15;
    double replace_with_mask = 0.8;
    double replace_with_random = 0.1;
};

/// Selects `rate` of the non-special tokens (at least one when any exist);
/// of those 80% become [MASK], 10% a random word, 10% stay unchanged.
inline MaskedSequence mask_tokens(std::span<const TokenId> ids, std::size_t vocab_size, std::mt19937_64& rng,
                                  const MaskingConfig& cfg = {})
{
    MaskedSequence out{{ids.begin(), ids.end()}, {ids.begin(), ids.end()}, std::vector<std::uint8_t>(ids.size(), 0)};
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= text::kNumSpecials) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) {
        return out;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::size_t> chosen;
    for (auto i : candidates) {
        if (unif(rng) < cfg.rate) {
            chosen.push_back(i);
        }
    }
    if (chosen.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        chosen.push_back(candidates[pick(rng)]);
    }
    const bool has_words = vocab_size > text::kNumSpecials;
    std::uniform_int_distribution<TokenId> random_word(text::kNumSpecials, has_words ? vocab_size - 1 : text::kNumSpecials);
    for (auto i : chosen) {
        out.masked[i] = 1;
        const double r = unif(rng);
        if (r < cfg.replace_with_mask) {
            out.input[i] = text::kMask;
        } else if (r < cfg.replace_with_mask + cfg.replace_with_random && has_words) {
            out.input[i] = random_word(rng);
        }
    }
    return out;
}

namespace detail {

inline void masked_rows(const MaskedSequence& s, std::vector<std::size_t>& rows, std::vector<std::size_t>& targets)
{
    if (s.labels.size() != s.input.size() || s.masked.size() != s.input.size()) {
        throw ShapeError("mlm: input, labels and mask lengths differ");
    }
    for (std::size_t i = 0; i < s.masked.size(); ++i) {
        if (s.masked[i] != 0) {
            rows.push_back(i);
            targets.push_back(s.labels[i]);
        }
    }
}

}  // namespace detail

/// Mean cross-entropy over the masked positions of one sequence.
inline Tensor mlm_sequence_loss(const EncoderModel& model, const PrefixKV* prefix, const MaskedSequence& seq)
{
    std::vector<std::size_t> rows, targets;
    detail::masked_rows(seq, rows, targets);
    if (rows.empty()) {
        throw Error("no_masked_positions", "mlm: sequence has no masked positions");
    }
    Tensor hidden = model.forward(seq.input, prefix);
    return ad::cross_entropy_rows(model.mlm_logits(ad::gather_rows(hidden, rows)), targets);
}

/// Mean cross-entropy over every masked position in the batch.
inline Tensor mlm_loss(const EncoderModel& model, const PromptSet* prompts, std::span<const MaskedSequence> batch)
{
    PrefixKV kv;
    if (prompts != nullptr) {
        kv = prefix_for(model, *prompts);
    }
    std::vector<Tensor> picked;
    std::vector<std::size_t> all_targets;
    for (const auto& seq : batch) {
        std::vector<std::size_t> rows, targets;
        detail::masked_rows(seq, rows, targets);
        if (rows.empty()) {
            continue;
        }
        Tensor hidden = model.forward(seq.input, prompts != nullptr ? &kv : nullptr);
        picked.push_back(ad::gather_rows(hidden, rows));
        all_targets.insert(all_targets.end(), targets.begin(), targets.end());
    }
    if (picked.empty()) {
        throw Error("no_masked_positions", "mlm: batch has no masked positions");
    }
    return ad::cross_entropy_rows(model.mlm_logits(ad::concat_rows(picked)), all_targets);
}

}  // namespace dptdr::encoder
