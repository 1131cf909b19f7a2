#pragma once

#include <span>
#include <vector>

#include "dptdr/encoder/model.hpp"
#include "dptdr/encoder/prompts.hpp"

namespace dptdr::encoder {

/// Prefix key/value slots for a prompt set: realized matrices projected
/// through every layer's key and value maps.
inline PrefixKV prefix_for(const EncoderModel& model, const PromptSet& prompts)
{
    prompts.check_compatible(model.config());
    if (prompts.length() == 0) {
        return {};
    }
    return model.project_prefix(prompts.realize());
}

/// First-token representation (1 x d) of a [CLS]-led sequence, with the
/// prefix precomputed by the caller.
inline Tensor encode_with_prefix(const EncoderModel& model, const PrefixKV* prefix, std::span<const TokenId> ids)
{
    return ad::slice_rows(model.forward(ids, prefix), 0, 1);
}

/// First-token representation (1 x d). `prompts` may be null for plain
/// encoding.
inline Tensor encode(const EncoderModel& model, const PromptSet* prompts, std::span<const TokenId> ids)
{
    if (prompts == nullptr) {
        return encode_with_prefix(model, nullptr, ids);
    }
    PrefixKV kv = prefix_for(model, *prompts);
    return encode_with_prefix(model, &kv, ids);
}

inline std::vector<double> encode_vector(const EncoderModel& model, const PromptSet* prompts,
                                         std::span<const TokenId> ids)
{
    Tensor t = encode(model, prompts, ids);
    return {t.data().begin(), t.data().end()};
}

}  // namespace dptdr::encoder
