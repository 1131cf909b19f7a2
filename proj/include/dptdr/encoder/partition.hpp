#pragma once

#include <cstddef>

#include "dptdr/encoder/model.hpp"
#include "dptdr/encoder/prompts.hpp"

namespace dptdr::encoder {

struct ParamPartition {
    std::size_t frozen_count = 0;
    std::size_t trainable_count = 0;

    double ratio() const
    {
        const std::size_t total = frozen_count + trainable_count;
        return total == 0 ? 0.0 : static_cast<double>(trainable_count) / static_cast<double>(total);
    }
};

/// Deep prompt tuning split: every backbone array frozen, every prompt
/// parameter trainable. Counts come from enumerating the arrays.
inline ParamPartition param_partition(const EncoderModel& model, const DualPrompts& prompts)
{
    return {model.parameter_count(), prompts.parameter_count()};
}

inline ParamPartition param_partition(const EncoderModel& model, const PromptSet& prompts)
{
    return {model.parameter_count(), prompts.parameter_count()};
}

/// Closed-form prompt parameter count for a config.
inline std::size_t prompt_parameter_count(const EncoderConfig& c)
{
    const std::size_t l = c.prompt_length, d = c.hidden_size, L = c.num_layers;
    if (c.reparam_mode == ReparamMode::direct_embedding) {
        return L * l * d;
    }
    const std::size_t h = c.mlp_hidden;
    return l * d + (d * h + h) + (h * L * d + L * d);
}

/// Partition computed from dimensions alone, for configs too large to
/// instantiate.
inline ParamPartition param_partition(const EncoderConfig& c)
{
    const std::size_t sides = c.separate_prompts ? 2 : 1;
    return {backbone_parameter_count(c), sides * prompt_parameter_count(c)};
}

}  // namespace dptdr::encoder
