#pragma once

#include <cstddef>
#include <string>

#include "dptdr/error.hpp"

namespace dptdr::encoder {

enum class ReparamMode { direct_embedding, mlp };

inline std::string to_string(ReparamMode m) { return m == ReparamMode::mlp ? "mlp" : "direct_embedding"; }

inline ReparamMode parse_reparam_mode(const std::string& s)
{
    if (s == "direct_embedding" || s == "embedding" || s == "direct") {
        return ReparamMode::direct_embedding;
    }
    if (s == "mlp") {
        return ReparamMode::mlp;
    }
    throw ValidationError("reparam_mode: unknown value '" + s + "' (expected direct_embedding or mlp)");
}

/// Backbone dimensions plus the prompt layout it accepts. Pooling is always
/// the first ([CLS]) position.
struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_size = 64;
    std::size_t num_heads = 4;
    std::size_t ffn_size = 128;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 64;
    std::size_t prompt_length = 16;  // 0 disables prompting
    ReparamMode reparam_mode = ReparamMode::direct_embedding;
    std::size_t mlp_hidden = 64;  // mlp reparametrization only
    bool separate_prompts = false;  // distinct query / passage prompt sets

    std::size_t head_dim() const { return hidden_size / num_heads; }

    void validate() const
    {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) {
                throw ValidationError(std::string("encoder config: ") + name + " must be positive");
            }
        };
        positive(num_layers, "num_layers");
        positive(hidden_size, "hidden_size");
        positive(num_heads, "num_heads");
        positive(ffn_size, "ffn_size");
        positive(vocab_size, "vocab_size");
        positive(max_seq_len, "max_seq_len");
        if (hidden_size % num_heads != 0) {
            throw ValidationError("encoder config: hidden_size " + std::to_string(hidden_size)
                                  + " is not divisible by num_heads " + std::to_string(num_heads));
        }
        if (reparam_mode == ReparamMode::mlp) {
            positive(mlp_hidden, "mlp_hidden");
        }
    }

    bool operator==(const EncoderConfig&) const = default;
};

}  // namespace dptdr::encoder
