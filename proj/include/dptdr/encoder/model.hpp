#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dptdr/autodiff/ops.hpp"
#include "dptdr/encoder/config.hpp"
#include "dptdr/text/tokenizer.hpp"

namespace dptdr::encoder {

using ad::Tensor;
using text::TokenId;

struct LayerWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gain, ln2_bias;

    template <typename F>
    void visit(const std::string& prefix, F&& f)
    {
        f(prefix + "attn.wq", wq);
        f(prefix + "attn.bq", bq);
        f(prefix + "attn.wk", wk);
        f(prefix + "attn.bk", bk);
        f(prefix + "attn.wv", wv);
        f(prefix + "attn.bv", bv);
        f(prefix + "attn.wo", wo);
        f(prefix + "attn.bo", bo);
        f(prefix + "ln1.gain", ln1_gain);
        f(prefix + "ln1.bias", ln1_bias);
        f(prefix + "ffn.w1", w1);
        f(prefix + "ffn.b1", b1);
        f(prefix + "ffn.w2", w2);
        f(prefix + "ffn.b2", b2);
        f(prefix + "ln2.gain", ln2_gain);
        f(prefix + "ln2.bias", ln2_bias);
    }
};

/// Per-layer prefix key/value slots: keys[k] and values[k] are l x d.
struct PrefixKV {
    std::vector<Tensor> keys;
    std::vector<Tensor> values;

    std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
};

/// Post-LN transformer encoder with learned positions, a tied MLM head and
/// prefix key/value injection at every layer.
///
/// Copies are deep: a copied model owns its own weight arrays.
class EncoderModel {
  public:
    EncoderModel() = default;

    EncoderModel(const EncoderModel& other) : m_config(other.m_config), m_vocab(other.m_vocab)
    {
        m_layers.resize(other.m_layers.size());
        copy_weights_from(other);
    }

    EncoderModel& operator=(const EncoderModel& other)
    {
        if (this != &other) {
            EncoderModel tmp(other);
            *this = std::move(tmp);
        }
        return *this;
    }

    EncoderModel(EncoderModel&&) noexcept = default;
    EncoderModel& operator=(EncoderModel&&) noexcept = default;

    /// Fresh weights: N(0, init_std) matrices, zero biases, unit LN gains.
    static EncoderModel initialize(EncoderConfig config, text::Vocabulary vocab, std::uint64_t seed,
                                   double init_std = 0.02)
    {
        config.vocab_size = vocab.size();
        config.validate();
        EncoderModel m;
        m.m_config = config;
        m.m_vocab = std::move(vocab);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, init_std);
        auto randn = [&](std::size_t r, std::size_t c) {
            std::vector<double> v(r * c);
            for (auto& x : v) {
                x = normal(rng);
            }
            return Tensor::from({r, c}, std::move(v));
        };
        auto zeros = [](std::size_t r, std::size_t c) { return Tensor::zeros({r, c}); };
        auto ones = [](std::size_t c) { return Tensor::from({1, c}, std::vector<double>(c, 1.0)); };
        const std::size_t d = config.hidden_size;
        m.m_token_embedding = randn(config.vocab_size, d);
        m.m_position_embedding = randn(config.max_seq_len, d);
        m.m_embedding_ln_gain = ones(d);
        m.m_embedding_ln_bias = zeros(1, d);
        for (std::size_t k = 0; k < config.num_layers; ++k) {
            LayerWeights w;
            w.wq = randn(d, d);
            w.bq = zeros(1, d);
            w.wk = randn(d, d);
            w.bk = zeros(1, d);
            w.wv = randn(d, d);
            w.bv = zeros(1, d);
            w.wo = randn(d, d);
            w.bo = zeros(1, d);
            w.ln1_gain = ones(d);
            w.ln1_bias = zeros(1, d);
            w.w1 = randn(d, config.ffn_size);
            w.b1 = zeros(1, config.ffn_size);
            w.w2 = randn(config.ffn_size, d);
            w.b2 = zeros(1, d);
            w.ln2_gain = ones(d);
            w.ln2_bias = zeros(1, d);
            m.m_layers.push_back(std::move(w));
        }
        m.m_mlm_bias = zeros(1, config.vocab_size);
        return m;
    }

    const EncoderConfig& config() const noexcept { return m_config; }
    EncoderConfig& mutable_config() noexcept { return m_config; }
    const text::Vocabulary& vocab() const noexcept { return m_vocab; }
    const Tensor& token_embedding() const { return m_token_embedding; }
    const LayerWeights& layer(std::size_t k) const { return m_layers.at(k); }

    /// Visits every backbone array in a fixed order with a stable name.
    template <typename F>
    void visit(F&& f)
    {
        f("embeddings.token", m_token_embedding);
        f("embeddings.position", m_position_embedding);
        f("embeddings.ln.gain", m_embedding_ln_gain);
        f("embeddings.ln.bias", m_embedding_ln_bias);
        for (std::size_t k = 0; k < m_layers.size(); ++k) {
            m_layers[k].visit("layers." + std::to_string(k) + ".", f);
        }
        f("mlm.bias", m_mlm_bias);
    }

    template <typename F>
    void visit(F&& f) const
    {
        const_cast<EncoderModel*>(this)->visit([&](const std::string& name, Tensor& t) { f(name, std::as_const(t)); });
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const
    {
        std::vector<std::pair<std::string, Tensor>> out;
        visit([&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
        return out;
    }

    /// Backbone arrays an optimizer should see when the backbone trains.
    /// The MLM bias only receives gradient from the MLM objective.
    std::vector<Tensor> trainable_parameters(bool with_mlm_head) const
    {
        std::vector<Tensor> out;
        visit([&](const std::string& name, const Tensor& t) {
            if (with_mlm_head || name != "mlm.bias") {
                out.push_back(t);
            }
        });
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        visit([&](const std::string&, const Tensor& t) { n += t.size(); });
        return n;
    }

    void set_trainable(bool on)
    {
        visit([&](const std::string&, Tensor& t) { t.set_requires_grad(on); });
    }

    void replace_parameter(const std::string& name, Tensor value)
    {
        bool found = false;
        visit([&](const std::string& n, Tensor& t) {
            if (n == name) {
                if (t.defined() && t.shape() != value.shape()) {
                    throw ShapeError("checkpoint: array '" + name + "' has shape " + value.shape().str()
                                     + ", expected " + t.shape().str());
                }
                t = std::move(value);
                found = true;
            }
        });
        if (!found) {
            throw ValidationError("checkpoint: unknown array '" + name + "'");
        }
    }

    /// Hidden states (T x d) for one sequence. `prefix`, when given, supplies
    /// extra key/value rows at every layer; those slots produce no outputs.
    Tensor forward(std::span<const TokenId> ids, const PrefixKV* prefix = nullptr) const
    {
        validate_ids(ids);
        const std::size_t T = ids.size();
        const std::size_t heads = m_config.num_heads;
        const std::size_t dh = m_config.head_dim();
        const bool use_prefix = prefix != nullptr && prefix->length() > 0;
        if (prefix != nullptr && prefix->keys.size() != m_config.num_layers && prefix->length() > 0) {
            throw ShapeError("encode: prefix has " + std::to_string(prefix->keys.size()) + " layers, model has "
                             + std::to_string(m_config.num_layers));
        }

        std::vector<std::size_t> positions(T);
        for (std::size_t i = 0; i < T; ++i) {
            positions[i] = i;
        }
        Tensor x = ad::add(ad::gather_rows(m_token_embedding, ids), ad::gather_rows(m_position_embedding, positions));
        x = ad::layer_norm(x, m_embedding_ln_gain, m_embedding_ln_bias);

        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t k = 0; k < m_layers.size(); ++k) {
            const LayerWeights& w = m_layers[k];
            Tensor q = ad::add_bias(ad::matmul(x, w.wq), w.bq);
            Tensor key = ad::add_bias(ad::matmul(x, w.wk), w.bk);
            Tensor val = ad::add_bias(ad::matmul(x, w.wv), w.bv);
            if (use_prefix) {
                key = ad::concat_rows({prefix->keys[k], key});
                val = ad::concat_rows({prefix->values[k], val});
            }
            Tensor ctx;
            if (heads == 1) {
                ctx = ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, key), inv_sqrt_dh)), val);
            } else {
                std::vector<Tensor> per_head;
                per_head.reserve(heads);
                for (std::size_t h = 0; h < heads; ++h) {
                    Tensor qh = ad::slice_cols(q, h * dh, dh);
                    Tensor kh = ad::slice_cols(key, h * dh, dh);
                    Tensor vh = ad::slice_cols(val, h * dh, dh);
                    Tensor att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh));
                    per_head.push_back(ad::matmul(att, vh));
                }
                ctx = ad::concat_cols(per_head);
            }
            Tensor attn_out = ad::add_bias(ad::matmul(ctx, w.wo), w.bo);
            x = ad::layer_norm(ad::add(x, attn_out), w.ln1_gain, w.ln1_bias);
            Tensor hidden = ad::gelu(ad::add_bias(ad::matmul(x, w.w1), w.b1));
            Tensor ffn_out = ad::add_bias(ad::matmul(hidden, w.w2), w.b2);
            x = ad::layer_norm(ad::add(x, ffn_out), w.ln2_gain, w.ln2_bias);
        }
        return x;
    }

    /// Vocabulary logits of selected hidden rows through the tied output head.
    Tensor mlm_logits(const Tensor& hidden_rows) const
    {
        return ad::add_bias(ad::matmul_nt(hidden_rows, m_token_embedding), m_mlm_bias);
    }

    /// Projects per-layer prompt matrices through each layer's frozen key and
    /// value maps.
    PrefixKV project_prefix(const std::vector<Tensor>& prompts) const
    {
        PrefixKV kv;
        if (prompts.empty() || prompts.front().rows() == 0) {
            return kv;
        }
        if (prompts.size() != m_layers.size()) {
            throw ShapeError("prompts: " + std::to_string(prompts.size()) + " layer matrices for a "
                             + std::to_string(m_layers.size()) + "-layer model");
        }
        for (std::size_t k = 0; k < m_layers.size(); ++k) {
            if (prompts[k].cols() != m_config.hidden_size) {
                throw ShapeError("prompts: layer " + std::to_string(k) + " matrix " + prompts[k].shape().str()
                                 + " does not match hidden size " + std::to_string(m_config.hidden_size));
            }
            kv.keys.push_back(ad::add_bias(ad::matmul(prompts[k], m_layers[k].wk), m_layers[k].bk));
            kv.values.push_back(ad::add_bias(ad::matmul(prompts[k], m_layers[k].wv), m_layers[k].bv));
        }
        return kv;
    }

    void validate_ids(std::span<const TokenId> ids) const
    {
        if (ids.empty() || ids.front() != text::kCls) {
            throw ValidationError("encode: token sequence must begin with [CLS]");
        }
        if (ids.size() > m_config.max_seq_len) {
            throw Error("sequence_too_long", "encode: sequence of " + std::to_string(ids.size())
                                                 + " tokens exceeds max_seq_len "
                                                 + std::to_string(m_config.max_seq_len));
        }
        for (auto id : ids) {
            if (id >= m_config.vocab_size) {
                throw Error("unknown_token", "encode: unknown token id " + std::to_string(id) + " (vocab size "
                                                 + std::to_string(m_config.vocab_size) + ")");
            }
        }
    }

    /// Bulk-copies every array from a model with the same shapes.
    void copy_weights_from(const EncoderModel& other)
    {
        auto src = other.named_parameters();
        std::size_t i = 0;
        visit([&](const std::string&, Tensor& t) { t = src.at(i++).second.clone(); });
    }

  private:
    EncoderConfig m_config;
    text::Vocabulary m_vocab;
    Tensor m_token_embedding;
    Tensor m_position_embedding;
    Tensor m_embedding_ln_gain;
    Tensor m_embedding_ln_bias;
    std::vector<LayerWeights> m_layers;
    Tensor m_mlm_bias;
};

/// Exact backbone parameter count implied by a config.
inline std::size_t backbone_parameter_count(const EncoderConfig& c)
{
    const std::size_t d = c.hidden_size;
    const std::size_t per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * c.ffn_size + c.ffn_size)
                                  + (c.ffn_size * d + d);
    return c.vocab_size * d + c.max_seq_len * d + 2 * d + c.num_layers * per_layer + c.vocab_size;
}

}  // namespace dptdr::encoder
