#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dptdr/autodiff/ops.hpp"
#include "dptdr/encoder/config.hpp"

namespace dptdr::encoder {

using ad::Tensor;

/// Trainable per-layer prefix parameters. In direct mode each layer owns an
/// l x d matrix. In mlp mode a shared l x d source passes through
/// tanh(S W1 + b1) W2 + b2, whose l x (L*d) output is cut into the L layer
/// matrices.
class PromptSet {
  public:
    PromptSet() = default;

    PromptSet(const PromptSet& other)
        : m_mode(other.m_mode), m_length(other.m_length), m_hidden(other.m_hidden), m_layers(other.m_layers),
          m_mlp_hidden(other.m_mlp_hidden), m_task_name(other.m_task_name), m_version(other.m_version)
    {
        for (const auto& [name, t] : other.m_params) {
            m_params.emplace_back(name, t.clone());
        }
    }

    PromptSet& operator=(const PromptSet& other)
    {
        if (this != &other) {
            PromptSet tmp(other);
            *this = std::move(tmp);
        }
        return *this;
    }

    PromptSet(PromptSet&&) noexcept = default;
    PromptSet& operator=(PromptSet&&) noexcept = default;

    /// Random N(0, init_std) prompt parameters laid out for `config`.
    static PromptSet initialize(const EncoderConfig& config, std::string task_name, std::uint64_t seed,
                                double init_std = 0.5)
    {
        PromptSet p = empty_layout(config, std::move(task_name));
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, init_std);
        const double mlp_std = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, config.hidden_size)));
        std::normal_distribution<double> mlp_normal(0.0, mlp_std);
        for (auto& [name, t] : p.m_params) {
            const bool is_bias = name.ends_with(".b1") || name.ends_with(".b2");
            const bool is_mlp_weight = name.ends_with(".w1") || name.ends_with(".w2");
            for (auto& x : t.mutable_data()) {
                x = is_bias ? 0.0 : (is_mlp_weight ? mlp_normal(rng) : normal(rng));
            }
        }
        return p;
    }

    /// All parameters zero.
    static PromptSet zeros(const EncoderConfig& config, std::string task_name = "default")
    {
        return empty_layout(config, std::move(task_name));
    }

    ReparamMode mode() const noexcept { return m_mode; }
    std::size_t length() const noexcept { return m_length; }
    std::size_t hidden_size() const noexcept { return m_hidden; }
    std::size_t num_layers() const noexcept { return m_layers; }
    std::size_t mlp_hidden() const noexcept { return m_mlp_hidden; }
    const std::string& task_name() const noexcept { return m_task_name; }
    void set_task_name(std::string name) { m_task_name = std::move(name); }
    std::uint32_t version() const noexcept { return m_version; }
    void set_version(std::uint32_t v) { m_version = v; }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const noexcept { return m_params; }

    std::vector<Tensor> parameters() const
    {
        std::vector<Tensor> out;
        for (const auto& [name, t] : m_params) {
            out.push_back(t);
        }
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& [name, t] : m_params) {
            n += t.size();
        }
        return n;
    }

    void set_trainable(bool on)
    {
        for (auto& [name, t] : m_params) {
            t.set_requires_grad(on);
        }
    }

    Tensor& parameter(const std::string& name)
    {
        for (auto& [n, t] : m_params) {
            if (n == name) {
                return t;
            }
        }
        throw ValidationError("prompts: unknown parameter '" + name + "'");
    }

    /// The L per-layer l x d matrices, as graph nodes so gradients reach the
    /// stored parameters.
    std::vector<Tensor> realize() const
    {
        if (m_mode == ReparamMode::direct_embedding) {
            return parameters();
        }
        const Tensor& source = m_params[0].second;
        const Tensor& w1 = m_params[1].second;
        const Tensor& b1 = m_params[2].second;
        const Tensor& w2 = m_params[3].second;
        const Tensor& b2 = m_params[4].second;
        Tensor all = ad::add_bias(ad::matmul(ad::tanh(ad::add_bias(ad::matmul(source, w1), b1)), w2), b2);
        std::vector<Tensor> out;
        out.reserve(m_layers);
        for (std::size_t k = 0; k < m_layers; ++k) {
            out.push_back(ad::slice_cols(all, k * m_hidden, m_hidden));
        }
        return out;
    }

    /// Throws naming the first field that disagrees with `config`.
    void check_compatible(const EncoderConfig& config) const
    {
        auto mismatch = [](const char* field, std::size_t expected, std::size_t actual) {
            throw Error("prompt_mismatch", std::string("prompts: ") + field + " mismatch (expected "
                                               + std::to_string(expected) + ", got " + std::to_string(actual) + ")");
        };
        if (m_length != config.prompt_length) {
            mismatch("l", config.prompt_length, m_length);
        }
        if (m_hidden != config.hidden_size) {
            mismatch("d", config.hidden_size, m_hidden);
        }
        if (m_layers != config.num_layers) {
            mismatch("L", config.num_layers, m_layers);
        }
    }

    /// Rebuilds a prompt set from named arrays (used by the loaders).
    static PromptSet from_parameters(ReparamMode mode, std::size_t length, std::size_t hidden, std::size_t layers,
                                     std::size_t mlp_hidden, std::string task_name, std::uint32_t version,
                                     std::vector<std::pair<std::string, Tensor>> params)
    {
        EncoderConfig c;
        c.prompt_length = length;
        c.hidden_size = hidden;
        c.num_layers = layers;
        c.reparam_mode = mode;
        c.mlp_hidden = mlp_hidden;
        PromptSet p = empty_layout(c, std::move(task_name));
        p.m_version = version;
        if (params.size() != p.m_params.size()) {
            throw ValidationError("prompts: expected " + std::to_string(p.m_params.size()) + " arrays, got "
                                  + std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].first != p.m_params[i].first) {
                throw ValidationError("prompts: expected array '" + p.m_params[i].first + "', got '"
                                      + params[i].first + "'");
            }
            if (params[i].second.shape() != p.m_params[i].second.shape()) {
                throw ShapeError("prompts: array '" + params[i].first + "' has shape "
                                 + params[i].second.shape().str() + ", expected "
                                 + p.m_params[i].second.shape().str());
            }
            p.m_params[i].second = params[i].second;
        }
        return p;
    }

  private:
    static PromptSet empty_layout(const EncoderConfig& config, std::string task_name)
    {
        PromptSet p;
        p.m_mode = config.reparam_mode;
        p.m_length = config.prompt_length;
        p.m_hidden = config.hidden_size;
        p.m_layers = config.num_layers;
        p.m_mlp_hidden = config.reparam_mode == ReparamMode::mlp ? config.mlp_hidden : 0;
        p.m_task_name = std::move(task_name);
        const std::size_t l = p.m_length, d = p.m_hidden;
        if (p.m_mode == ReparamMode::direct_embedding) {
            for (std::size_t k = 0; k < p.m_layers; ++k) {
                p.m_params.emplace_back("layer." + std::to_string(k), Tensor::zeros({l, d}));
            }
        } else {
            const std::size_t h = p.m_mlp_hidden;
            p.m_params.emplace_back("source", Tensor::zeros({l, d}));
            p.m_params.emplace_back("mlp.w1", Tensor::zeros({d, h}));
            p.m_params.emplace_back("mlp.b1", Tensor::zeros({1, h}));
            p.m_params.emplace_back("mlp.w2", Tensor::zeros({h, p.m_layers * d}));
            p.m_params.emplace_back("mlp.b2", Tensor::zeros({1, p.m_layers * d}));
        }
        return p;
    }

    ReparamMode m_mode = ReparamMode::direct_embedding;
    std::size_t m_length = 0;
    std::size_t m_hidden = 0;
    std::size_t m_layers = 0;
    std::size_t m_mlp_hidden = 0;
    std::string m_task_name = "default";
    std::uint32_t m_version = 1;
    std::vector<std::pair<std::string, Tensor>> m_params;
};

/// Prompts for both sides of the dual encoder. Without a passage set the
/// query set is shared by both roles.
struct DualPrompts {
    PromptSet query;
    std::optional<PromptSet> passage;

    const PromptSet& for_query() const { return query; }
    const PromptSet& for_passage() const { return passage ? *passage : query; }

    std::vector<Tensor> parameters() const
    {
        auto out = query.parameters();
        if (passage) {
            auto more = passage->parameters();
            out.insert(out.end(), more.begin(), more.end());
        }
        return out;
    }

    std::size_t parameter_count() const { return query.parameter_count() + (passage ? passage->parameter_count() : 0); }

    void set_trainable(bool on)
    {
        query.set_trainable(on);
        if (passage) {
            passage->set_trainable(on);
        }
    }

    static DualPrompts initialize(const EncoderConfig& config, const std::string& task_name, std::uint64_t seed,
                                  double init_std = 0.5)
    {
        DualPrompts d{PromptSet::initialize(config, task_name, seed, init_std), std::nullopt};
        if (config.separate_prompts) {
            d.passage = PromptSet::initialize(config, task_name, seed ^ 0x9e3779b97f4a7c15ULL, init_std);
        }
        return d;
    }
};

}  // namespace dptdr::encoder
