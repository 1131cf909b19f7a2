#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dptdr/autodiff/tensor.hpp"

namespace dptdr::ad {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Linear warm-up over warmup_ratio * total_steps, then linear decay to 0.
    // total_steps == 0 keeps the learning rate constant.
    double warmup_ratio = 0.0;
    std::size_t total_steps = 0;
};

/// AdamW with decoupled weight decay. Holds first/second moments for each
/// registered parameter.
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamWConfig config) : m_params(std::move(params)), m_config(config)
    {
        for (const auto& p : m_params) {
            m_first.emplace_back(p.size(), 0.0);
            m_second.emplace_back(p.size(), 0.0);
        }
    }

    const AdamWConfig& config() const noexcept { return m_config; }
    std::size_t step_count() const noexcept { return m_step; }
    const std::vector<Tensor>& parameters() const noexcept { return m_params; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_first.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return m_second.at(i); }

    /// Learning rate the next call to step() will use.
    double next_learning_rate() const
    {
        const auto& c = m_config;
        if (c.total_steps == 0) {
            return c.learning_rate;
        }
        const auto s = static_cast<double>(m_step);
        const auto total = static_cast<double>(c.total_steps);
        const double warm = std::floor(c.warmup_ratio * total);
        if (s < warm) {
            return c.learning_rate * (s + 1.0) / warm;
        }
        return c.learning_rate * std::max(0.0, (total - s) / std::max(1.0, total - warm));
    }

    /// One update on every registered parameter; clears their gradients.
    /// Returns the learning rate used.
    double step()
    {
        for (std::size_t i = 0; i < m_params.size(); ++i) {
            if (!m_params[i].has_grad()) {
                throw Error("missing_gradient", "adamw: registered parameter #" + std::to_string(i) + " "
                                                    + m_params[i].shape().str() + " has no gradient");
            }
        }
        const double lr = next_learning_rate();
        ++m_step;
        const auto& c = m_config;
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(m_step));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(m_step));
        for (std::size_t i = 0; i < m_params.size(); ++i) {
            auto w = m_params[i].mutable_data();
            auto g = m_params[i].grad();
            auto& m1 = m_first[i];
            auto& m2 = m_second[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                m1[j] = c.beta1 * m1[j] + (1.0 - c.beta1) * g[j];
                m2[j] = c.beta2 * m2[j] + (1.0 - c.beta2) * g[j] * g[j];
                w[j] -= lr * c.weight_decay * w[j];
                w[j] -= lr * (m1[j] / bc1) / (std::sqrt(m2[j] / bc2) + c.eps);
            }
            m_params[i].clear_grad();
        }
        return lr;
    }

    void zero_grad()
    {
        for (auto& p : m_params) {
            p.clear_grad();
        }
    }

  private:
    std::vector<Tensor> m_params;
    AdamWConfig m_config;
    std::vector<std::vector<double>> m_first;
    std::vector<std::vector<double>> m_second;
    std::size_t m_step = 0;
};

}  // namespace dptdr::ad
