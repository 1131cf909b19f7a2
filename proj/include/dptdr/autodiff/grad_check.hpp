#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "dptdr/autodiff/tensor.hpp"

namespace dptdr::ad {

struct GradCheckOptions {
    std::size_t max_coords = 30;  // 0 checks every coordinate
    double step = 1e-5;
    std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild its graph from the current parameter values
/// on every call. Returns the largest |a - n| / max(1e-8, |a| + |n|) over the
/// sampled coordinates.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         const GradCheckOptions& opts = {})
{
    for (auto& p : params) {
        p.clear_grad();
    }
    backward(f());

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            coords.emplace_back(i, j);
        }
    }
    if (opts.max_coords != 0 && coords.size() > opts.max_coords) {
        std::mt19937_64 rng(opts.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opts.max_coords);
    }

    double worst = 0.0;
    for (auto [i, j] : coords) {
        const double analytic = params[i].has_grad() ? params[i].grad()[j] : 0.0;
        double& w = params[i].mutable_data()[j];
        const double saved = w;
        w = saved + opts.step;
        const double up = f().item();
        w = saved - opts.step;
        const double down = f().item();
        w = saved;
        const double numeric = (up - down) / (2.0 * opts.step);
        const double err = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    for (auto& p : params) {
        p.clear_grad();
    }
    return worst;
}

}  // namespace dptdr::ad
