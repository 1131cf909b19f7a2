#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "dptdr/error.hpp"

namespace dptdr::index {

struct RepresentationQuality {
    double l_align = 0.0;
    double l_uniform = 0.0;
    std::size_t pair_count = 0;
    bool normalized = true;
};

namespace detail {

inline std::vector<double> maybe_normalize(std::span<const double> v, bool normalize)
{
    std::vector<double> out(v.begin(), v.end());
    if (normalize) {
        double n = 0.0;
        for (double x : out) {
            n += x * x;
        }
        n = std::sqrt(n);
        if (n == 0.0) {
            throw ValidationError("quality: cannot normalize a zero vector");
        }
        for (auto& x : out) {
            x /= n;
        }
    }
    return out;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) {
        throw ShapeError("quality: vectors differ in dimension");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s;
}

}  // namespace detail

/// Mean squared distance between positive pairs (alpha = 2).
inline double alignment(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs,
                        bool normalize = true)
{
    if (pairs.empty()) {
        throw ValidationError("quality: alignment needs at least one pair");
    }
    double total = 0.0;
    for (const auto& [x, y] : pairs) {
        total += detail::sq_dist(detail::maybe_normalize(x, normalize), detail::maybe_normalize(y, normalize));
    }
    return total / static_cast<double>(pairs.size());
}

/// log of the mean over all i != j of exp(-2 |x_i - x_j|^2) (t = 2).
inline double uniformity(const std::vector<std::vector<double>>& points, bool normalize = true)
{
    if (points.size() < 2) {
        throw ValidationError("quality: uniformity needs at least two points");
    }
    std::vector<std::vector<double>> xs;
    for (const auto& p : points) {
        xs.push_back(detail::maybe_normalize(p, normalize));
    }
    std::vector<double> terms;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            terms.push_back(-2.0 * detail::sq_dist(xs[i], xs[j]));
        }
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    double z = 0.0;
    for (double t : terms) {
        z += std::exp(t - mx);
    }
    return mx + std::log(z / static_cast<double>(terms.size()));
}

/// Alignment over the pairs; uniformity over every vector in them.
inline RepresentationQuality alignment_uniformity(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs, bool normalize = true)
{
    RepresentationQuality q;
    q.normalized = normalize;
    q.pair_count = pairs.size();
    q.l_align = alignment(pairs, normalize);
    std::vector<std::vector<double>> points;
    for (const auto& [x, y] : pairs) {
        points.push_back(x);
        points.push_back(y);
    }
    q.l_uniform = uniformity(points, normalize);
    return q;
}

}  // namespace dptdr::index
