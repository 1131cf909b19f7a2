#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dptdr/autodiff/ops.hpp"
#include "dptdr/error.hpp"

namespace dptdr::train {

using ad::Tensor;

/// Raw inner product.
inline double similarity(std::span<const double> q, std::span<const double> p)
{
    if (q.size() != p.size()) {
        throw ShapeError("similarity: dimension mismatch (" + std::to_string(q.size()) + " vs "
                         + std::to_string(p.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        s += q[i] * p[i];
    }
    return s;
}

/// -log softmax of the positive against the negatives. No negatives gives 0.
inline double nll_loss(double pos_score, std::span<const double> neg_scores)
{
    double mx = pos_score;
    for (double s : neg_scores) {
        mx = std::max(mx, s);
    }
    double z = std::exp(pos_score - mx);
    for (double s : neg_scores) {
        z += std::exp(s - mx);
    }
    return mx + std::log(z) - pos_score;
}

/// Index of each row's partner when 2m embeddings are laid out as
/// (s_1^1, s_1^2, s_2^1, s_2^2, ...).
inline std::size_t partner_of(std::size_t row) { return row ^ 1U; }

inline void check_pair_layout(const Tensor& emb)
{
    if (emb.rows() == 0 || emb.rows() % 2 != 0) {
        throw ValidationError("contrastive: need 2m > 0 embeddings, got " + std::to_string(emb.rows()));
    }
}

/// Mean over all 2m anchors of -log(e^{s(a, partner)} / sum over every
/// non-anchor row of e^{s(a, other)}), with raw inner-product scores.
inline Tensor contrastive_loss(const Tensor& emb)
{
    check_pair_layout(emb);
    const std::size_t n = emb.rows();
    Tensor scores = ad::matmul_nt(emb, emb);
    std::vector<std::size_t> targets(n);
    std::vector<std::uint8_t> allowed(n * n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        targets[i] = partner_of(i);
        allowed[i * n + i] = 0;
    }
    return ad::cross_entropy_rows(scores, targets, allowed);
}

/// 1-based rank of each anchor's partner among its 2m-1 candidates. Ties
/// count against the partner.
inline std::vector<std::size_t> partner_ranks(const Tensor& emb)
{
    check_pair_layout(emb);
    const std::size_t n = emb.rows(), d = emb.cols();
    const auto x = emb.data();
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            s += x[a * d + k] * x[b * d + k];
        }
        return s;
    };
    std::vector<std::size_t> ranks(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double target = dot(i, partner_of(i));
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && j != partner_of(i) && dot(i, j) >= target) {
                ++ranks[i];
            }
        }
    }
    return ranks;
}

}  // namespace dptdr::train
