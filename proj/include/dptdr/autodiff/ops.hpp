#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dptdr/autodiff/tensor.hpp"

namespace dptdr::ad {

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline void require(bool ok, const char* op, const Shape& a, const Shape& b)
{
    if (!ok) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
    }
}

inline void accumulate(Node& parent, std::span<const double> g)
{
    if (!parent.requires_grad) {
        return;
    }
    parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        parent.grad[i] += g[i];
    }
}

}  // namespace detail

/// [m x k] * [k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    detail::require(a.cols() == b.rows(), "matmul", a.shape(), b.shape());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* c = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* br = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                c[j] += av * br[j];
            }
        }
    }
    return detail::record({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* G = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* B = pb.data.data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* g = G + i * n;
                    const double* br = B + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        s += g[j] * br[j];
                    }
                    pa.grad[i * k + p] += s;
                }
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            const double* A = pa.data.data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = G + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    double* gb = pb.grad.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[j] += av * g[j];
                    }
                }
            }
        }
    });
}

/// [m x k] * [n x k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    detail::require(a.cols() == b.cols(), "matmul_nt", a.shape(), b.shape());
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += A[i * k + p] * B[j * k + p];
            }
            out[i * n + j] = s;
        }
    }
    return detail::record({m, n}, std::move(out), {a, b}, "matmul_nt", [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* G = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double* ga = pa.grad.data() + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = G[i * n + j];
                    const double* br = pb.data.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        ga[p] += g * br[p];
                    }
                }
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* ar = pa.data.data() + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = G[i * n + j];
                    double* gb = pb.grad.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        gb[p] += g * ar[p];
                    }
                }
            }
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b)
{
    detail::require(a.shape() == b.shape(), "add", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] + b.data()[i];
    }
    return detail::record(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b)
{
    detail::require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] - b.data()[i];
    }
    return detail::record(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pb.grad[i] -= self.grad[i];
            }
        }
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b)
{
    detail::require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * b.data()[i];
    }
    return detail::record(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pa.grad[i] += self.grad[i] * pb.data[i];
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pb.grad[i] += self.grad[i] * pa.data[i];
            }
        }
    });
}

/// Adds a 1 x n row to every row of an m x n matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias)
{
    detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias", a.shape(), bias.shape());
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bias.data()[j];
        }
    }
    return detail::record(a.shape(), std::move(out), {a, bias}, "add_bias", [m, n](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    pb.grad[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

inline Tensor scale(const Tensor& a, double s)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * s;
    }
    return detail::record(a.shape(), std::move(out), {a}, "scale", [s](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] * s;
        }
    });
}

/// Row-wise softmax with the row max subtracted before exponentiation.
inline Tensor softmax_rows(const Tensor& a)
{
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.data().data() + i * n;
        double* y = out.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            y[j] /= z;
        }
    }
    return detail::record(a.shape(), std::move(out), {a}, "softmax", [m, n](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.data.data() + i * n;
            const double* g = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += g[j] * y[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                pa.grad[i * n + j] += y[j] * (g[j] - dot);
            }
        }
    });
}

/// Per-row normalization followed by a learnable gain and bias (both 1 x n).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps)
{
    detail::require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm", x.shape(), gain.shape());
    detail::require(bias.shape() == gain.shape(), "layer_norm", gain.shape(), bias.shape());
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = x.data().data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mean += r[j];
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = r[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (r[j] - mean) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
        }
    }
    return detail::record(
        x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            const double* G = self.grad.data();
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        pg.grad[j] += G[i * n + j] * xhat[i * n + j];
                    }
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        pb.grad[j] += G[i * n + j];
                    }
                }
            }
            if (px.requires_grad) {
                px.ensure_grad();
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_d = 0.0;
                    double mean_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = G[i * n + j] * pg.data[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * n + j];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = G[i * n + j] * pg.data[j];
                        px.grad[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                    }
                }
            }
        });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    }
    return detail::record(a.shape(), std::move(out), {a}, "gelu", [](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = pa.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            pa.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

inline Tensor tanh(const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(a.data()[i]);
    }
    return detail::record(a.shape(), std::move(out), {a}, "tanh", [](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.data[i];
            pa.grad[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

inline Tensor exp(const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a.data()[i]);
    }
    return detail::record(a.shape(), std::move(out), {a}, "exp", [](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] * self.data[i];
        }
    });
}

inline Tensor log(const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::log(a.data()[i]);
    }
    return detail::record(a.shape(), std::move(out), {a}, "log", [](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] / pa.data[i];
        }
    });
}

inline Tensor sum(const Tensor& a)
{
    double s = 0.0;
    for (double v : a.data()) {
        s += v;
    }
    return detail::record({1, 1}, {s}, {a}, "sum", [](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (double& g : pa.grad) {
            g += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& a)
{
    if (a.size() == 0) {
        throw ShapeError("mean: empty tensor " + a.shape().str());
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Picks rows of `table` by index; gradients scatter-add back.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids)
{
    const std::size_t n = table.cols();
    std::vector<double> out(ids.size() * n);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= table.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " out of range for "
                             + table.shape().str());
        }
        std::copy_n(table.data().data() + ids[r] * n, n, out.data() + r * n);
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return detail::record({ids.size(), n}, std::move(out), {table}, "embedding_gather",
                          [n, idx = std::move(idx)](Node& self) {
                              Node& pt = *self.parents[0];
                              pt.ensure_grad();
                              for (std::size_t r = 0; r < idx.size(); ++r) {
                                  for (std::size_t j = 0; j < n; ++j) {
                                      pt.grad[idx[r] * n + j] += self.grad[r * n + j];
                                  }
                              }
                          });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts)
{
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        detail::require(p.cols() == n, "concat_rows", parts.front().shape(), p.shape());
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return detail::record({m, n}, std::move(out), parts, "concat_rows", [](Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t len = p->data.size();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) {
                    p->grad[i] += self.grad[offset + i];
                }
            }
            offset += len;
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts)
{
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        detail::require(p.rows() == m, "concat_cols", parts.front().shape(), p.shape());
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(p.data().data() + i * p.cols(), p.cols(), out.data() + i * n + c0);
        }
        c0 += p.cols();
    }
    return detail::record({m, n}, std::move(out), parts, "concat_cols", [m, n](Node& self) {
        std::size_t c0 = 0;
        for (auto& p : self.parents) {
            const std::size_t w = p->shape.cols;
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        p->grad[i * w + j] += self.grad[i * n + c0 + j];
                    }
                }
            }
            c0 += w;
        }
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count)
{
    if (begin + count > a.rows()) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count)
                         + ") exceed " + a.shape().str());
    }
    const std::size_t n = a.cols();
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
    return detail::record({count, n}, std::move(out), {a}, "slice_rows", [begin, n](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[begin * n + i] += self.grad[i];
        }
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count)
{
    if (begin + count > a.cols()) {
        throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count)
                         + ") exceed " + a.shape().str());
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + i * n + begin, count, out.data() + i * count);
    }
    return detail::record({m, count}, std::move(out), {a}, "slice_cols", [m, n, begin, count](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                pa.grad[i * n + begin + j] += self.grad[i * count + j];
            }
        }
    });
}

/// Mean over rows of -log softmax(logits[r])[target[r]]. When `allowed` is
/// non-empty it is an r x c 0/1 mask; excluded entries take no part in the
/// normalizer. The target entry must be allowed.
inline Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                                 std::span<const std::uint8_t> allowed = {})
{
    const std::size_t m = logits.rows(), n = logits.cols();
    if (targets.size() != m || m == 0) {
        throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits "
                         + logits.shape().str());
    }
    if (!allowed.empty() && allowed.size() != m * n) {
        throw ShapeError("cross_entropy_rows: mask size " + std::to_string(allowed.size())
                         + " does not match logits " + logits.shape().str());
    }
    auto ok = [&](std::size_t i, std::size_t j) { return allowed.empty() || allowed[i * n + j] != 0; };
    std::vector<double> probs(m * n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (targets[i] >= n || !ok(i, targets[i])) {
            throw ShapeError("cross_entropy_rows: target " + std::to_string(targets[i]) + " invalid for row "
                             + std::to_string(i));
        }
        const double* x = logits.data().data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (ok(i, j)) {
                mx = std::max(mx, x[j]);
            }
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (ok(i, j)) {
                probs[i * n + j] = std::exp(x[j] - mx);
                z += probs[i * n + j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] /= z;
        }
        total += (mx + std::log(z)) - x[targets[i]];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return detail::record({1, 1}, {total * inv_m}, {logits}, "cross_entropy_rows",
                          [m, n, inv_m, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                              Node& pl = *self.parents[0];
                              pl.ensure_grad();
                              const double g = self.grad[0] * inv_m;
                              for (std::size_t i = 0; i < m; ++i) {
                                  for (std::size_t j = 0; j < n; ++j) {
                                      pl.grad[i * n + j] += g * probs[i * n + j];
                                  }
                                  pl.grad[i * n + tgt[i]] -= g;
                              }
                          });
}

}  // namespace dptdr::ad
