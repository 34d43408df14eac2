#pragma once

// Forward kernels and their hand-written adjoints. Backward functions
// accumulate (+=) into the gradient tensors they are given.

#include <cmath>
#include <limits>

#include "cltd/instrument.hpp"
#include "cltd/tensor.hpp"

namespace cltd::ops {

enum class PoolMode { Mean, Max };

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul lhs");
    b.require_rank(2, "matmul rhs");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k)
        throw dimension_error("matmul: inner extents " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// C = A * B^T  (A m×k, B n×k)
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul_bt lhs");
    b.require_rank(2, "matmul_bt rhs");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
    if (b.extent(1) != k) throw dimension_error("matmul_bt: inner extents differ");
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            #pragma omp simd reduction(+ : s)
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] = s;
        }
    return c;
}

/// C = A^T * B  (A k×m, B k×n)
inline Tensor matmul_at(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul_at lhs");
    b.require_rank(2, "matmul_at rhs");
    const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k) throw dimension_error("matmul_at: inner extents differ");
    Tensor c({m, n});
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[p * m + i];
            double* crow = c.data() + i * n;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    return c;
}

inline Tensor softmax_rows(const Tensor& m) {
    m.require_rank(2, "softmax_rows");
    m.require_finite("softmax_rows input");
    const std::size_t r = m.extent(0), c = m.extent(1);
    Tensor out(m.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = m.data() + i * c;
        double* o = out.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
    }
    return out;
}

/// Given softmax output `p` and upstream `dp`, returns d(logits).
inline Tensor softmax_rows_backward(const Tensor& p, const Tensor& dp) {
    p.require_same_shape(dp, "softmax_rows_backward");
    const std::size_t r = p.extent(0), c = p.extent(1);
    Tensor dl(p.shape());
    for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += p[i * c + j] * dp[i * c + j];
        for (std::size_t j = 0; j < c; ++j) dl[i * c + j] = p[i * c + j] * (dp[i * c + j] - dot);
    }
    return dl;
}

inline constexpr std::size_t kConv1dKernel = 3;

/// Temporal convolution over a T×C_in sequence: kernel 3, zero padding 1.
/// weights: C_out×C_in×3, bias: C_out.
inline Tensor conv1d(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    x.require_rank(2, "conv1d input");
    weights.require_rank(3, "conv1d weights");
    const std::size_t t_len = x.extent(0), cin = x.extent(1), cout = weights.extent(0);
    if (weights.extent(1) != cin || weights.extent(2) != kConv1dKernel || bias.size() != cout)
        throw dimension_error("conv1d: weights " + shape_str(weights.shape()) + " do not fit input " +
                              shape_str(x.shape()));
    instrument::add_projection_macs(t_len * cin * cout * kConv1dKernel);
    Tensor y({t_len, cout});
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t o = 0; o < cout; ++o) {
            double s = bias[o];
            for (std::size_t k = 0; k < kConv1dKernel; ++k) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - 1;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                for (std::size_t i = 0; i < cin; ++i)
                    s += weights[(o * cin + i) * kConv1dKernel + k] * x[static_cast<std::size_t>(src) * cin + i];
            }
            y[t * cout + o] = s;
        }
    return y;
}

/// Accumulates dW, db and returns dx.
inline Tensor conv1d_backward(const Tensor& x, const Tensor& weights, const Tensor& dy, Tensor& dweights,
                              Tensor& dbias) {
    const std::size_t t_len = x.extent(0), cin = x.extent(1), cout = weights.extent(0);
    Tensor dx(x.shape());
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t o = 0; o < cout; ++o) {
            const double g = dy[t * cout + o];
            dbias[o] += g;
            for (std::size_t k = 0; k < kConv1dKernel; ++k) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - 1;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                const auto s = static_cast<std::size_t>(src);
                for (std::size_t i = 0; i < cin; ++i) {
                    const std::size_t wi = (o * cin + i) * kConv1dKernel + k;
                    dweights[wi] += g * x[s * cin + i];
                    dx[s * cin + i] += g * weights[wi];
                }
            }
        }
    return dx;
}

/// T×C×H×W -> T×C, mean over H and W.
inline Tensor spatial_pool(const Tensor& f) {
    f.require_rank(4, "spatial_pool");
    const std::size_t t_len = f.extent(0), c = f.extent(1), hw = f.extent(2) * f.extent(3);
    Tensor out({t_len, c});
    for (std::size_t tc = 0; tc < t_len * c; ++tc) {
        const double* p = f.data() + tc * hw;
        double s = 0.0;
        #pragma omp simd reduction(+ : s)
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        out[tc] = s / static_cast<double>(hw);
    }
    return out;
}

inline Tensor spatial_pool_backward(const Shape& in_shape, const Tensor& dout) {
    Tensor df(in_shape);
    const std::size_t hw = in_shape[2] * in_shape[3];
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t tc = 0; tc < in_shape[0] * in_shape[1]; ++tc) {
        double* p = df.data() + tc * hw;
        const double g = dout[tc] * inv;
        for (std::size_t i = 0; i < hw; ++i) p[i] = g;
    }
    return df;
}

/// T×C×H×W -> T×H×W, mean over C.
inline Tensor channel_pool(const Tensor& f) {
    f.require_rank(4, "channel_pool");
    const std::size_t t_len = f.extent(0), c = f.extent(1), h = f.extent(2), w = f.extent(3), hw = h * w;
    Tensor out({t_len, h, w});
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t t = 0; t < t_len; ++t) {
        double* o = out.data() + t * hw;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = f.data() + (t * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) o[i] += p[i];
        }
        for (std::size_t i = 0; i < hw; ++i) o[i] *= inv;
    }
    return out;
}

inline void channel_pool_backward_accumulate(const Tensor& dout, Tensor& df) {
    const std::size_t t_len = df.extent(0), c = df.extent(1), hw = df.extent(2) * df.extent(3);
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = df.data() + (t * c + ch) * hw;
            const double* g = dout.data() + t * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += g[i] * inv;
        }
}

/// T×D -> D. Mean by default; Max keeps the first maximal row per column.
inline Tensor temporal_pool(const Tensor& x, PoolMode mode = PoolMode::Mean) {
    x.require_rank(2, "temporal_pool");
    const std::size_t t_len = x.extent(0), d = x.extent(1);
    Tensor out({d});
    if (mode == PoolMode::Mean) {
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t j = 0; j < d; ++j) out[j] += x[t * d + j];
        out *= 1.0 / static_cast<double>(t_len);
    } else {
        for (std::size_t j = 0; j < d; ++j) {
            double m = x[j];
            for (std::size_t t = 1; t < t_len; ++t) m = std::max(m, x[t * d + j]);
            out[j] = m;
        }
    }
    return out;
}

inline Tensor temporal_pool_backward(const Tensor& x, const Tensor& dout, PoolMode mode = PoolMode::Mean) {
    const std::size_t t_len = x.extent(0), d = x.extent(1);
    Tensor dx(x.shape());
    if (mode == PoolMode::Mean) {
        const double inv = 1.0 / static_cast<double>(t_len);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t j = 0; j < d; ++j) dx[t * d + j] = dout[j] * inv;
    } else {
        for (std::size_t j = 0; j < d; ++j) {
            std::size_t arg = 0;
            for (std::size_t t = 1; t < t_len; ++t)
                if (x[t * d + j] > x[arg * d + j]) arg = t;
            dx[arg * d + j] = dout[j];
        }
    }
    return dx;
}

inline double sigmoid(double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

/// log(1 + e^v) without overflow.
inline double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// Negative log-softmax of `logits` at `label`; writes d/dlogits into `grad` when non-null.
inline double cross_entropy(std::span<const double> logits, std::size_t label, std::span<double> grad = {}) {
    if (label >= logits.size()) throw validation_error("cross_entropy: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    if (!grad.empty()) {
        for (std::size_t j = 0; j < logits.size(); ++j) grad[j] = std::exp(logits[j] - lse);
        grad[label] -= 1.0;
    }
    return lse - logits[label];
}

}  // namespace cltd::ops
