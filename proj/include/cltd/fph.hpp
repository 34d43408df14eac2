#pragma once

// Fourier projection head: per (frame, channel) centered 2-D DFT, a k×k
// low-frequency crop of [real ; imag] squashed by a sigmoid (only the window
// is ever transformed), a channel
// projection 2C -> 2C_o shared across the k×k positions, and temporal pooling.

#include <string>
#include <utility>

#include "cltd/cpag.hpp"
#include "cltd/fft.hpp"

namespace cltd {

struct SpectralFeature {
    Tensor data;  // flat, length 2·C_o·k², ordered (channel, row, col)
};

struct FphParams {
    std::size_t in_c = 0;
    std::size_t k = 7;
    std::size_t c_out = 128;
    ops::PoolMode pool = ops::PoolMode::Mean;
    Parameter proj_weight;  // 2C × 2C_o
    Parameter proj_bias;    // 2C_o

    std::size_t feature_dim() const { return 2 * c_out * k * k; }

    /// W_P ~ N(0, gain^2 / 2C).
    template <class Rng>
    static FphParams init(std::size_t c, std::size_t k, std::size_t c_out, Rng& rng, const std::string& prefix = "fph",
                          ops::PoolMode pool = ops::PoolMode::Mean, double gain = 1.0) {
        if (k == 0 || k % 2 == 0) throw parameter_error("fph: window size k must be odd, got " + std::to_string(k));
        if (c_out == 0) throw parameter_error("fph: C_o must be >= 1");
        FphParams p;
        p.in_c = c, p.k = k, p.c_out = c_out, p.pool = pool;
        p.proj_weight = {prefix + ".proj_weight",
                         Tensor::normal({2 * c, 2 * c_out}, rng, gain / std::sqrt(2.0 * static_cast<double>(c)))};
        p.proj_bias = {prefix + ".proj_bias", Tensor({2 * c_out})};
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        f(proj_weight);
        f(proj_bias);
    }
    template <class F>
    void for_each(F&& f) const {
        f(proj_weight);
        f(proj_bias);
    }
};

/// x_i = a_i ⊙ f_{i+1}
inline Tensor apply_attention(const AttentionMap& a, const Tensor& f_next) {
    a.data.require_same_shape(f_next, "apply_attention");
    Tensor out(f_next.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * f_next[i];
    return out;
}

/// First row / column of the centered k×k window: floor((H-k)/2), floor((W-k)/2).
inline std::pair<std::size_t, std::size_t> lfs_origin(std::size_t h, std::size_t w, std::size_t k) {
    if (k > h || k > w)
        throw parameter_error("low-frequency window k=" + std::to_string(k) + " exceeds map " + std::to_string(h) +
                              "x" + std::to_string(w));
    return {(h - k) / 2, (w - k) / 2};
}

/// Crops the centered k×k window of a T×2C×H×W (already centered) spectrum and applies a sigmoid.
inline Tensor low_freq_select(const Tensor& spectrum, std::size_t k) {
    spectrum.require_rank(4, "low_freq_select");
    const std::size_t t_len = spectrum.extent(0), ch = spectrum.extent(1), h = spectrum.extent(2), w = spectrum.extent(3);
    const auto [r0, c0] = lfs_origin(h, w, k);
    Tensor out({t_len, ch, k, k});
    for (std::size_t tc = 0; tc < t_len * ch; ++tc)
        for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
                out[(tc * k + u) * k + v] = ops::sigmoid(spectrum[(tc * h + r0 + u) * w + c0 + v]);
    return out;
}

struct FphCache {
    Shape in_shape;
    Tensor selected;  // T×2C×k×k, post-sigmoid
    Tensor pooled;    // 2C×k² time-mean of `selected` (mean pooling)
    Tensor projected; // T×2C_o×k² (max pooling only)
};

struct FphResult {
    SpectralFeature feature;
    FphCache cache;
};

inline FphResult fph_forward_cached(const Tensor& x, const FphParams& p) {
    const MapShape s = MapShape::of(x);
    if (s.c != p.in_c)
        throw dimension_error("fph: input channels " + std::to_string(s.c) + " != " + std::to_string(p.in_c));
    x.require_finite("fph input");
    instrument::count_cltd_op();
    const std::size_t k = p.k, kk = k * k, c2 = 2 * s.c, o2 = 2 * p.c_out, hw = s.h * s.w;
    const auto [r0, c0] = lfs_origin(s.h, s.w, k);

    FphResult r;
    r.cache.in_shape = x.shape();
    r.cache.selected = Tensor({s.t, c2, k, k});
    WindowDft& dft = cached_window_dft(s.h, s.w, k, r0, c0);
    for (std::size_t t = 0; t < s.t; ++t)
        for (std::size_t c = 0; c < s.c; ++c) {
            double* re = r.cache.selected.data() + (t * c2 + c) * kk;
            double* im = r.cache.selected.data() + (t * c2 + s.c + c) * kk;
            dft.forward(x.data() + (t * s.c + c) * hw, re, im);
            for (std::size_t q = 0; q < kk; ++q) {
                re[q] = ops::sigmoid(re[q]);
                im[q] = ops::sigmoid(im[q]);
            }
        }

    const Tensor& wp = p.proj_weight.value;
    Tensor feat({o2 * kk});
    if (p.pool == ops::PoolMode::Mean) {
        // Projection and time-mean are both linear, so pool first.
        r.cache.pooled = Tensor({c2, kk});
        for (std::size_t t = 0; t < s.t; ++t)
            for (std::size_t i = 0; i < c2 * kk; ++i) r.cache.pooled[i] += r.cache.selected[t * c2 * kk + i];
        r.cache.pooled *= 1.0 / static_cast<double>(s.t);
        for (std::size_t o = 0; o < o2; ++o) {
            double* dst = feat.data() + o * kk;
            for (std::size_t q = 0; q < kk; ++q) dst[q] = p.proj_bias.value[o];
            for (std::size_t j = 0; j < c2; ++j) {
                const double wv = wp[j * o2 + o];
                const double* z = r.cache.pooled.data() + j * kk;
                for (std::size_t q = 0; q < kk; ++q) dst[q] += wv * z[q];
            }
        }
    } else {
        r.cache.projected = Tensor({s.t, o2, kk});
        for (std::size_t t = 0; t < s.t; ++t)
            for (std::size_t o = 0; o < o2; ++o) {
                double* dst = r.cache.projected.data() + (t * o2 + o) * kk;
                for (std::size_t q = 0; q < kk; ++q) dst[q] = p.proj_bias.value[o];
                for (std::size_t j = 0; j < c2; ++j) {
                    const double wv = wp[j * o2 + o];
                    const double* z = r.cache.selected.data() + (t * c2 + j) * kk;
                    for (std::size_t q = 0; q < kk; ++q) dst[q] += wv * z[q];
                }
            }
        feat = ops::temporal_pool(r.cache.projected.reshaped({s.t, o2 * kk}), ops::PoolMode::Max);
    }
    r.feature.data = std::move(feat);
    return r;
}

inline SpectralFeature fph_forward(const Tensor& x, const FphParams& p) { return fph_forward_cached(x, p).feature; }

/// Accumulates W_P / bias gradients into `p` and returns dL/dx.
inline Tensor fph_backward(const Tensor& d_feature, const FphCache& cache, FphParams& p) {
    instrument::count_cltd_op();
    const std::size_t t_len = cache.in_shape[0], c = cache.in_shape[1], h = cache.in_shape[2], w = cache.in_shape[3];
    const std::size_t k = p.k, kk = k * k, c2 = 2 * c, o2 = 2 * p.c_out, hw = h * w;
    const Tensor& wp = p.proj_weight.value;
    Tensor& dwp = p.proj_weight.grad;

    Tensor dsel({t_len, c2, k, k});
    if (p.pool == ops::PoolMode::Mean) {
        Tensor dpooled({c2, kk});
        for (std::size_t o = 0; o < o2; ++o) {
            const double* g = d_feature.data() + o * kk;
            double gs = 0.0;
            for (std::size_t q = 0; q < kk; ++q) gs += g[q];
            p.proj_bias.grad[o] += gs;
            for (std::size_t j = 0; j < c2; ++j) {
                const double* z = cache.pooled.data() + j * kk;
                double* dz = dpooled.data() + j * kk;
                double acc = 0.0;
                const double wv = wp[j * o2 + o];
                #pragma omp simd reduction(+ : acc)
                for (std::size_t q = 0; q < kk; ++q) {
                    acc += z[q] * g[q];
                    dz[q] += wv * g[q];
                }
                dwp[j * o2 + o] += acc;
            }
        }
        const double inv = 1.0 / static_cast<double>(t_len);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t i = 0; i < c2 * kk; ++i) dsel[t * c2 * kk + i] = dpooled[i] * inv;
    } else {
        const Tensor proj2 = cache.projected.reshaped({t_len, o2 * kk});
        const Tensor dproj = ops::temporal_pool_backward(proj2, d_feature, ops::PoolMode::Max);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t o = 0; o < o2; ++o) {
                const double* g = dproj.data() + (t * o2 + o) * kk;
                for (std::size_t q = 0; q < kk; ++q) p.proj_bias.grad[o] += g[q];
                for (std::size_t j = 0; j < c2; ++j) {
                    const double* z = cache.selected.data() + (t * c2 + j) * kk;
                    double* dz = dsel.data() + (t * c2 + j) * kk;
                    const double wv = wp[j * o2 + o];
                    double acc = 0.0;
                    #pragma omp simd reduction(+ : acc)
                    for (std::size_t q = 0; q < kk; ++q) {
                        acc += z[q] * g[q];
                        dz[q] += wv * g[q];
                    }
                    dwp[j * o2 + o] += acc;
                }
            }
    }

    const auto [r0, c0] = lfs_origin(h, w, k);
    Tensor dx(cache.in_shape);
    WindowDft& dft = cached_window_dft(h, w, k, r0, c0);
    std::vector<double> gre(kk), gim(kk);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t re_off = (t * c2 + ch) * kk, im_off = (t * c2 + c + ch) * kk;
            for (std::size_t q = 0; q < kk; ++q) {
                const double zr = cache.selected[re_off + q], zi = cache.selected[im_off + q];
                gre[q] = dsel[re_off + q] * zr * (1.0 - zr);
                gim[q] = dsel[im_off + q] * zi * (1.0 - zi);
            }
            dft.adjoint(gre.data(), gim.data(), dx.data() + (t * c + ch) * hw);
        }
    return dx;
}

}  // namespace cltd
