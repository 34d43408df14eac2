#pragma once

// Toy staged gait backbone: per-frame 3×3 convolutions with leaky ReLU,
// optional 2× average-pool downsampling in front of a stage, and a linear
// embedding of the temporally and spatially pooled last map.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "cltd/ops.hpp"

namespace cltd {

struct BackboneConfig {
    std::vector<std::size_t> widths = {1, 32, 64, 128};  // channels of f_1 .. f_n
    std::vector<bool> downsample = {false, true, true};  // per stage, applied to the stage input
    std::size_t embed_dim = 128;
    std::size_t cltd_stages = 3;  // CLTD stages sit on the last cltd_stages map transitions
    double leaky_slope = 0.01;

    std::size_t stages() const { return widths.size() - 1; }
    /// Index into f_1 .. f_n of the input map of the first CLTD stage.
    std::size_t first_cltd_map() const { return stages() - cltd_stages; }

    void validate() const {
        if (widths.size() < 2) throw validation_error("backbone needs at least one stage");
        if (downsample.size() != stages())
            throw validation_error("backbone: " + std::to_string(downsample.size()) + " downsample flags for " +
                                   std::to_string(stages()) + " stages");
        for (std::size_t c : widths)
            if (c == 0) throw validation_error("backbone: zero channel width");
        if (embed_dim == 0) throw validation_error("backbone: zero embedding dim");
        if (cltd_stages > stages())
            throw validation_error("backbone: " + std::to_string(cltd_stages) + " CLTD stages exceed " +
                                   std::to_string(stages()) + " backbone stages");
    }

    /// Shapes of f_1 .. f_n for a T×1×H×W input.
    std::vector<Shape> map_shapes(std::size_t t, std::size_t h, std::size_t w) const {
        std::vector<Shape> out = {{t, widths[0], h, w}};
        for (std::size_t s = 0; s < stages(); ++s) {
            if (downsample[s]) h /= 2, w /= 2;
            if (h == 0 || w == 0) throw dimension_error("backbone: input too small for the downsampling schedule");
            out.push_back({t, widths[s + 1], h, w});
        }
        return out;
    }
};

namespace ops {

/// Per-frame 2×2 average pooling (floor on odd extents).
inline Tensor avgpool2(const Tensor& x) {
    x.require_rank(4, "avgpool2");
    const std::size_t n = x.extent(0) * x.extent(1), h = x.extent(2), w = x.extent(3), ho = h / 2, wo = w / 2;
    Tensor y({x.extent(0), x.extent(1), ho, wo});
    for (std::size_t p = 0; p < n; ++p) {
        const double* in = x.data() + p * h * w;
        double* out = y.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const double* a = in + 2 * i * w + 2 * j;
                out[i * wo + j] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
            }
    }
    return y;
}

inline Tensor avgpool2_backward(const Shape& in_shape, const Tensor& dy) {
    Tensor dx(in_shape);
    const std::size_t n = in_shape[0] * in_shape[1], h = in_shape[2], w = in_shape[3], ho = h / 2, wo = w / 2;
    for (std::size_t p = 0; p < n; ++p) {
        double* d = dx.data() + p * h * w;
        const double* g = dy.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const double v = 0.25 * g[i * wo + j];
                double* a = d + 2 * i * w + 2 * j;
                a[0] += v, a[1] += v, a[w] += v, a[w + 1] += v;
            }
    }
    return dx;
}

namespace detail {

/// Unrolls one frame (Ci×H×W) into col[(i*9 + ky*3 + kx) * H*W + p], zero padded.
inline void im2col3x3(const double* in, std::size_t ci, std::size_t h, std::size_t wd, double* col) {
    const std::size_t hw = h * wd;
    std::fill_n(col, ci * 9 * hw, 0.0);
    for (std::size_t i = 0; i < ci; ++i)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                double* dst = col + (i * 9 + ky * 3 + kx) * hw;
                const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
                const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? wd - 1 : wd;
                for (std::size_t r = y0; r < y1; ++r) {
                    const double* irow = in + (i * h + r + ky - 1) * wd + kx - 1;
                    std::copy(irow + x0, irow + x1, dst + r * wd + x0);
                }
            }
}

/// Adjoint of im2col3x3: scatters col back onto a Ci×H×W frame (accumulating).
inline void col2im3x3(const double* col, std::size_t ci, std::size_t h, std::size_t wd, double* out) {
    const std::size_t hw = h * wd;
    for (std::size_t i = 0; i < ci; ++i)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const double* src = col + (i * 9 + ky * 3 + kx) * hw;
                const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
                const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? wd - 1 : wd;
                for (std::size_t r = y0; r < y1; ++r) {
                    double* orow = out + (i * h + r + ky - 1) * wd + kx - 1;
                    const double* srow = src + r * wd;
                    for (std::size_t c = x0; c < x1; ++c) orow[c] += srow[c];
                }
            }
}

}  // namespace detail

/// Per-frame 3×3 convolution, zero padding 1. x: T×Ci×H×W, w: Co×Ci×3×3.
inline Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    x.require_rank(4, "conv3x3 input");
    const std::size_t t_len = x.extent(0), ci = x.extent(1), h = x.extent(2), wd = x.extent(3), co = w.extent(0);
    if (w.rank() != 4 || w.extent(1) != ci || w.extent(2) != 3 || w.extent(3) != 3 || b.size() != co)
        throw dimension_error("conv3x3: weights " + shape_str(w.shape()) + " do not fit input " + shape_str(x.shape()));
    const std::size_t hw = h * wd, taps = ci * 9;
    Tensor y({t_len, co, h, wd});
    std::vector<double> col(taps * hw);
    for (std::size_t t = 0; t < t_len; ++t) {
        detail::im2col3x3(x.data() + t * ci * hw, ci, h, wd, col.data());
        for (std::size_t o = 0; o < co; ++o) {
            double* out = y.data() + (t * co + o) * hw;
            std::fill_n(out, hw, b[o]);
            const double* k = w.data() + o * taps;
            for (std::size_t q = 0; q < taps; ++q) {
                const double kv = k[q];
                const double* src = col.data() + q * hw;
                for (std::size_t p = 0; p < hw; ++p) out[p] += kv * src[p];
            }
        }
    }
    return y;
}

/// Accumulates dW and db; returns dx (left zero when `want_dx` is false).
inline Tensor conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                               bool want_dx = true) {
    const std::size_t t_len = x.extent(0), ci = x.extent(1), h = x.extent(2), wd = x.extent(3), co = w.extent(0);
    const std::size_t hw = h * wd, taps = ci * 9;
    Tensor dx(x.shape());
    std::vector<double> col(taps * hw), dcol(want_dx ? taps * hw : 0);
    for (std::size_t t = 0; t < t_len; ++t) {
        detail::im2col3x3(x.data() + t * ci * hw, ci, h, wd, col.data());
        if (want_dx) std::fill(dcol.begin(), dcol.end(), 0.0);
        for (std::size_t o = 0; o < co; ++o) {
            const double* g = dy.data() + (t * co + o) * hw;
            double gs = 0.0;
            #pragma omp simd reduction(+ : gs)
            for (std::size_t p = 0; p < hw; ++p) gs += g[p];
            db[o] += gs;
            const double* k = w.data() + o * taps;
            double* dk = dw.data() + o * taps;
            for (std::size_t q = 0; q < taps; ++q) {
                const double* src = col.data() + q * hw;
                double acc = 0.0;
                #pragma omp simd reduction(+ : acc)
                for (std::size_t p = 0; p < hw; ++p) acc += g[p] * src[p];
                dk[q] += acc;
                if (!want_dx) continue;
                const double kv = k[q];
                double* dst = dcol.data() + q * hw;
                for (std::size_t p = 0; p < hw; ++p) dst[p] += kv * g[p];
            }
        }
        if (want_dx) detail::col2im3x3(dcol.data(), ci, h, wd, dx.data() + t * ci * hw);
    }
    return dx;
}

inline void leaky_relu_inplace(Tensor& x, double slope) {
    for (double& v : x.span())
        if (v < 0.0) v *= slope;
}

/// dy ⊙ leaky'(pre) given the activation output (sign is preserved).
inline void leaky_relu_backward_inplace(const Tensor& out, Tensor& dy, double slope) {
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (out[i] < 0.0) dy[i] *= slope;
}

}  // namespace ops

struct Backbone {
    BackboneConfig cfg;
    std::vector<Parameter> conv_w, conv_b;
    Parameter embed_w;  // embed_dim × widths.back()
    Parameter embed_b;

    template <class Rng>
    static Backbone init(const BackboneConfig& cfg, Rng& rng) {
        cfg.validate();
        Backbone b;
        b.cfg = cfg;
        for (std::size_t s = 0; s < cfg.stages(); ++s) {
            const std::size_t ci = cfg.widths[s], co = cfg.widths[s + 1];
            const std::string name = "backbone.stage" + std::to_string(s + 1);
            b.conv_w.push_back(
                {name + ".weight", Tensor::normal({co, ci, 3, 3}, rng, std::sqrt(2.0 / (9.0 * static_cast<double>(ci))))});
            b.conv_b.push_back({name + ".bias", Tensor({co})});
        }
        const std::size_t c_last = cfg.widths.back();
        b.embed_w = {"backbone.embed.weight",
                     Tensor::normal({cfg.embed_dim, c_last}, rng, 1.0 / std::sqrt(static_cast<double>(c_last)))};
        b.embed_b = {"backbone.embed.bias", Tensor({cfg.embed_dim})};
        return b;
    }

    template <class F>
    void for_each(F&& f) {
        for (std::size_t s = 0; s < conv_w.size(); ++s) f(conv_w[s]), f(conv_b[s]);
        f(embed_w);
        f(embed_b);
    }
    template <class F>
    void for_each(F&& f) const {
        for (std::size_t s = 0; s < conv_w.size(); ++s) f(conv_w[s]), f(conv_b[s]);
        f(embed_w);
        f(embed_b);
    }
};

struct BackboneOutput {
    std::vector<Tensor> maps;  // f_1 (the input) .. f_n
    Tensor pooled;             // widths.back(), time and space mean of f_n
    Tensor embedding;          // embed_dim
    std::vector<Tensor> stage_inputs;  // conv inputs (after optional downsampling)
};

/// seq: T×1×H×W (or T×widths[0]×H×W).
inline BackboneOutput backbone_forward(const Tensor& seq, const Backbone& b) {
    seq.require_rank(4, "backbone input");
    if (seq.extent(1) != b.cfg.widths[0])
        throw dimension_error("backbone: input has " + std::to_string(seq.extent(1)) + " channels, expected " +
                              std::to_string(b.cfg.widths[0]));
    BackboneOutput out;
    out.maps.push_back(seq);
    for (std::size_t s = 0; s < b.cfg.stages(); ++s) {
        Tensor in = b.cfg.downsample[s] ? ops::avgpool2(out.maps.back()) : out.maps.back();
        if (in.extent(2) == 0 || in.extent(3) == 0) throw dimension_error("backbone: map vanished after downsampling");
        Tensor y = ops::conv3x3(in, b.conv_w[s].value, b.conv_b[s].value);
        ops::leaky_relu_inplace(y, b.cfg.leaky_slope);
        out.stage_inputs.push_back(std::move(in));
        out.maps.push_back(std::move(y));
    }
    out.pooled = ops::temporal_pool(ops::spatial_pool(out.maps.back()));
    const std::size_t d = b.cfg.embed_dim, c = out.pooled.size();
    out.embedding = Tensor({d});
    for (std::size_t i = 0; i < d; ++i) {
        double s = b.embed_b.value[i];
        for (std::size_t j = 0; j < c; ++j) s += b.embed_w.value[i * c + j] * out.pooled[j];
        out.embedding[i] = s;
    }
    return out;
}

/// Inference path: the embedding only.
inline Tensor embed(const Tensor& seq, const Backbone& b) { return backbone_forward(seq, b).embedding; }

/// Silhouette frames T×H×W as a T×1×H×W backbone input.
inline Tensor as_backbone_input(const Tensor& frames) {
    frames.require_rank(3, "silhouette frames");
    return frames.reshaped({frames.extent(0), 1, frames.extent(1), frames.extent(2)});
}

/// Back-propagates dL/dembedding plus optional extra gradients on the maps
/// (`d_maps[j]` for f_{j+1}, empty tensors skipped). Accumulates into `b`.
inline void backbone_backward(const BackboneOutput& fwd, const Tensor& d_embedding, std::vector<Tensor> d_maps,
                              Backbone& b) {
    const std::size_t n_maps = fwd.maps.size(), c = fwd.pooled.size(), d = b.cfg.embed_dim;
    d_maps.resize(n_maps);
    Tensor dpooled({c});
    for (std::size_t i = 0; i < d; ++i) {
        const double g = d_embedding[i];
        b.embed_b.grad[i] += g;
        for (std::size_t j = 0; j < c; ++j) {
            b.embed_w.grad[i * c + j] += g * fwd.pooled[j];
            dpooled[j] += g * b.embed_w.value[i * c + j];
        }
    }
    const Tensor& last = fwd.maps.back();
    const Tensor dsp = ops::temporal_pool_backward(ops::spatial_pool(last), dpooled);
    Tensor dlast = ops::spatial_pool_backward(last.shape(), dsp);
    if (d_maps.back().size() == 0) d_maps.back() = Tensor(last.shape());
    d_maps.back() += dlast;

    for (std::size_t s = b.cfg.stages(); s-- > 0;) {
        Tensor dy = std::move(d_maps[s + 1]);
        ops::leaky_relu_backward_inplace(fwd.maps[s + 1], dy, b.cfg.leaky_slope);
        if (s == 0) {  // no gradient needed for the input
            ops::conv3x3_backward(fwd.stage_inputs[s], b.conv_w[s].value, dy, b.conv_w[s].grad, b.conv_b[s].grad, false);
            break;
        }
        Tensor din = ops::conv3x3_backward(fwd.stage_inputs[s], b.conv_w[s].value, dy, b.conv_w[s].grad, b.conv_b[s].grad);
        if (b.cfg.downsample[s]) din = ops::avgpool2_backward(fwd.maps[s].shape(), din);
        if (d_maps[s].size() == 0)
            d_maps[s] = std::move(din);
        else
            d_maps[s] += din;
    }
}

}  // namespace cltd
