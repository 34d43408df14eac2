#pragma once

// Cross pixel-wise attention generator: a temporal correlation matrix from
// pooled features, horizontal and vertical "separate" FC layers (one small FC
// per row / per column), and a channel repeat up to the next stage's shape.

#include <array>
#include <cstdint>
#include <string>

#include "cltd/instrument.hpp"
#include "cltd/ops.hpp"

namespace cltd {

/// (T, C, H, W) extents of a feature map.
struct MapShape {
    std::size_t t = 1, c = 1, h = 1, w = 1;

    Shape dims() const { return {t, c, h, w}; }
    static MapShape of(const Tensor& f) {
        f.require_rank(4, "feature map");
        return {f.extent(0), f.extent(1), f.extent(2), f.extent(3)};
    }
    friend bool operator==(const MapShape&, const MapShape&) = default;
};

struct AttentionMap {
    Tensor data;  // T×C'×H'×W', identical across C'
};

struct CpagParams {
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, out_h = 0, out_w = 0;

    Parameter q_weight, q_bias;  // Conv1D C->C, kernel 3
    Parameter k_weight;          // key Conv1D has no bias: it would only shift softmax rows
    Parameter gamma_raw;         // gamma = softplus(gamma_raw) > 0
    Parameter h_weight, h_bias;  // H×W×W', H×W'
    Parameter v_weight, v_bias;  // W'×H×H', W'×H'

    double gamma() const { return ops::softplus(gamma_raw.value[0]); }

    template <class Rng>
    static CpagParams init(std::size_t c, std::size_t h, std::size_t w, std::size_t c_out, std::size_t h_out,
                           std::size_t w_out, Rng& rng, const std::string& prefix = "cpag") {
        CpagParams p;
        p.in_c = c, p.in_h = h, p.in_w = w;
        p.out_c = c_out, p.out_h = h_out, p.out_w = w_out;
        const double conv_std = 1.0 / std::sqrt(3.0 * static_cast<double>(c));
        p.q_weight = {prefix + ".q_weight", Tensor::normal({c, c, ops::kConv1dKernel}, rng, conv_std)};
        p.q_bias = {prefix + ".q_bias", Tensor({c})};
        p.k_weight = {prefix + ".k_weight", Tensor::normal({c, c, ops::kConv1dKernel}, rng, conv_std)};
        p.gamma_raw = {prefix + ".gamma_raw", Tensor({1}, ops::softplus_inverse(std::sqrt(static_cast<double>(c))))};
        p.h_weight = {prefix + ".h_weight", Tensor::normal({h, w, w_out}, rng, 1.0 / std::sqrt(static_cast<double>(w)))};
        p.h_bias = {prefix + ".h_bias", Tensor({h, w_out})};
        p.v_weight = {prefix + ".v_weight", Tensor::normal({w_out, h, h_out}, rng, 1.0 / std::sqrt(static_cast<double>(h)))};
        p.v_bias = {prefix + ".v_bias", Tensor({w_out, h_out})};
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        for (Parameter* p : {&q_weight, &q_bias, &k_weight, &gamma_raw, &h_weight, &h_bias, &v_weight, &v_bias})
            f(*p);
    }
    template <class F>
    void for_each(F&& f) const {
        for (const Parameter* p :
             {&q_weight, &q_bias, &k_weight, &gamma_raw, &h_weight, &h_bias, &v_weight, &v_bias})
            f(*p);
    }

    void validate_input(const MapShape& in) const {
        if (in.c != in_c || in.h != in_h || in.w != in_w)
            throw dimension_error("cpag: input " + shape_str(in.dims()) + " does not match parameters (C=" +
                                  std::to_string(in_c) + ", H=" + std::to_string(in_h) + ", W=" + std::to_string(in_w) + ")");
        if (!(gamma() > 0.0)) throw parameter_error("cpag: gamma must be positive");
    }
};

/// Per-row FC on a rank-3 tensor: out[t,r,:] = in[t,r,:] · weight[r] + bias[r].
/// weight: R×I×O, bias: R×O.
inline Tensor separate_fc(const Tensor& in, const Tensor& weight, const Tensor& bias) {
    in.require_rank(3, "separate_fc input");
    weight.require_rank(3, "separate_fc weight");
    const std::size_t t_len = in.extent(0), rows = in.extent(1), ni = in.extent(2), no = weight.extent(2);
    if (weight.extent(0) != rows || weight.extent(1) != ni || bias.size() != rows * no)
        throw dimension_error("separate_fc: weight " + shape_str(weight.shape()) + " does not fit input " +
                              shape_str(in.shape()));
    instrument::add_projection_macs(t_len * rows * ni * no);
    Tensor out({t_len, rows, no});
    // row-major over r so each row's I×O weight block stays cached across frames
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = weight.data() + r * ni * no;
        const double* b = bias.data() + r * no;
        for (std::size_t t = 0; t < t_len; ++t) {
            double* o = out.data() + (t * rows + r) * no;
            for (std::size_t j = 0; j < no; ++j) o[j] = b[j];
            const double* x = in.data() + (t * rows + r) * ni;
            for (std::size_t i = 0; i < ni; ++i) {
                const double xv = x[i];
                const double* wrow = wr + i * no;
                for (std::size_t j = 0; j < no; ++j) o[j] += xv * wrow[j];
            }
        }
    }
    return out;
}

inline Tensor separate_fc_backward(const Tensor& in, const Tensor& weight, const Tensor& dout, Tensor& dweight,
                                   Tensor& dbias) {
    const std::size_t t_len = in.extent(0), rows = in.extent(1), ni = in.extent(2), no = weight.extent(2);
    Tensor din(in.shape());
    std::vector<double> wt(no * ni);  // W_r^T, so dx is a sum of contiguous rows
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = weight.data() + r * ni * no;
        double* dwr = dweight.data() + r * ni * no;
        double* db = dbias.data() + r * no;
        for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t j = 0; j < no; ++j) wt[j * ni + i] = wr[i * no + j];
        for (std::size_t t = 0; t < t_len; ++t) {
            const double* g = dout.data() + (t * rows + r) * no;
            const double* x = in.data() + (t * rows + r) * ni;
            double* dx = din.data() + (t * rows + r) * ni;
            for (std::size_t j = 0; j < no; ++j) {
                db[j] += g[j];
                const double gj = g[j];
                const double* wcol = wt.data() + j * ni;
                for (std::size_t i = 0; i < ni; ++i) dx[i] += gj * wcol[i];
            }
            for (std::size_t i = 0; i < ni; ++i) {
                const double xv = x[i];
                double* dwrow = dwr + i * no;
                for (std::size_t j = 0; j < no; ++j) dwrow[j] += xv * g[j];
            }
        }
    }
    return din;
}

/// H-FC: V_in T×H×W with W_H H×W×W' -> T×H×W'.
inline Tensor horizontal_fc(const Tensor& v_in, const Tensor& w_h, const Tensor& bias) {
    return separate_fc(v_in, w_h, bias);
}

/// V-FC: X T×W'×H with W_V W'×H×H' -> T×W'×H'.
inline Tensor vertical_fc(const Tensor& x, const Tensor& w_v, const Tensor& bias) {
    return separate_fc(x, w_v, bias);
}

/// Swaps the last two axes of a rank-3 tensor.
inline Tensor transpose_last(const Tensor& x) {
    x.require_rank(3, "transpose_last");
    const std::size_t t_len = x.extent(0), a = x.extent(1), b = x.extent(2);
    Tensor out({t_len, b, a});
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < a; ++i)
            for (std::size_t j = 0; j < b; ++j) out[(t * b + j) * a + i] = x[(t * a + i) * b + j];
    return out;
}

/// out[t] = sum_tau mix[t,tau] * x[tau]  (x is T×...; mixes along the first axis)
inline Tensor temporal_mix(const Tensor& mix, const Tensor& x) {
    const std::size_t t_len = x.extent(0), inner = x.size() / t_len;
    if (mix.rank() != 2 || mix.extent(0) != t_len || mix.extent(1) != t_len)
        throw dimension_error("temporal_mix: correlation matrix does not match T");
    instrument::add_attention_macs(t_len * t_len * inner);
    Tensor out(x.shape());
    for (std::size_t t = 0; t < t_len; ++t) {
        double* o = out.data() + t * inner;
        for (std::size_t tau = 0; tau < t_len; ++tau) {
            const double m = mix[t * t_len + tau];
            const double* src = x.data() + tau * inner;
            for (std::size_t i = 0; i < inner; ++i) o[i] += m * src[i];
        }
    }
    return out;
}

struct TemporalCorrelationCache {
    Tensor pooled;  // T×C
    Tensor q, k;    // T×C
    Tensor corr;    // T×T, row-stochastic
};

inline TemporalCorrelationCache temporal_correlation_forward(const Tensor& f, const CpagParams& p) {
    p.validate_input(MapShape::of(f));
    f.require_finite("cpag input");
    TemporalCorrelationCache c;
    c.pooled = ops::spatial_pool(f);
    c.q = ops::conv1d(c.pooled, p.q_weight.value, p.q_bias.value);
    c.k = ops::conv1d(c.pooled, p.k_weight.value, Tensor({p.in_c}));
    const std::size_t t_len = c.q.extent(0), ch = c.q.extent(1);
    instrument::add_attention_macs(t_len * t_len * ch);
    Tensor logits = ops::matmul_bt(c.q, c.k);
    logits *= 1.0 / p.gamma();
    c.corr = ops::softmax_rows(logits);
    return c;
}

/// M_c = softmax(Q K^T / gamma) with Q, K from temporal Conv1D over spatially pooled features.
inline Tensor temporal_correlation(const Tensor& f, const CpagParams& p) {
    return temporal_correlation_forward(f, p).corr;
}

struct CpagCache {
    Shape in_shape;
    TemporalCorrelationCache tc;
    Tensor v_in;   // T×H×W
    Tensor v;      // T×H×W'
    Tensor mixed;  // T×H×W'
    Tensor x;      // T×W'×H
};

struct CpagResult {
    AttentionMap attention;
    CpagCache cache;
};

inline CpagResult cpag_forward(const Tensor& f, const MapShape& target, const CpagParams& p) {
    const MapShape in = MapShape::of(f);
    if (target.t != in.t) throw dimension_error("generate_attention: T differs between input and target");
    if (target.c != p.out_c || target.h != p.out_h || target.w != p.out_w)
        throw dimension_error("generate_attention: target " + shape_str(target.dims()) + " does not match parameters");
    instrument::count_cltd_op();
    CpagResult r;
    r.cache.in_shape = f.shape();
    r.cache.tc = temporal_correlation_forward(f, p);
    r.cache.v_in = ops::channel_pool(f);
    r.cache.v = horizontal_fc(r.cache.v_in, p.h_weight.value, p.h_bias.value);
    r.cache.mixed = temporal_mix(r.cache.tc.corr, r.cache.v);
    r.cache.x = transpose_last(r.cache.mixed);
    const Tensor y = vertical_fc(r.cache.x, p.v_weight.value, p.v_bias.value);  // T×W'×H'
    const Tensor a = transpose_last(y);                                         // T×H'×W'
    const std::size_t hw = target.h * target.w;
    Tensor out(target.dims());
    for (std::size_t t = 0; t < target.t; ++t)
        for (std::size_t c = 0; c < target.c; ++c)
            std::copy_n(a.data() + t * hw, hw, out.data() + (t * target.c + c) * hw);
    r.attention.data = std::move(out);
    return r;
}

/// a_i = Repeat(((M_c V)^T W_V)^T) shaped like the next stage's feature map.
inline AttentionMap generate_attention(const Tensor& f, const MapShape& target, const CpagParams& p) {
    return cpag_forward(f, target, p).attention;
}

/// Accumulates parameter gradients into `p` and returns dL/df.
inline Tensor cpag_backward(const Tensor& d_attention, const CpagCache& cache, CpagParams& p) {
    instrument::count_cltd_op();
    const std::size_t t_len = d_attention.extent(0), c_out = d_attention.extent(1);
    const std::size_t h_out = d_attention.extent(2), w_out = d_attention.extent(3), hw = h_out * w_out;

    Tensor da({t_len, h_out, w_out});  // sum over repeated channels
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < c_out; ++c) {
            const double* g = d_attention.data() + (t * c_out + c) * hw;
            double* o = da.data() + t * hw;
            for (std::size_t i = 0; i < hw; ++i) o[i] += g[i];
        }
    const Tensor dy = transpose_last(da);  // T×W'×H'
    const Tensor dx = separate_fc_backward(cache.x, p.v_weight.value, dy, p.v_weight.grad, p.v_bias.grad);
    const Tensor dmixed = transpose_last(dx);  // T×H×W'

    // mixed = M V  =>  dM = dmixed V^T (per flattened frame), dV = M^T dmixed
    const std::size_t inner = cache.v.size() / t_len;
    const Tensor v2 = cache.v.reshaped({t_len, inner});
    const Tensor dm2 = dmixed.reshaped({t_len, inner});
    const Tensor dcorr = ops::matmul_bt(dm2, v2);
    const Tensor dv = ops::matmul_at(cache.tc.corr, dm2).reshaped(cache.v.shape());

    const Tensor dv_in = separate_fc_backward(cache.v_in, p.h_weight.value, dv, p.h_weight.grad, p.h_bias.grad);

    const Tensor dlogits = ops::softmax_rows_backward(cache.tc.corr, dcorr);
    const double gamma = p.gamma();
    // logits = Q K^T / gamma
    Tensor dq = ops::matmul(dlogits, cache.tc.k);
    dq *= 1.0 / gamma;
    Tensor dk = ops::matmul_at(dlogits, cache.tc.q);
    dk *= 1.0 / gamma;
    double dgamma = 0.0;
    {
        const Tensor qk = ops::matmul_bt(cache.tc.q, cache.tc.k);
        for (std::size_t i = 0; i < qk.size(); ++i) dgamma -= dlogits[i] * qk[i];
        dgamma /= gamma * gamma;
    }
    p.gamma_raw.grad[0] += dgamma * ops::sigmoid(p.gamma_raw.value[0]);

    Tensor dpooled = ops::conv1d_backward(cache.tc.pooled, p.q_weight.value, dq, p.q_weight.grad, p.q_bias.grad);
    Tensor unused_bias_grad({p.in_c});
    dpooled += ops::conv1d_backward(cache.tc.pooled, p.k_weight.value, dk, p.k_weight.grad, unused_bias_grad);

    Tensor df = ops::spatial_pool_backward(cache.in_shape, dpooled);
    ops::channel_pool_backward_accumulate(dv_in, df);
    return df;
}

/// Leading-order complexity terms and this implementation's exact MAC tally.
struct CpagFlops {
    std::uint64_t naive_formula = 0;       // 2 t^2 h^2 w^2 c
    std::uint64_t cpag_formula = 0;        // t^2 (c + h w)
    std::uint64_t exact_attention = 0;     // t^2 c + t^2 h w'
    std::uint64_t exact_projection = 0;    // two conv1d + H-FC + V-FC
    std::uint64_t exact_total() const { return exact_attention + exact_projection; }
};

inline std::uint64_t naive_attention_flops(std::uint64_t t, std::uint64_t c, std::uint64_t h, std::uint64_t w) {
    return 2 * t * t * h * h * w * w * c;
}

inline CpagFlops cpag_flops(std::uint64_t t, std::uint64_t c, std::uint64_t h, std::uint64_t w, std::uint64_t c_out,
                            std::uint64_t h_out, std::uint64_t w_out) {
    (void)c_out;  // channel repeat is a copy
    CpagFlops f;
    f.naive_formula = naive_attention_flops(t, c, h, w);
    f.cpag_formula = t * t * (c + h * w);
    f.exact_attention = t * t * c + t * t * h * w_out;
    f.exact_projection = 2 * t * c * c * ops::kConv1dKernel + t * h * w * w_out + t * w_out * h * h_out;
    return f;
}

}  // namespace cltd
