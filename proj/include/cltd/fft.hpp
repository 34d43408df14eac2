#pragma once

#include <array>
#include <complex>
#include <map>
#include <numbers>
#include <vector>

#include "cltd/tensor.hpp"

namespace cltd {

struct ComplexSpectrum {
    Tensor real;
    Tensor imag;
};

namespace fft {

using cplx = std::complex<double>;

/// Mixed-radix decimation-in-time plan for arbitrary n. Prime factors are
/// handled by a direct butterfly, so any length works; cost is n * sum(factors).
class Plan {
public:
    explicit Plan(std::size_t n) : n_(n), twiddle_(n) {
        for (std::size_t k = 0; k < n; ++k) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            twiddle_[k] = {std::cos(ang), std::sin(ang)};
        }
        scratch_.resize(n);
    }

    std::size_t size() const noexcept { return n_; }

    /// In-place transform over `n` elements spaced by `stride`. inverse=true
    /// gives the unnormalized conjugate transform.
    void execute(cplx* data, std::size_t stride, bool inverse) {
        gather_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) gather_[i] = data[i * stride];
        recurse(gather_.data(), n_, 1, scratch_.data(), inverse);
        for (std::size_t i = 0; i < n_; ++i) data[i * stride] = scratch_[i];
    }

private:
    static std::size_t smallest_factor(std::size_t n) {
        if (n % 4 == 0) return 4;
        for (std::size_t p = 2; p * p <= n; ++p)
            if (n % p == 0) return p;
        return n;
    }

    cplx w(std::size_t exponent_over_n, std::size_t n, bool inverse) const {
        // W_n^e == W_N^(e * N / n)
        const cplx v = twiddle_[(exponent_over_n % n) * (n_ / n)];
        return inverse ? std::conj(v) : v;
    }

    void recurse(const cplx* in, std::size_t n, std::size_t stride, cplx* out, bool inverse) {
        if (n == 1) {
            out[0] = in[0];
            return;
        }
        const std::size_t p = smallest_factor(n);
        const std::size_t m = n / p;
        for (std::size_t r = 0; r < p; ++r) recurse(in + r * stride, m, stride * p, out + r * m, inverse);
        std::vector<cplx> tmp(n);
        for (std::size_t k = 0; k < n; ++k) {
            cplx s = out[k % m];
            for (std::size_t r = 1; r < p; ++r) s += w(r * k, n, inverse) * out[r * m + (k % m)];
            tmp[k] = s;
        }
        std::copy(tmp.begin(), tmp.end(), out);
    }

    std::size_t n_;
    std::vector<cplx> twiddle_;
    std::vector<cplx> scratch_;
    std::vector<cplx> gather_;
};

inline Plan& cached_plan(std::size_t n) {
    thread_local std::map<std::size_t, Plan> plans;
    auto it = plans.find(n);
    if (it == plans.end()) it = plans.emplace(n, Plan(n)).first;
    return it->second;
}

/// Full 2-D complex transform of an h×w row-major buffer.
inline void transform2d(std::vector<cplx>& buf, std::size_t h, std::size_t w, bool inverse) {
    auto& row_plan = cached_plan(w);
    for (std::size_t r = 0; r < h; ++r) row_plan.execute(buf.data() + r * w, 1, inverse);
    auto& col_plan = cached_plan(h);
    for (std::size_t c = 0; c < w; ++c) col_plan.execute(buf.data() + c, w, inverse);
}

/// Index of the centered bin for frequency index u of an n-point transform.
inline std::size_t centered_index(std::size_t u, std::size_t n) { return (u + n / 2) % n; }

}  // namespace fft

/// Unnormalized forward 2-D DFT of a real H×W map. With `centered`, the zero
/// frequency lands at (H/2, W/2) (integer division).
inline ComplexSpectrum fft2d(const Tensor& x, bool centered = false) {
    x.require_rank(2, "fft2d");
    const std::size_t h = x.extent(0), w = x.extent(1);
    std::vector<fft::cplx> buf(h * w);
    for (std::size_t i = 0; i < h * w; ++i) buf[i] = x[i];
    fft::transform2d(buf, h, w, false);
    ComplexSpectrum out{Tensor({h, w}), Tensor({h, w})};
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t dst = centered ? fft::centered_index(u, h) * w + fft::centered_index(v, w) : u * w + v;
            out.real[dst] = buf[u * w + v].real();
            out.imag[dst] = buf[u * w + v].imag();
        }
    return out;
}

/// Normalized inverse of fft2d (same `centered` convention). Returns the
/// complex result; for spectra of real maps the imaginary part is ~0.
inline ComplexSpectrum ifft2d(const ComplexSpectrum& s, bool centered = false) {
    s.real.require_same_shape(s.imag, "ifft2d");
    s.real.require_rank(2, "ifft2d");
    const std::size_t h = s.real.extent(0), w = s.real.extent(1);
    std::vector<fft::cplx> buf(h * w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t src = centered ? fft::centered_index(u, h) * w + fft::centered_index(v, w) : u * w + v;
            buf[u * w + v] = {s.real[src], s.imag[src]};
        }
    fft::transform2d(buf, h, w, true);
    const double inv = 1.0 / static_cast<double>(h * w);
    ComplexSpectrum out{Tensor({h, w}), Tensor({h, w})};
    for (std::size_t i = 0; i < h * w; ++i) {
        out.real[i] = buf[i].real() * inv;
        out.imag[i] = buf[i].imag() * inv;
    }
    return out;
}

/// Adjoint of x -> (Re fft2d(x), Im fft2d(x)) for real x: maps spectrum-space
/// gradients back to the H×W input.
inline Tensor fft2d_adjoint(const Tensor& grad_real, const Tensor& grad_imag, bool centered = false) {
    auto back = ifft2d({grad_real, grad_imag}, centered);
    back.real *= static_cast<double>(grad_real.size());
    return back.real;
}

/// The k×k window of the centered spectrum starting at (r0, c0), computed
/// directly as a separable partial DFT: O(H·W·k + H·k²) instead of a full
/// transform. Matches cropping fft2d(x, centered=true) exactly in exact
/// arithmetic.
class WindowDft {
public:
    WindowDft(std::size_t h, std::size_t w, std::size_t k, std::size_t r0, std::size_t c0)
        : h_(h), w_(w), k_(k), row_cos_(k * h), row_sin_(k * h), col_cos_(k * w), col_sin_(k * w) {
        if (r0 + k > h || c0 + k > w) throw dimension_error("window dft: window exceeds the map");
        auto fill = [](std::size_t n, std::size_t k, std::size_t first, std::vector<double>& c, std::vector<double>& s) {
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t freq = (first + i + n - n / 2) % n;  // undo the centering shift
                for (std::size_t a = 0; a < n; ++a) {
                    const double ang = 2.0 * std::numbers::pi * static_cast<double>(freq * a % n) / static_cast<double>(n);
                    c[i * n + a] = std::cos(ang);
                    s[i * n + a] = std::sin(ang);
                }
            }
        };
        fill(h, k, r0, row_cos_, row_sin_);
        fill(w, k, c0, col_cos_, col_sin_);
        col_cos_t_.resize(k * w);
        col_sin_t_.resize(k * w);
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t b = 0; b < w; ++b) {
                col_cos_t_[b * k + j] = col_cos_[j * w + b];
                col_sin_t_[b * k + j] = col_sin_[j * w + b];
            }
        tmp_re_.resize(h * k);
        tmp_im_.resize(h * k);
    }

    /// x: h×w real. re/im: k×k outputs.
    void forward(const double* x, double* re, double* im) {
        // along columns: R[a][j] = sum_b x[a][b] e^{-i phi_j b}
        for (std::size_t a = 0; a < h_; ++a) {
            const double* row = x + a * w_;
            double* tr = tmp_re_.data() + a * k_;
            double* ti = tmp_im_.data() + a * k_;
            std::fill_n(tr, k_, 0.0);
            std::fill_n(ti, k_, 0.0);
            for (std::size_t b = 0; b < w_; ++b) {
                const double xb = row[b];
                if (xb == 0.0) continue;  // silhouettes and ReLU maps are sparse
                const double* c = col_cos_t_.data() + b * k_;
                const double* s = col_sin_t_.data() + b * k_;
                for (std::size_t j = 0; j < k_; ++j) {
                    tr[j] += xb * c[j];
                    ti[j] -= xb * s[j];
                }
            }
        }
        // along rows: S[i][j] = sum_a R[a][j] e^{-i psi_i a}
        for (std::size_t i = 0; i < k_; ++i) {
            const double* c = row_cos_.data() + i * h_;
            const double* s = row_sin_.data() + i * h_;
            for (std::size_t j = 0; j < k_; ++j) {
                double sr = 0.0, si = 0.0;
                #pragma omp simd reduction(+ : sr, si)
                for (std::size_t a = 0; a < h_; ++a) {
                    const double rr = tmp_re_[a * k_ + j], ri = tmp_im_[a * k_ + j];
                    sr += rr * c[a] + ri * s[a];
                    si += ri * c[a] - rr * s[a];
                }
                re[i * k_ + j] = sr;
                im[i * k_ + j] = si;
            }
        }
    }

    /// Adjoint of forward: dx[a][b] = Re sum_ij (g_re + i g_im)[i][j] e^{+i(psi_i a + phi_j b)}.
    /// Writes (does not accumulate) the h×w result.
    void adjoint(const double* g_re, const double* g_im, double* dx) {
        for (std::size_t a = 0; a < h_; ++a)
            for (std::size_t j = 0; j < k_; ++j) {
                double tr = 0.0, ti = 0.0;
                for (std::size_t i = 0; i < k_; ++i) {
                    const double c = row_cos_[i * h_ + a], s = row_sin_[i * h_ + a];
                    const double gr = g_re[i * k_ + j], gi = g_im[i * k_ + j];
                    tr += gr * c - gi * s;
                    ti += gr * s + gi * c;
                }
                tmp_re_[a * k_ + j] = tr;
                tmp_im_[a * k_ + j] = ti;
            }
        for (std::size_t a = 0; a < h_; ++a) {
            double* out = dx + a * w_;
            std::fill_n(out, w_, 0.0);
            for (std::size_t j = 0; j < k_; ++j) {
                const double tr = tmp_re_[a * k_ + j], ti = tmp_im_[a * k_ + j];
                const double* c = col_cos_.data() + j * w_;
                const double* s = col_sin_.data() + j * w_;
                for (std::size_t b = 0; b < w_; ++b) out[b] += tr * c[b] - ti * s[b];
            }
        }
    }

private:
    std::size_t h_, w_, k_;
    std::vector<double> row_cos_, row_sin_, col_cos_, col_sin_;
    std::vector<double> col_cos_t_, col_sin_t_;  // b-major copies for the forward column pass
    std::vector<double> tmp_re_, tmp_im_;
};

inline WindowDft& cached_window_dft(std::size_t h, std::size_t w, std::size_t k, std::size_t r0, std::size_t c0) {
    thread_local std::map<std::array<std::size_t, 5>, WindowDft> plans;
    const std::array<std::size_t, 5> key{h, w, k, r0, c0};
    auto it = plans.find(key);
    if (it == plans.end()) it = plans.emplace(key, WindowDft(h, w, k, r0, c0)).first;
    return it->second;
}

}  // namespace cltd
