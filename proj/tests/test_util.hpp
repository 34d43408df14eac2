#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "cltd/tensor.hpp"

namespace cltd::testing {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    auto r = rng(seed);
    return Tensor::uniform(std::move(s), r, lo, hi);
}

/// O(N^2) DFT straight from the definition; returns (re, im) uncentered.
inline std::pair<Tensor, Tensor> naive_dft2(const Tensor& x) {
    const std::size_t h = x.extent(0), w = x.extent(1);
    Tensor re({h, w}), im({h, w});
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            long double sr = 0, si = 0;
            for (std::size_t a = 0; a < h; ++a)
                for (std::size_t b = 0; b < w; ++b) {
                    const long double ang = -2.0L * std::numbers::pi_v<long double> *
                                            (static_cast<long double>(u * a % h) / h + static_cast<long double>(v * b % w) / w);
                    sr += x(a, b) * std::cos(ang);
                    si += x(a, b) * std::sin(ang);
                }
            re(u, v) = static_cast<double>(sr);
            im(u, v) = static_cast<double>(si);
        }
    return {re, im};
}

/// Centering by explicit index shift: out[(u + h/2) % h][(v + w/2) % w] = in[u][v].
inline Tensor shift_center(const Tensor& in) {
    const std::size_t h = in.extent(0), w = in.extent(1);
    Tensor out({h, w});
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) out((u + h / 2) % h, (v + w / 2) % w) = in(u, v);
    return out;
}

}  // namespace cltd::testing
