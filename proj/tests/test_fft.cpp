#include <gtest/gtest.h>

#include "cltd/fft.hpp"
#include "test_util.hpp"

using namespace cltd;
using cltd::testing::naive_dft2;
using cltd::testing::random_tensor;
using cltd::testing::shift_center;

TEST(Fft2d, ConstantImageHasOnlyDc) {
    const std::size_t h = 6, w = 11;
    const double c = 0.75;
    const auto s = fft2d(Tensor({h, w}, c));
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            const double expect = (u == 0 && v == 0) ? c * h * w : 0.0;
            EXPECT_NEAR(s.real(u, v), expect, 1e-9);
            EXPECT_NEAR(s.imag(u, v), 0.0, 1e-9);
        }
    const auto centered = fft2d(Tensor({h, w}, c), true);
    EXPECT_NEAR(centered.real(h / 2, w / 2), c * h * w, 1e-9);
}

TEST(Fft2d, ImpulseIsFlat) {
    Tensor x({5, 8});
    x(0, 0) = 1.0;
    const auto s = fft2d(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(s.real[i], 1.0, 1e-12);
        EXPECT_NEAR(s.imag[i], 0.0, 1e-12);
    }
}

class FftSizes : public ::testing::TestWithParam<std::pair<std::size_t, std::size_t>> {};

TEST_P(FftSizes, MatchesNaiveDftAndParseval) {
    const auto [h, w] = GetParam();
    for (std::uint64_t seed : {1, 2, 3}) {
        const Tensor x = random_tensor({h, w}, seed * 31 + h);
        const auto s = fft2d(x);
        const auto [re, im] = naive_dft2(x);
        EXPECT_LE(max_abs_diff(s.real, re), 1e-9);
        EXPECT_LE(max_abs_diff(s.imag, im), 1e-9);

        const auto sc = fft2d(x, true);
        EXPECT_LE(max_abs_diff(sc.real, shift_center(re)), 1e-9);
        EXPECT_LE(max_abs_diff(sc.imag, shift_center(im)), 1e-9);

        double ex = 0, es = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            ex += x[i] * x[i];
            es += s.real[i] * s.real[i] + s.imag[i] * s.imag[i];
        }
        EXPECT_LE(std::abs(ex - es / static_cast<double>(h * w)) / ex, 1e-9);

        for (bool centered : {false, true}) {
            const auto back = ifft2d(fft2d(x, centered), centered);
            EXPECT_LE(max_abs_diff(back.real, x), 1e-9);
            for (double v : back.imag.vec()) EXPECT_NEAR(v, 0.0, 1e-9);
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Shapes, FftSizes,
                         ::testing::Values(std::pair<std::size_t, std::size_t>{6, 11}, std::pair<std::size_t, std::size_t>{16, 11},
                                           std::pair<std::size_t, std::size_t>{8, 8}, std::pair<std::size_t, std::size_t>{13, 7},
                                           std::pair<std::size_t, std::size_t>{1, 9}, std::pair<std::size_t, std::size_t>{64, 44},
                                           std::pair<std::size_t, std::size_t>{12, 18}));

TEST(Fft2d, AdjointIdentity) {
    // <F x, g> (real pairing of re/im parts) == <x, F^T g>
    for (bool centered : {false, true})
        for (std::uint64_t seed : {4, 5, 6}) {
            const Tensor x = random_tensor({7, 10}, seed);
            const Tensor gr = random_tensor({7, 10}, seed + 10), gi = random_tensor({7, 10}, seed + 20);
            const auto s = fft2d(x, centered);
            double lhs = 0, rhs = 0;
            for (std::size_t i = 0; i < x.size(); ++i) lhs += s.real[i] * gr[i] + s.imag[i] * gi[i];
            const Tensor back = fft2d_adjoint(gr, gi, centered);
            for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
            EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
        }
}

TEST(WindowDft, MatchesCroppedCenteredSpectrum) {
    struct Case { std::size_t h, w, k; };
    for (const auto& c : {Case{64, 44, 7}, Case{16, 11, 7}, Case{8, 8, 3}, Case{13, 7, 7}, Case{9, 12, 1}, Case{6, 6, 5}}) {
        const Tensor x = random_tensor({c.h, c.w}, c.h * 100 + c.w);
        const std::size_t r0 = (c.h - c.k) / 2, c0 = (c.w - c.k) / 2;
        const auto full = fft2d(x, true);
        WindowDft dft(c.h, c.w, c.k, r0, c0);
        std::vector<double> re(c.k * c.k), im(c.k * c.k);
        dft.forward(x.data(), re.data(), im.data());
        for (std::size_t u = 0; u < c.k; ++u)
            for (std::size_t v = 0; v < c.k; ++v) {
                EXPECT_NEAR(re[u * c.k + v], full.real(r0 + u, c0 + v), 1e-10) << c.h << "x" << c.w;
                EXPECT_NEAR(im[u * c.k + v], full.imag(r0 + u, c0 + v), 1e-10) << c.h << "x" << c.w;
            }
    }
}

TEST(WindowDft, AdjointMatchesFullAdjointOfZeroPaddedWindow) {
    const std::size_t h = 16, w = 11, k = 5, r0 = (h - k) / 2, c0 = (w - k) / 2;
    const Tensor gr = random_tensor({k, k}, 1), gi = random_tensor({k, k}, 2);
    Tensor pr({h, w}), pi({h, w});
    for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) {
            pr(r0 + u, c0 + v) = gr(u, v);
            pi(r0 + u, c0 + v) = gi(u, v);
        }
    const Tensor expected = fft2d_adjoint(pr, pi, true);
    WindowDft dft(h, w, k, r0, c0);
    Tensor got({h, w});
    dft.adjoint(gr.data(), gi.data(), got.data());
    EXPECT_LE(max_abs_diff(got, expected), 1e-10);
}

TEST(WindowDft, RejectsWindowOutsideMap) { EXPECT_THROW(WindowDft(8, 8, 5, 4, 0), Error); }
