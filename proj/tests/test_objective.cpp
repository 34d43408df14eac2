#include <gtest/gtest.h>

#include <random>

#include "cltd/gradcheck.hpp"
#include "cltd/objective.hpp"
#include "test_util.hpp"

using namespace cltd;
using cltd::testing::random_tensor;

namespace {

double triplet_oracle(const Tensor& e, const std::vector<std::size_t>& y, double margin) {
    const std::size_t n = e.extent(0), d = e.extent(1);
    auto dist = [&](std::size_t i, std::size_t j) {
        long double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += (e(i, k) - e(j, k)) * (e(i, k) - e(j, k));
        return std::sqrt(s);
    };
    long double sum = 0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q) {
                if (p == a || y[p] != y[a] || y[q] == y[a]) continue;
                ++count;
                sum += std::max(0.0L, dist(a, p) - dist(a, q) + margin);
            }
    return static_cast<double>(sum / count);
}

StageLossBundle bundle(double total) {
    StageLossBundle b;
    b.total = total;
    return b;
}

}  // namespace

TEST(Triplet, IdenticalEmbeddingsGiveMargin) {
    Tensor e({6, 4});
    e.fill(0.3);
    Tensor g;
    EXPECT_NEAR(triplet_loss(e, {0, 0, 1, 1, 2, 2}, 0.2, &g), 0.2, 1e-15);
    for (double v : g.span()) EXPECT_EQ(v, 0.0);
}

TEST(Triplet, WellSeparatedClassesGiveZero) {
    Tensor e({4, 2});
    e(0, 0) = 0.0, e(1, 0) = 0.01, e(2, 0) = 100.0, e(3, 0) = 100.02;
    Tensor g;
    EXPECT_EQ(triplet_loss(e, {0, 0, 1, 1}, 0.2, &g), 0.0);
    for (double v : g.span()) EXPECT_EQ(v, 0.0);
}

TEST(Triplet, MatchesTripleLoopOracle) {
    for (std::uint64_t seed : {1, 2, 3}) {
        const Tensor e = random_tensor({8, 5}, seed);
        const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2, 0, 3};
        EXPECT_NEAR(triplet_loss(e, y, 0.5), triplet_oracle(e, y, 0.5), 1e-12);
    }
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed : {4, 5, 6}) {
        const Tensor e = random_tensor({8, 3}, seed);
        const std::vector<std::size_t> y{0, 0, 1, 1, 2, 2, 0, 1};
        Tensor g;
        triplet_loss(e, y, 0.3, &g);
        EXPECT_LE(max_relative_error(g, finite_diff_grad([&](const Tensor& v) { return triplet_loss(v, y, 0.3); }, e)),
                  1e-4);
    }
}

TEST(Triplet, InvalidBatchesAreLossErrors) {
    const Tensor e = random_tensor({3, 2}, 7);
    try {
        triplet_loss(e, {1, 1, 1}, 0.2);
        FAIL();
    } catch (const Error& ex) {
        EXPECT_EQ(ex.code(), "loss_error");
    }
    EXPECT_THROW(triplet_loss(e, {0, 1, 2}, 0.2), Error);  // no positives
    EXPECT_THROW(triplet_loss(e, {0, 1}, 0.2), Error);
}

TEST(HeadCe, MatchesDirectSoftmaxAndFiniteDifferences) {
    for (std::uint64_t seed : {8, 9, 10}) {
        auto r = cltd::testing::rng(seed);
        auto head = ClassifierHead::init(4, 3, r);
        head.bias.value = random_tensor({4}, seed + 1);
        const Tensor e = random_tensor({5, 3}, seed + 2);
        const std::vector<std::size_t> y{0, 3, 1, 1, 2};
        double ref = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            double z = 0, target = 0;
            for (std::size_t c = 0; c < 4; ++c) {
                double s = head.bias.value[c];
                for (std::size_t k = 0; k < 3; ++k) s += head.weight.value(c, k) * e(i, k);
                z += std::exp(s);
                if (c == y[i]) target = s;
            }
            ref += std::log(z) - target;
        }
        head.for_each([](Parameter& p) { p.zero_grad(); });
        Tensor g;
        EXPECT_NEAR(head_ce_loss(e, y, head, &g), ref / 5.0, 1e-12);
        // loss evaluations run on a copy so they do not touch the analytic gradients
        auto loss_at = [&](const Tensor& emb) {
            auto h = head;
            return head_ce_loss(emb, y, h);
        };
        EXPECT_LE(max_relative_error(g, finite_diff_grad(loss_at, e)), 1e-4);
        head.for_each([&](Parameter& p) {
            EXPECT_LE(check_parameter(p, [&] { return loss_at(e); }, 1e-5, 64, seed).max_rel_error, 1e-4) << p.name;
        });
    }
}

TEST(HeadCe, RejectsOutOfRangeLabel) {
    auto r = cltd::testing::rng(1);
    auto head = ClassifierHead::init(2, 3, r);
    EXPECT_THROW(head_ce_loss(Tensor({1, 3}), {2}, head), Error);
}

TEST(TotalLoss, WorkedExample) {
    EXPECT_NEAR(total_loss(0.5, 0.7, {bundle(1), bundle(1), bundle(1)}, {0.1, 0.2, 0.3}), 1.8, 1e-12);
}

TEST(TotalLoss, ZeroLambdaIsBaseline) {
    EXPECT_EQ(total_loss(0.5, 0.7, {bundle(3), bundle(4), bundle(5)}, {0, 0, 0}), 0.5 + 0.7);
}

TEST(TotalLoss, MatchesHandSum) {
    std::mt19937_64 r(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int rep = 0; rep < 20; ++rep) {
        const double tri = u(r), ce = u(r);
        std::vector<StageLossBundle> b;
        std::vector<double> lam;
        double ref = tri + ce;
        for (int i = 0; i < 3; ++i) {
            b.push_back(bundle(u(r)));
            lam.push_back(u(r));
            ref += lam.back() * b.back().total;
        }
        EXPECT_NEAR(total_loss(tri, ce, b, lam), ref, 1e-12);
    }
}

TEST(TotalLoss, MonotoneInEachLambda) {
    const std::vector<StageLossBundle> b{bundle(0.4), bundle(1.3), bundle(2.0)};
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> lam{0.1, 0.2, 0.3};
        double prev = total_loss(0.5, 0.7, b, lam);
        for (int step = 0; step < 5; ++step) {
            lam[i] += 0.25;
            const double cur = total_loss(0.5, 0.7, b, lam);
            EXPECT_GE(cur, prev);
            prev = cur;
        }
    }
}

TEST(TotalLoss, LengthMismatchIsValidationError) {
    try {
        total_loss(0, 0, {bundle(1)}, {0.1, 0.2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "validation_error");
    }
}
