#pragma once

// Finite-difference gradient suite over every parameterized op on micro
// shapes. Each op is checked on three seeds; the entry keeps the worst
// relative error over all seeds and tensors.

#include <functional>
#include <string>
#include <vector>

#include "cltd/backbone.hpp"
#include "cltd/gradcheck.hpp"
#include "cltd/objective.hpp"
#include "cltd/synth_gait.hpp"

namespace cltd {

inline constexpr double kGradTolerance = 1e-4;

struct GradCheckEntry {
    std::string op;
    std::size_t seeds = 0;
    std::size_t coords = 0;
    double max_rel_error = 0.0;

    bool passed() const { return max_rel_error <= kGradTolerance; }
};

namespace grad_detail {

inline Tensor rand(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 r(seed);
    return Tensor::uniform(std::move(s), r, lo, hi);
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct Acc {
    GradCheckEntry e;

    void add(const Tensor& analytic, const Tensor& numeric) {
        e.max_rel_error = std::max(e.max_rel_error, max_relative_error(analytic, numeric));
        e.coords += analytic.size();
    }
    void add(const GradCheckResult& r) {
        e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
        e.coords += r.coords_checked;
    }
};

template <class Body>
GradCheckEntry run(const std::string& op, std::uint64_t seed, Body&& body) {
    Acc acc;
    acc.e.op = op;
    for (std::uint64_t i = 0; i < 3; ++i) {
        body(acc, synth::mix_seed(seed, i) % 1000003);
        ++acc.e.seeds;
    }
    return acc.e;
}

template <class P>
void randomize_biases(P& p, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    p.for_each([&](Parameter& q) {
        if (q.name.find("bias") != std::string::npos) q.value = Tensor::uniform(q.value.shape(), r, -0.3, 0.3);
    });
}

inline const MapShape kStageIn{3, 2, 6, 5};
inline const MapShape kStageNext{3, 3, 4, 4};

}  // namespace grad_detail

inline GradCheckEntry gradcheck_conv1d(std::uint64_t seed) {
    using namespace grad_detail;
    return run("conv1d", seed, [](Acc& acc, std::uint64_t s) {
        const Tensor x = rand({5, 3}, s), w = rand({3, 3, 3}, s + 1), b = rand({3}, s + 2), up = rand({5, 3}, s + 3);
        Tensor dw(w.shape()), db(b.shape());
        const Tensor dx = ops::conv1d_backward(x, w, up, dw, db);
        acc.add(dx, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv1d(v, w, b)); }, x));
        acc.add(dw, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv1d(x, v, b)); }, w));
        acc.add(db, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv1d(x, w, v)); }, b));
    });
}

inline GradCheckEntry gradcheck_conv3x3(std::uint64_t seed) {
    using namespace grad_detail;
    return run("backbone.conv3x3", seed, [](Acc& acc, std::uint64_t s) {
        const Tensor x = rand({2, 2, 4, 5}, s), w = rand({3, 2, 3, 3}, s + 1), b = rand({3}, s + 2),
                     up = rand({2, 3, 4, 5}, s + 3);
        Tensor dw(w.shape()), db(b.shape());
        const Tensor dx = ops::conv3x3_backward(x, w, up, dw, db);
        acc.add(dx, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv3x3(v, w, b)); }, x));
        acc.add(dw, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv3x3(x, v, b)); }, w));
        acc.add(db, finite_diff_grad([&](const Tensor& v) { return dot(up, ops::conv3x3(x, w, v)); }, b));
    });
}

/// CPAG with the parameter groups reported separately. `names` selects the
/// parameters checked; an empty list checks the input map.
inline GradCheckEntry gradcheck_cpag(const std::string& op, const std::vector<std::string>& names, std::uint64_t seed) {
    using namespace grad_detail;
    return run(op, seed, [&](Acc& acc, std::uint64_t s) {
        std::mt19937_64 r(s);
        auto p = CpagParams::init(3, 4, 5, 2, 3, 2, r);
        randomize_biases(p, s + 1);
        const Tensor f = rand({4, 3, 4, 5}, s + 2, -0.5, 1.5);
        const MapShape tgt{4, 2, 3, 2};
        const Tensor up = rand(tgt.dims(), s + 3);
        auto loss_of = [&](const Tensor& in) { return dot(up, generate_attention(in, tgt, p).data); };
        p.for_each([](Parameter& q) { q.zero_grad(); });
        const auto fwd = cpag_forward(f, tgt, p);
        const Tensor df = cpag_backward(up, fwd.cache, p);
        if (names.empty()) {
            acc.add(df, finite_diff_grad(loss_of, f));
            return;
        }
        p.for_each([&](Parameter& q) {
            for (const auto& n : names)
                if (q.name == "cpag." + n) acc.add(check_parameter(q, [&] { return loss_of(f); }, 1e-5, 200, s));
        });
    });
}

inline GradCheckEntry gradcheck_fph(ops::PoolMode pool, std::uint64_t seed) {
    using namespace grad_detail;
    const std::string op = pool == ops::PoolMode::Mean ? "fph.W_P(mean)" : "fph.W_P(max)";
    return run(op, seed, [&](Acc& acc, std::uint64_t s) {
        std::mt19937_64 r(s);
        auto p = FphParams::init(2, 3, 2, r, "fph", pool);
        randomize_biases(p, s + 1);
        const Tensor x = rand({3, 2, 5, 6}, s + 2, -0.4, 0.4), up = rand({p.feature_dim()}, s + 3);
        auto loss_of = [&](const Tensor& in) { return dot(up, fph_forward(in, p).data); };
        p.for_each([](Parameter& q) { q.zero_grad(); });
        const auto fwd = fph_forward_cached(x, p);
        acc.add(fph_backward(up, fwd.cache, p), finite_diff_grad(loss_of, x));
        p.for_each([&](Parameter& q) { acc.add(check_parameter(q, [&] { return loss_of(x); }, 1e-5, 200, s)); });
    });
}

/// Classifier W_c, b_c and the TDE features x_f, x_cf.
inline GradCheckEntry gradcheck_tde(std::uint64_t seed) {
    using namespace grad_detail;
    return run("tde+W_c", seed, [](Acc& acc, std::uint64_t s) {
        const Tensor w = rand({4, 6}, s), b = rand({4}, s + 1), xf = rand({6}, s + 2), xcf = rand({6}, s + 3);
        const std::size_t y = s % 4;
        TdeGrads g;
        Tensor dw(w.shape()), db(b.shape());
        tde_loss(xf.span(), xcf.span(), w, b, y, &g, &dw, &db);
        acc.add(Tensor({6}, g.x_f),
                finite_diff_grad([&](const Tensor& v) { return tde_loss(v.span(), xcf.span(), w, b, y); }, xf));
        acc.add(Tensor({6}, g.x_cf),
                finite_diff_grad([&](const Tensor& v) { return tde_loss(xf.span(), v.span(), w, b, y); }, xcf));
        acc.add(dw, finite_diff_grad([&](const Tensor& v) { return tde_loss(xf.span(), xcf.span(), v, b, y); }, w));
        acc.add(db, finite_diff_grad([&](const Tensor& v) { return tde_loss(xf.span(), xcf.span(), w, v, y); }, b));
    });
}

inline GradCheckEntry gradcheck_info_nce(NceVariant variant, std::uint64_t seed) {
    using namespace grad_detail;
    return run("info_nce(" + to_string(variant) + ")", seed, [&](Acc& acc, std::uint64_t s) {
        // positive entries keep literal-variant similarities positive
        const Tensor a = rand({4}, s, 0.1, 1.0), p0 = rand({4}, s + 1, 0.1, 1.0), p1 = rand({4}, s + 2, 0.1, 1.0),
                     n0 = rand({4}, s + 3, 0.1, 1.0), n1 = rand({4}, s + 4, 0.1, 1.0);
        NceGrads g;
        info_nce(a.span(), {p0.span(), p1.span()}, {n0.span(), n1.span()}, variant, &g);
        acc.add(Tensor({4}, g.anchor), finite_diff_grad([&](const Tensor& v) {
                    return info_nce(v.span(), {p0.span(), p1.span()}, {n0.span(), n1.span()}, variant);
                }, a));
        acc.add(Tensor({4}, g.positives[0]), finite_diff_grad([&](const Tensor& v) {
                    return info_nce(a.span(), {v.span(), p1.span()}, {n0.span(), n1.span()}, variant);
                }, p0));
        acc.add(Tensor({4}, g.negatives[1]), finite_diff_grad([&](const Tensor& v) {
                    return info_nce(a.span(), {p0.span(), p1.span()}, {n0.span(), v.span()}, variant);
                }, n1));
    });
}

inline GradCheckEntry gradcheck_triplet(std::uint64_t seed) {
    using namespace grad_detail;
    return run("triplet", seed, [](Acc& acc, std::uint64_t s) {
        const Tensor e = rand({8, 3}, s);
        const std::vector<std::size_t> y{0, 0, 1, 1, 2, 2, 0, 1};
        Tensor g;
        triplet_loss(e, y, 0.3, &g);
        acc.add(g, finite_diff_grad([&](const Tensor& v) { return triplet_loss(v, y, 0.3); }, e));
    });
}

inline GradCheckEntry gradcheck_head_ce(std::uint64_t seed) {
    using namespace grad_detail;
    return run("head_ce", seed, [](Acc& acc, std::uint64_t s) {
        std::mt19937_64 r(s);
        auto head = ClassifierHead::init(4, 3, r);
        head.bias.value = rand({4}, s + 1);
        const Tensor e = rand({5, 3}, s + 2);
        const std::vector<std::size_t> y{0, 3, 1, 1, 2};
        auto loss_at = [&](const Tensor& emb) {
            auto h = head;
            return head_ce_loss(emb, y, h);
        };
        head.for_each([](Parameter& p) { p.zero_grad(); });
        Tensor g;
        head_ce_loss(e, y, head, &g);
        acc.add(g, finite_diff_grad(loss_at, e));
        head.for_each([&](Parameter& p) { acc.add(check_parameter(p, [&] { return loss_at(e); }, 1e-5, 64, s)); });
    });
}

/// d total / d (tri, ce, stage totals) = (1, 1, lambda).
inline GradCheckEntry gradcheck_total_loss(std::uint64_t seed) {
    using namespace grad_detail;
    return run("total_loss", seed, [](Acc& acc, std::uint64_t s) {
        const Tensor point = rand({5}, s, 0.0, 3.0), lam = rand({3}, s + 1, 0.0, 1.0);
        auto f = [&](const Tensor& v) {
            std::vector<StageLossBundle> b(3);
            for (std::size_t i = 0; i < 3; ++i) b[i] = StageLossBundle::from_parts(v[2 + i], 0.0);
            return total_loss(v[0], v[1], b, {lam[0], lam[1], lam[2]});
        };
        acc.add(Tensor({5}, {1.0, 1.0, lam[0], lam[1], lam[2]}), finite_diff_grad(f, point));
    });
}

/// Whole CLTD stage: CPAG pair, attention, FPH, InfoNCE and TDE together.
inline GradCheckEntry gradcheck_stage(NceVariant variant, std::uint64_t seed) {
    using namespace grad_detail;
    return run("cltd_stage(" + to_string(variant) + ")", seed, [&](Acc& acc, std::uint64_t s) {
        std::mt19937_64 r(s);
        auto st = CltdStage::init(1, kStageIn, kStageNext, 3, 2, 3, r);
        randomize_biases(st, s + 1);
        st.variant = variant;
        if (variant == NceVariant::Literal) st.fph.proj_bias.value.fill(0.7);  // keeps similarities positive
        std::vector<Tensor> fi, fn;
        for (std::uint64_t i = 0; i < 4; ++i) {
            // nonzero-mean inputs keep the pooled Q/K path well conditioned for central differences
            fi.push_back(rand(kStageIn.dims(), s * 10 + i, -0.5, 1.5));
            fn.push_back(rand(kStageNext.dims(), s * 20 + i));
        }
        const std::vector<std::size_t> labels{1, 0, 1, 0};
        st.for_each([](Parameter& p) { p.zero_grad(); });
        StageInputGrads ig;
        stage_loss(fi, fn, labels, st, &ig);
        auto loss = [&] { return stage_loss(fi, fn, labels, st).total; };
        st.for_each([&](Parameter& p) { acc.add(check_parameter(p, loss, 1e-5, 40, s)); });
        acc.add(ig.d_fi[0], finite_diff_grad([&](const Tensor& x) {
                    auto v = fi;
                    v[0] = x;
                    return stage_loss(v, fn, labels, st).total;
                }, fi[0]));
        acc.add(ig.d_fnext[3], finite_diff_grad([&](const Tensor& x) {
                    auto v = fn;
                    v[3] = x;
                    return stage_loss(fi, v, labels, st).total;
                }, fn[3]));
    });
}

/// Runs every check; `progress` is called after each op.
inline std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed,
                                                       const std::function<void(const GradCheckEntry&)>& progress = {}) {
    std::vector<std::function<GradCheckEntry()>> checks = {
        [&] { return gradcheck_conv1d(seed); },
        [&] { return gradcheck_conv3x3(seed); },
        [&] { return gradcheck_cpag("cpag.conv_qk", {"q_weight", "q_bias", "k_weight"}, seed); },
        [&] { return gradcheck_cpag("cpag.gamma", {"gamma_raw"}, seed); },
        [&] { return gradcheck_cpag("cpag.h_fc", {"h_weight", "h_bias"}, seed); },
        [&] { return gradcheck_cpag("cpag.v_fc", {"v_weight", "v_bias"}, seed); },
        [&] { return gradcheck_cpag("cpag.input", {}, seed); },
        [&] { return gradcheck_fph(ops::PoolMode::Mean, seed); },
        [&] { return gradcheck_fph(ops::PoolMode::Max, seed); },
        [&] { return gradcheck_tde(seed); },
        [&] { return gradcheck_info_nce(NceVariant::Exp, seed); },
        [&] { return gradcheck_info_nce(NceVariant::Literal, seed); },
        [&] { return gradcheck_triplet(seed); },
        [&] { return gradcheck_head_ce(seed); },
        [&] { return gradcheck_total_loss(seed); },
        [&] { return gradcheck_stage(NceVariant::Exp, seed); },
        [&] { return gradcheck_stage(NceVariant::Literal, seed); },
    };
    std::vector<GradCheckEntry> out;
    for (const auto& c : checks) {
        out.push_back(c());
        if (progress) progress(out.back());
    }
    return out;
}

}  // namespace cltd
