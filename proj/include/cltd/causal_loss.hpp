#pragma once

// One CLTD stage: twin attention branches (factual / counterfactual) feeding a
// shared Fourier projection head, an anchor path on the raw next-stage map,
// a contrastive term over same-subject features and a TDE cross-entropy term.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cltd/cpag.hpp"
#include "cltd/fph.hpp"

namespace cltd {

enum class NceVariant {
    Exp,      // standard InfoNCE on exp(similarity), temperature 1
    Literal,  // log of raw similarity ratios; requires positive similarities
};

inline std::string to_string(NceVariant v) { return v == NceVariant::Exp ? "exp" : "literal"; }

inline NceVariant parse_nce_variant(const std::string& s) {
    if (s == "exp") return NceVariant::Exp;
    if (s == "literal") return NceVariant::Literal;
    throw validation_error("unknown InfoNCE variant '" + s + "' (expected exp|literal)");
}

struct CltdStage {
    std::size_t index = 1;  // 1-based position in the backbone
    double lambda = 0.0;
    NceVariant variant = NceVariant::Exp;
    bool use_nce = true;
    bool use_ce = true;

    CpagParams factual;
    CpagParams counterfactual;
    FphParams fph;  // shared by factual, counterfactual and anchor paths
    Parameter cls_weight;  // num_classes × feature_dim
    Parameter cls_bias;    // num_classes

    std::size_t num_classes() const { return cls_bias.value.size(); }

    template <class Rng>
    static CltdStage init(std::size_t index, const MapShape& in, const MapShape& next, std::size_t k, std::size_t c_out,
                          std::size_t num_classes, Rng& rng, double fph_gain = 1.0) {
        if (num_classes < 2) throw validation_error("cltd stage needs at least 2 classes");
        CltdStage s;
        s.index = index;
        const std::string prefix = "cltd" + std::to_string(index);
        s.factual = CpagParams::init(in.c, in.h, in.w, next.c, next.h, next.w, rng, prefix + ".factual");
        s.counterfactual = CpagParams::init(in.c, in.h, in.w, next.c, next.h, next.w, rng, prefix + ".counterfactual");
        s.fph = FphParams::init(next.c, k, c_out, rng, prefix + ".fph", ops::PoolMode::Mean, fph_gain);
        const std::size_t d = s.fph.feature_dim();
        s.cls_weight = {prefix + ".cls_weight",
                        Tensor::normal({num_classes, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)))};
        s.cls_bias = {prefix + ".cls_bias", Tensor({num_classes})};
        return s;
    }

    template <class F>
    void for_each(F&& f) {
        factual.for_each(f);
        counterfactual.for_each(f);
        fph.for_each(f);
        f(cls_weight);
        f(cls_bias);
    }
    template <class F>
    void for_each(F&& f) const {
        factual.for_each(f);
        counterfactual.for_each(f);
        fph.for_each(f);
        f(cls_weight);
        f(cls_bias);
    }
};

struct StageLossBundle {
    double l_nce = 0.0;
    double l_ce_fcf = 0.0;
    double total = 0.0;

    static StageLossBundle from_parts(double nce, double ce) { return {nce, ce, nce + ce}; }
};

// ---------------------------------------------------------------------------
// Similarity and losses on spectral features

using Vec = std::span<const double>;

/// Cosine similarity; 0 when either norm is below 1e-12. Optional gradients
/// w.r.t. both arguments are written (not accumulated).
inline double cosine_sim(Vec a, Vec b, std::span<double> da = {}, std::span<double> db = {}) {
    if (a.size() != b.size()) throw dimension_error("cosine_sim: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    #pragma omp simd reduction(+ : ab, aa, bb)
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na < 1e-12 || nb < 1e-12) {
        log::warn("cosine_sim: near-zero norm, similarity set to 0");
        std::fill(da.begin(), da.end(), 0.0);
        std::fill(db.begin(), db.end(), 0.0);
        return 0.0;
    }
    const double s = ab / (na * nb);
    if (!da.empty())
        for (std::size_t i = 0; i < a.size(); ++i) da[i] = b[i] / (na * nb) - s * a[i] / aa;
    if (!db.empty())
        for (std::size_t i = 0; i < a.size(); ++i) db[i] = a[i] / (na * nb) - s * b[i] / bb;
    return s;
}

struct NceGrads {
    std::vector<double> anchor;
    std::vector<std::vector<double>> positives;
    std::vector<std::vector<double>> negatives;
};

/// Contrastive loss of an anchor against same-subject factual (positive) and
/// counterfactual (negative) features, summed over positives.
inline double info_nce(Vec anchor, const std::vector<Vec>& positives, const std::vector<Vec>& negatives,
                       NceVariant variant = NceVariant::Exp, NceGrads* grads = nullptr) {
    if (positives.empty() || negatives.empty()) throw validation_error("info_nce: empty positive or negative set");
    const std::size_t d = anchor.size();
    std::vector<double> sp(positives.size()), sn(negatives.size());
    std::vector<std::vector<double>> ga_p, gx_p, ga_n, gx_n;
    if (grads) {
        ga_p.assign(positives.size(), std::vector<double>(d));
        gx_p.assign(positives.size(), std::vector<double>(d));
        ga_n.assign(negatives.size(), std::vector<double>(d));
        gx_n.assign(negatives.size(), std::vector<double>(d));
    }
    for (std::size_t j = 0; j < positives.size(); ++j)
        sp[j] = grads ? cosine_sim(anchor, positives[j], ga_p[j], gx_p[j]) : cosine_sim(anchor, positives[j]);
    for (std::size_t m = 0; m < negatives.size(); ++m)
        sn[m] = grads ? cosine_sim(anchor, negatives[m], ga_n[m], gx_n[m]) : cosine_sim(anchor, negatives[m]);

    double loss = 0.0;
    std::vector<double> dsp(sp.size(), 0.0), dsn(sn.size(), 0.0);
    if (variant == NceVariant::Exp) {
        // similarities are in [-1, 1]; no max-shift needed
        double neg_sum = 0.0;
        for (double s : sn) neg_sum += std::exp(s);
        for (std::size_t j = 0; j < sp.size(); ++j) {
            const double ep = std::exp(sp[j]);
            const double denom = ep + neg_sum;
            loss += -sp[j] + std::log(denom);
            dsp[j] = -1.0 + ep / denom;
            for (std::size_t m = 0; m < sn.size(); ++m) dsn[m] += std::exp(sn[m]) / denom;
        }
    } else {
        double neg_sum = 0.0;
        for (double s : sn) neg_sum += s;
        for (std::size_t j = 0; j < sp.size(); ++j) {
            const double denom = sp[j] + neg_sum;
            if (!(sp[j] > 0.0) || !(denom > 0.0))
                throw loss_error("info_nce(literal): nonpositive similarity ratio (numerator " + std::to_string(sp[j]) +
                                 ", denominator " + std::to_string(denom) + ")");
            loss += -std::log(sp[j] / denom);
            dsp[j] = -1.0 / sp[j] + 1.0 / denom;
            for (std::size_t m = 0; m < sn.size(); ++m) dsn[m] += 1.0 / denom;
        }
    }

    if (grads) {
        grads->anchor.assign(d, 0.0);
        grads->positives.assign(positives.size(), std::vector<double>(d));
        grads->negatives.assign(negatives.size(), std::vector<double>(d));
        for (std::size_t j = 0; j < sp.size(); ++j)
            for (std::size_t i = 0; i < d; ++i) {
                grads->anchor[i] += dsp[j] * ga_p[j][i];
                grads->positives[j][i] = dsp[j] * gx_p[j][i];
            }
        for (std::size_t m = 0; m < sn.size(); ++m)
            for (std::size_t i = 0; i < d; ++i) {
                grads->anchor[i] += dsn[m] * ga_n[m][i];
                grads->negatives[m][i] = dsn[m] * gx_n[m][i];
            }
    }
    return loss;
}

/// TDE logits W_c x_f - W_c x_cf (the shared bias cancels).
inline std::vector<double> tde_logits(Vec x_f, Vec x_cf, const Tensor& w_c) {
    const std::size_t n = w_c.extent(0), d = w_c.extent(1);
    if (x_f.size() != d || x_cf.size() != d) throw dimension_error("tde_logits: feature length != classifier width");
    std::vector<double> out(n);
    for (std::size_t c = 0; c < n; ++c) {
        const double* row = w_c.data() + c * d;
        double s = 0.0;
        #pragma omp simd reduction(+ : s)
        for (std::size_t i = 0; i < d; ++i) s += row[i] * (x_f[i] - x_cf[i]);
        out[c] = s;
    }
    return out;
}

struct TdeGrads {
    std::vector<double> x_f, x_cf;
};

/// CE(W x_f - W x_cf, y) + CE(W x_f + b, y). Accumulates classifier gradients
/// into `dw` / `db` when given.
inline double tde_loss(Vec x_f, Vec x_cf, const Tensor& w_c, const Tensor& b_c, std::size_t y, TdeGrads* grads = nullptr,
                       Tensor* dw = nullptr, Tensor* db = nullptr) {
    const std::size_t n = w_c.extent(0), d = w_c.extent(1);
    if (y >= n) throw validation_error("tde_loss: label " + std::to_string(y) + " >= num_classes");
    if (x_f.size() != d || x_cf.size() != d) throw dimension_error("tde_loss: feature length != classifier width");
    std::vector<double> yf(n), ycf(n), tde(n);
    for (std::size_t c = 0; c < n; ++c) {
        const double* row = w_c.data() + c * d;
        double sf = 0.0, scf = 0.0;
        #pragma omp simd reduction(+ : sf, scf)
        for (std::size_t i = 0; i < d; ++i) {
            sf += row[i] * x_f[i];
            scf += row[i] * x_cf[i];
        }
        yf[c] = sf + b_c[c];
        ycf[c] = scf + b_c[c];
        tde[c] = sf - scf;
    }
    std::vector<double> g_tde(n), g_yf(n);
    const bool need = grads || dw || db;
    const double loss = ops::cross_entropy(tde, y, need ? std::span<double>(g_tde) : std::span<double>{}) +
                        ops::cross_entropy(yf, y, need ? std::span<double>(g_yf) : std::span<double>{});
    if (!need) return loss;
    // dL/dY_f = g_tde + g_yf ; dL/dY_cf = -g_tde
    if (grads) {
        grads->x_f.assign(d, 0.0);
        grads->x_cf.assign(d, 0.0);
    }
    for (std::size_t c = 0; c < n; ++c) {
        const double gf = g_tde[c] + g_yf[c], gcf = -g_tde[c];
        const double* row = w_c.data() + c * d;
        if (grads)
            for (std::size_t i = 0; i < d; ++i) {
                grads->x_f[i] += gf * row[i];
                grads->x_cf[i] += gcf * row[i];
            }
        if (dw) {
            double* drow = dw->data() + c * d;
            for (std::size_t i = 0; i < d; ++i) drow[i] += gf * x_f[i] + gcf * x_cf[i];
        }
        if (db) (*db)[c] += g_yf[c];
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Stage assembly

struct StageSample {
    SpectralFeature x_f, x_cf, x_a;
    CpagCache cpag_f, cpag_cf;
    Tensor attn_f, attn_cf;  // T×C'×H'×W'
    FphCache fph_f, fph_cf, fph_a;
};

/// Factual, counterfactual and anchor spectral features of one sequence.
inline StageSample stage_forward(const Tensor& f_i, const Tensor& f_next, const CltdStage& stage) {
    const MapShape next = MapShape::of(f_next);
    StageSample s;
    auto rf = cpag_forward(f_i, next, stage.factual);
    auto rcf = cpag_forward(f_i, next, stage.counterfactual);
    auto ff = fph_forward_cached(apply_attention(rf.attention, f_next), stage.fph);
    auto fcf = fph_forward_cached(apply_attention(rcf.attention, f_next), stage.fph);
    auto fa = fph_forward_cached(f_next, stage.fph);
    s.cpag_f = std::move(rf.cache);
    s.cpag_cf = std::move(rcf.cache);
    s.attn_f = std::move(rf.attention.data);
    s.attn_cf = std::move(rcf.attention.data);
    s.x_f = std::move(ff.feature);
    s.x_cf = std::move(fcf.feature);
    s.x_a = std::move(fa.feature);
    s.fph_f = std::move(ff.cache);
    s.fph_cf = std::move(fcf.cache);
    s.fph_a = std::move(fa.cache);
    return s;
}

struct StageFeatures {
    SpectralFeature x_f, x_cf, x_a;
};

inline StageFeatures stage_features(const Tensor& f_i, const Tensor& f_next, const CltdStage& stage) {
    auto s = stage_forward(f_i, f_next, stage);
    return {std::move(s.x_f), std::move(s.x_cf), std::move(s.x_a)};
}

struct FeatureGrads {
    Tensor d_xf, d_xcf, d_xa;
};

/// Back-propagates feature gradients of one sequence; accumulates stage
/// parameter gradients and returns (dL/df_i, dL/df_next).
inline std::pair<Tensor, Tensor> stage_backward(const StageSample& s, const FeatureGrads& g, const Tensor& f_next,
                                                CltdStage& stage) {
    Tensor df_next = fph_backward(g.d_xa, s.fph_a, stage.fph);
    Tensor df_i(s.cpag_f.in_shape);
    auto branch = [&](const Tensor& dx_feat, const FphCache& fc, const Tensor& attn, const CpagCache& cc,
                      CpagParams& cp) {
        const Tensor dx = fph_backward(dx_feat, fc, stage.fph);
        Tensor dattn(attn.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dattn[i] = dx[i] * f_next[i];
            df_next[i] += dx[i] * attn[i];
        }
        df_i += cpag_backward(dattn, cc, cp);
    };
    branch(g.d_xf, s.fph_f, s.attn_f, s.cpag_f, stage.factual);
    branch(g.d_xcf, s.fph_cf, s.attn_cf, s.cpag_cf, stage.counterfactual);
    return {std::move(df_i), std::move(df_next)};
}

/// Batch loss over precomputed features. Contrastive term: mean over anchors
/// whose subject has >= 2 sequences in the batch; TDE term: mean over all
/// sequences. When `grads` is given it receives per-sample feature gradients
/// and classifier gradients are accumulated into the stage.
inline StageLossBundle stage_feature_loss(const std::vector<const StageFeatures*>& feats,
                                          const std::vector<std::size_t>& labels, CltdStage& stage,
                                          std::vector<FeatureGrads>* grads = nullptr) {
    const std::size_t n = feats.size();
    if (n == 0 || labels.size() != n) throw validation_error("stage loss: empty batch or label count mismatch");
    const std::size_t d = feats[0]->x_f.data.size();
    if (grads) {
        grads->assign(n, FeatureGrads{Tensor({d}), Tensor({d}), Tensor({d})});
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);

    double nce = 0.0;
    std::size_t anchors = 0;
    if (stage.use_nce) {
        for (const auto& [label, members] : groups)
            if (members.size() < 2) log::warn("stage loss: subject " + std::to_string(label) +
                                              " has a single sequence; contributes only the TDE term");
        for (const auto& [label, members] : groups)
            if (members.size() >= 2) anchors += members.size();
        for (const auto& [label, members] : groups) {
            if (members.size() < 2) continue;
            std::vector<Vec> pos, neg;
            for (std::size_t m : members) {
                pos.emplace_back(feats[m]->x_f.data.span());
                neg.emplace_back(feats[m]->x_cf.data.span());
            }
            for (std::size_t a : members) {
                NceGrads ng;
                nce += info_nce(feats[a]->x_a.data.span(), pos, neg, stage.variant, grads ? &ng : nullptr);
                if (!grads) continue;
                const double sc = 1.0 / static_cast<double>(anchors);
                for (std::size_t i = 0; i < d; ++i) (*grads)[a].d_xa[i] += sc * ng.anchor[i];
                for (std::size_t j = 0; j < members.size(); ++j)
                    for (std::size_t i = 0; i < d; ++i) {
                        (*grads)[members[j]].d_xf[i] += sc * ng.positives[j][i];
                        (*grads)[members[j]].d_xcf[i] += sc * ng.negatives[j][i];
                    }
            }
        }
        if (anchors > 0) nce /= static_cast<double>(anchors);
    }

    double ce = 0.0;
    if (stage.use_ce) {
        const double sc = 1.0 / static_cast<double>(n);
        Tensor dw, db;
        if (grads) {
            dw = Tensor(stage.cls_weight.value.shape());
            db = Tensor(stage.cls_bias.value.shape());
        }
        for (std::size_t i = 0; i < n; ++i) {
            TdeGrads tg;
            ce += tde_loss(feats[i]->x_f.data.span(), feats[i]->x_cf.data.span(), stage.cls_weight.value,
                           stage.cls_bias.value, labels[i], grads ? &tg : nullptr, grads ? &dw : nullptr,
                           grads ? &db : nullptr);
            if (!grads) continue;
            for (std::size_t k = 0; k < d; ++k) {
                (*grads)[i].d_xf[k] += sc * tg.x_f[k];
                (*grads)[i].d_xcf[k] += sc * tg.x_cf[k];
            }
        }
        ce *= sc;
        if (grads) {
            stage.cls_weight.grad.axpy(sc, dw);
            stage.cls_bias.grad.axpy(sc, db);
        }
    }
    auto bundle = StageLossBundle::from_parts(nce, ce);
    if (!std::isfinite(bundle.total)) throw numerical_error("stage " + std::to_string(stage.index) + " loss is not finite");
    return bundle;
}

struct StageInputGrads {
    std::vector<Tensor> d_fi, d_fnext;
};

/// Full stage loss for a batch of (f_i, f_next) pairs. With `input_grads`
/// set, runs the backward pass: parameter gradients accumulate into `stage`.
inline StageLossBundle stage_loss(const std::vector<Tensor>& f_i, const std::vector<Tensor>& f_next,
                                  const std::vector<std::size_t>& labels, CltdStage& stage,
                                  StageInputGrads* input_grads = nullptr) {
    if (f_i.size() != f_next.size() || f_i.size() != labels.size())
        throw validation_error("stage_loss: batch size mismatch");
    instrument::count_cltd_op();
    std::vector<StageSample> samples;
    samples.reserve(f_i.size());
    for (std::size_t n = 0; n < f_i.size(); ++n) samples.push_back(stage_forward(f_i[n], f_next[n], stage));
    std::vector<StageFeatures> feats;
    feats.reserve(samples.size());
    for (auto& s : samples) feats.push_back({s.x_f, s.x_cf, s.x_a});
    std::vector<const StageFeatures*> ptrs;
    for (auto& f : feats) ptrs.push_back(&f);
    if (!input_grads) return stage_feature_loss(ptrs, labels, stage);

    std::vector<FeatureGrads> g;
    auto bundle = stage_feature_loss(ptrs, labels, stage, &g);
    input_grads->d_fi.clear();
    input_grads->d_fnext.clear();
    for (std::size_t n = 0; n < samples.size(); ++n) {
        auto [dfi, dfn] = stage_backward(samples[n], g[n], f_next[n], stage);
        input_grads->d_fi.push_back(std::move(dfi));
        input_grads->d_fnext.push_back(std::move(dfn));
    }
    return bundle;
}

}  // namespace cltd
