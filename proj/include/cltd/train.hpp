#pragma once

// Training and evaluation harness: model assembly, P×K batch sampling, the
// full-objective gradient pass, plain SGD, JSON-lines metrics, and
// nearest-neighbour retrieval.

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cltd/backbone.hpp"
#include "cltd/checkpoint.hpp"
#include "cltd/objective.hpp"
#include "cltd/synth_gait.hpp"

namespace cltd {

struct TrainConfig {
    std::vector<double> lambda = {0.1, 0.2, 0.3};
    double margin = 0.2;
    double lr = 0.01;
    std::size_t steps = 100;
    std::size_t p = 4, k = 4;  // P subjects × K sequences per batch
    std::uint64_t seed = 1;
    NceVariant variant = NceVariant::Exp;
    std::size_t window = 7;    // FPH low-frequency window k
    std::size_t c_out = 128;   // FPH C_o
    ops::PoolMode fph_pool = ops::PoolMode::Mean;
    // Scales the W_P initialization. The flattened spectral feature has
    // 2·C_o·k² entries, and an SGD step moves the stage classifier's logits
    // by about lr·|x|², so gain 1 makes the stage heads diverge at usable lr.
    double fph_init_gain = 0.1;
    bool use_nce = true;
    bool use_ce = true;

    void validate(const BackboneConfig& b) const {
        if (lambda.size() != b.cltd_stages)
            throw validation_error("train: " + std::to_string(lambda.size()) + " lambda values for " +
                                   std::to_string(b.cltd_stages) + " CLTD stages");
        for (double l : lambda)
            if (!(l >= 0.0)) throw validation_error("train: lambda must be >= 0");
        if (p < 2 || k < 2) throw validation_error("train: batch sampler needs P >= 2 and K >= 2");
        if (!(lr > 0.0)) throw validation_error("train: learning rate must be positive");
        if (!(margin >= 0.0)) throw validation_error("train: margin must be >= 0");
        if (window == 0 || window % 2 == 0) throw validation_error("train: FPH window must be odd");
        if (c_out == 0) throw validation_error("train: C_o must be >= 1");
        if (!(fph_init_gain > 0.0)) throw validation_error("train: fph_init_gain must be positive");
    }

    bool any_cltd() const {
        return std::any_of(lambda.begin(), lambda.end(), [](double l) { return l > 0.0; });
    }
};

/// Backbone plus the training-only parts (classifier head, CLTD stages).
struct Model {
    Backbone backbone;
    ClassifierHead head;
    std::vector<CltdStage> stages;

    template <class F>
    void for_each(F&& f) {
        backbone.for_each(f);
        head.for_each(f);
        for (auto& s : stages) s.for_each(f);
    }
    template <class F>
    void for_each(F&& f) const {
        backbone.for_each(f);
        head.for_each(f);
        for (const auto& s : stages) s.for_each(f);
    }

    void zero_grad() {
        for_each([](Parameter& p) { p.zero_grad(); });
    }
};

/// Backbone, head and CLTD stages draw from separate seed streams, so the
/// inference path does not depend on whether CLTD stages are built.
inline Model build_model(const BackboneConfig& bcfg, const TrainConfig& tcfg, std::size_t classes, std::size_t t,
                         std::size_t h, std::size_t w, bool with_cltd = true) {
    bcfg.validate();
    tcfg.validate(bcfg);
    if (classes < 2) throw validation_error("train: need at least 2 identities");
    Model m;
    std::mt19937_64 brng(synth::mix_seed(tcfg.seed, 1)), hrng(synth::mix_seed(tcfg.seed, 2)),
        crng(synth::mix_seed(tcfg.seed, 3));
    m.backbone = Backbone::init(bcfg, brng);
    m.head = ClassifierHead::init(classes, bcfg.embed_dim, hrng);
    if (!with_cltd) return m;
    const auto shapes = bcfg.map_shapes(t, h, w);
    const std::size_t off = bcfg.first_cltd_map();
    for (std::size_t i = 0; i < bcfg.cltd_stages; ++i) {
        const auto in = shapes[off + i], next = shapes[off + i + 1];
        auto st = CltdStage::init(i + 1, {in[0], in[1], in[2], in[3]}, {next[0], next[1], next[2], next[3]},
                                  tcfg.window, tcfg.c_out, classes, crng, tcfg.fph_init_gain);
        st.lambda = tcfg.lambda[i];
        st.variant = tcfg.variant;
        st.use_nce = tcfg.use_nce;
        st.use_ce = tcfg.use_ce;
        st.fph.pool = tcfg.fph_pool;
        m.stages.push_back(std::move(st));
    }
    return m;
}

struct StepLosses {
    double tri = 0.0, ce = 0.0;
    std::vector<StageLossBundle> bundles;
    double total = 0.0;
};

/// Full objective for one batch. With `with_grads`, gradients of the total
/// accumulate into `m` (call zero_grad first). Stages with lambda = 0 are
/// skipped entirely and report a zero bundle.
inline StepLosses compute_objective(Model& m, const std::vector<const Tensor*>& inputs,
                                    const std::vector<std::size_t>& labels, const TrainConfig& cfg, bool with_grads) {
    const std::size_t n = inputs.size();
    std::vector<BackboneOutput> fwd;
    fwd.reserve(n);
    for (const Tensor* x : inputs) fwd.push_back(backbone_forward(*x, m.backbone));
    const std::size_t d = m.backbone.cfg.embed_dim;
    Tensor emb({n, d});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(fwd[i].embedding.data(), d, emb.data() + i * d);

    StepLosses out;
    Tensor d_tri, d_ce;
    out.tri = triplet_loss(emb, labels, cfg.margin, with_grads ? &d_tri : nullptr);
    out.ce = head_ce_loss(emb, labels, m.head, with_grads ? &d_ce : nullptr);

    std::vector<std::vector<Tensor>> d_maps(n, std::vector<Tensor>(fwd.empty() ? 0 : fwd[0].maps.size()));
    const std::size_t off = m.backbone.cfg.first_cltd_map();
    for (std::size_t si = 0; si < cfg.lambda.size(); ++si) {
        const double lam = cfg.lambda[si];
        if (lam == 0.0) {
            out.bundles.push_back({});
            continue;
        }
        if (si >= m.stages.size())
            throw validation_error("lambda" + std::to_string(si + 1) + " > 0 but the model has no CLTD stage there");
        CltdStage& st = m.stages[si];
        std::vector<Tensor> fi, fn;
        for (const auto& f : fwd) {
            fi.push_back(f.maps[off + si]);
            fn.push_back(f.maps[off + si + 1]);
        }
        if (!with_grads) {
            out.bundles.push_back(stage_loss(fi, fn, labels, st));
            continue;
        }
        // stage parameters only see this stage's loss: scale after accumulation
        NamedTensors before;
        st.for_each([&](const Parameter& p) { before[p.name] = p.grad; });
        StageInputGrads g;
        out.bundles.push_back(stage_loss(fi, fn, labels, st, &g));
        st.for_each([&](Parameter& p) {
            const Tensor& b = before[p.name];
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = b[i] + lam * (p.grad[i] - b[i]);
        });
        for (std::size_t i = 0; i < n; ++i) {
            auto add = [&](Tensor& slot, Tensor& gr) {
                gr *= lam;
                if (slot.size() == 0)
                    slot = std::move(gr);
                else
                    slot += gr;
            };
            if (off + si > 0) add(d_maps[i][off + si], g.d_fi[i]);  // f_1 is the raw input
            add(d_maps[i][off + si + 1], g.d_fnext[i]);
        }
    }
    out.total = total_loss(out.tri, out.ce, out.bundles, cfg.lambda);

    if (with_grads) {
        for (std::size_t i = 0; i < n; ++i) {
            Tensor de({d});
            for (std::size_t k = 0; k < d; ++k) de[k] = d_tri[i * d + k] + d_ce[i * d + k];
            backbone_backward(fwd[i], de, std::move(d_maps[i]), m.backbone);
        }
    }
    return out;
}

inline void sgd_update(Model& m, double lr) {
    m.for_each([&](Parameter& p) { p.value.axpy(-lr, p.grad); });
}

/// Names the first parameter an update left unusable: non-finite, or a CPAG
/// gamma whose softplus underflowed to zero. Empty when all are usable.
inline std::string diverged_parameter(Model& m) {
    std::string bad;
    m.for_each([&](Parameter& p) {
        if (!bad.empty()) return;
        for (std::size_t i = 0; i < p.value.size(); ++i)
            if (!std::isfinite(p.value[i])) {
                bad = p.name;
                return;
            }
    });
    for (const CltdStage& st : m.stages)
        for (const CpagParams* cp : {&st.factual, &st.counterfactual})
            if (bad.empty() && !(cp->gamma() > 0.0)) bad = cp->gamma_raw.name;
    return bad;
}

/// Names the first non-finite term, or returns an empty string.
inline std::string non_finite_term(const StepLosses& l) {
    if (!std::isfinite(l.tri)) return "tri";
    if (!std::isfinite(l.ce)) return "ce";
    for (std::size_t i = 0; i < l.bundles.size(); ++i) {
        if (!std::isfinite(l.bundles[i].l_nce)) return "stage" + std::to_string(i + 1) + ".nce";
        if (!std::isfinite(l.bundles[i].l_ce_fcf)) return "stage" + std::to_string(i + 1) + ".ce";
    }
    if (!std::isfinite(l.total)) return "total";
    return {};
}

inline nlohmann::json losses_json(std::size_t step, const StepLosses& l) {
    nlohmann::json j;
    j["step"] = step;
    j["tri"] = l.tri;
    j["ce"] = l.ce;
    for (std::size_t i = 0; i < l.bundles.size(); ++i) {
        const std::string s = "stage" + std::to_string(i + 1);
        j[s + "_nce"] = l.bundles[i].l_nce;
        j[s + "_ce"] = l.bundles[i].l_ce_fcf;
        j[s + "_total"] = l.bundles[i].total;
    }
    j["total"] = l.total;
    return j;
}

/// Maps identity labels to contiguous class indices.
struct LabelMap {
    std::map<std::size_t, std::size_t> to_class;

    explicit LabelMap(const std::vector<SyntheticSample>& set) {
        std::set<std::size_t> ids;
        for (const auto& s : set) ids.insert(s.identity);
        for (std::size_t id : ids) to_class.emplace(id, to_class.size());
    }
    std::size_t classes() const { return to_class.size(); }
};

/// P identities without replacement, K sequences each (with replacement only
/// when an identity has fewer than K).
class BatchSampler {
public:
    BatchSampler(const std::vector<SyntheticSample>& set, std::size_t p, std::size_t k, std::uint64_t seed)
        : p_(p), k_(k), rng_(seed) {
        for (std::size_t i = 0; i < set.size(); ++i) by_id_[set[i].identity].push_back(i);
        for (const auto& [id, v] : by_id_) ids_.push_back(id);
        if (ids_.size() < p_)
            throw validation_error("batch sampler: " + std::to_string(ids_.size()) + " identities for P=" +
                                   std::to_string(p_));
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> ids = ids_, out;
        std::shuffle(ids.begin(), ids.end(), rng_);
        for (std::size_t a = 0; a < p_; ++a) {
            auto pool = by_id_[ids[a]];
            if (pool.size() >= k_) {
                std::shuffle(pool.begin(), pool.end(), rng_);
                out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k_));
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                for (std::size_t j = 0; j < k_; ++j) out.push_back(pool[pick(rng_)]);
            }
        }
        return out;
    }

private:
    std::size_t p_, k_;
    std::mt19937_64 rng_;
    std::map<std::size_t, std::vector<std::size_t>> by_id_;
    std::vector<std::size_t> ids_;
};

struct TrainSummary {
    double first_total = 0.0, last_total = 0.0;
    std::size_t steps_run = 0, steps_skipped = 0;
};

/// Plain SGD over P×K batches of `set`. One JSON object per step goes to
/// `metrics` when given. A non-finite loss aborts with numerical_error naming
/// the term; a literal-variant InfoNCE domain failure skips the step.
inline TrainSummary train(Model& m, const std::vector<SyntheticSample>& set, const TrainConfig& cfg,
                          std::ostream* metrics = nullptr) {
    cfg.validate(m.backbone.cfg);
    if (set.empty()) throw validation_error("train: empty training set");
    const LabelMap labels(set);
    if (labels.classes() != m.head.bias.value.size())
        throw validation_error("train: model has " + std::to_string(m.head.bias.value.size()) + " classes, data has " +
                               std::to_string(labels.classes()));
    std::vector<Tensor> inputs;
    inputs.reserve(set.size());
    for (const auto& s : set) inputs.push_back(as_backbone_input(s.frames));

    BatchSampler sampler(set, cfg.p, cfg.k, synth::mix_seed(cfg.seed, 4));
    TrainSummary sum;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto idx = sampler.next();
        std::vector<const Tensor*> batch;
        std::vector<std::size_t> y;
        for (std::size_t i : idx) {
            batch.push_back(&inputs[i]);
            y.push_back(labels.to_class.at(set[i].identity));
        }
        m.zero_grad();
        StepLosses l;
        try {
            l = compute_objective(m, batch, y, cfg, true);
        } catch (const Error& e) {
            if (e.code() == "loss_error" && cfg.variant == NceVariant::Literal) {
                log::warn("step " + std::to_string(step) + " skipped: " + e.what());
                ++sum.steps_skipped;
                continue;
            }
            throw;
        }
        if (const auto bad = non_finite_term(l); !bad.empty())
            throw numerical_error("non-finite loss at step " + std::to_string(step) + " in term " + bad + ": " +
                                  losses_json(step, l).dump());
        if (sum.steps_run == 0) sum.first_total = l.total;
        sum.last_total = l.total;
        ++sum.steps_run;
        sgd_update(m, cfg.lr);
        if (const auto bad = diverged_parameter(m); !bad.empty())
            throw numerical_error("parameter " + bad + " diverged at step " + std::to_string(step));
        if (metrics) *metrics << losses_json(step, l).dump() << '\n';
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EmbeddingSet {
    Tensor emb;  // N×D
    std::vector<std::size_t> labels, seqs;
};

/// Inference path only: backbone + embedding.
inline EmbeddingSet embed_all(const std::vector<SyntheticSample>& set, const Backbone& b) {
    EmbeddingSet out;
    const std::size_t d = b.cfg.embed_dim;
    out.emb = Tensor({set.size(), d});
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Tensor e = embed(as_backbone_input(set[i].frames), b);
        std::copy_n(e.data(), d, out.emb.data() + i * d);
        out.labels.push_back(set[i].identity);
        out.seqs.push_back(set[i].sequence);
    }
    return out;
}

struct RankResult {
    double rank1 = 0.0, rank5 = 0.0;  // percentages
    std::size_t missing = 0;          // probes whose label is absent from the gallery
};

/// Euclidean nearest neighbours; ties go to the lower gallery index.
inline RankResult evaluate_rank(const Tensor& gallery, const std::vector<std::size_t>& gallery_labels,
                                const Tensor& probe, const std::vector<std::size_t>& probe_labels) {
    if (gallery.rank() != 2 || gallery.extent(0) == 0) throw validation_error("evaluate_rank: empty gallery");
    const std::size_t ng = gallery.extent(0), np = probe.extent(0), d = gallery.extent(1);
    if (probe.extent(1) != d) throw dimension_error("evaluate_rank: embedding dims differ");
    if (gallery_labels.size() != ng || probe_labels.size() != np)
        throw validation_error("evaluate_rank: label count mismatch");
    const std::set<std::size_t> known(gallery_labels.begin(), gallery_labels.end());
    RankResult r;
    std::size_t hit1 = 0, hit5 = 0;
    std::vector<std::pair<double, std::size_t>> order(ng);
    for (std::size_t q = 0; q < np; ++q) {
        if (!known.count(probe_labels[q])) {
            ++r.missing;
            log::warn("evaluate_rank: probe label " + std::to_string(probe_labels[q]) + " not in gallery");
            continue;
        }
        for (std::size_t g = 0; g < ng; ++g) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = probe[q * d + k] - gallery[g * d + k];
                s += diff * diff;
            }
            order[g] = {s, g};
        }
        std::sort(order.begin(), order.end());
        for (std::size_t j = 0; j < std::min<std::size_t>(5, ng); ++j)
            if (gallery_labels[order[j].second] == probe_labels[q]) {
                if (j == 0) ++hit1;
                ++hit5;
                break;
            }
    }
    if (np > 0) {
        r.rank1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(np);
        r.rank5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(np);
    }
    return r;
}

/// CSV rows: id,seq,d0..d{D-1}
inline void write_embeddings_csv(std::ostream& out, const EmbeddingSet& set) {
    const std::size_t d = set.emb.extent(1);
    out << "id,seq";
    for (std::size_t k = 0; k < d; ++k) out << ",d" << k;
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        out << set.labels[i] << ',' << set.seqs[i];
        for (std::size_t k = 0; k < d; ++k) out << ',' << set.emb[i * d + k];
        out << '\n';
    }
}

}  // namespace cltd
