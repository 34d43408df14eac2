#pragma once

// Backbone-level objective: batch-all triplet loss on embeddings, a linear
// cross-entropy head, and the weighted sum with the CLTD stage losses.

#include <cmath>
#include <vector>

#include "cltd/causal_loss.hpp"

namespace cltd {

/// Batch-all triplet loss with Euclidean distances: mean over every valid
/// (anchor, positive, negative) of max(0, d(a,p) - d(a,n) + margin).
/// `grad` (N×D), when given, receives dL/d embeddings. The distance gradient
/// is taken as 0 for coincident points.
inline double triplet_loss(const Tensor& emb, const std::vector<std::size_t>& labels, double margin,
                           Tensor* grad = nullptr) {
    emb.require_rank(2, "triplet embeddings");
    const std::size_t n = emb.extent(0), d = emb.extent(1);
    if (labels.size() != n) throw validation_error("triplet: label count mismatch");
    bool two_classes = false;
    for (std::size_t i = 1; i < n && !two_classes; ++i) two_classes = labels[i] != labels[0];
    if (!two_classes) throw loss_error("triplet loss needs at least two classes in the batch");

    std::vector<double> dist(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = emb[i * d + k] - emb[j * d + k];
                s += diff * diff;
            }
            dist[i * n + j] = std::sqrt(s);
        }
    // dL/d dist(i,j), accumulated then mapped onto the embeddings
    std::vector<double> ddist(grad ? n * n : 0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::size_t q = 0; q < n; ++q) {
                if (labels[q] == labels[a]) continue;
                ++count;
                const double v = dist[a * n + p] - dist[a * n + q] + margin;
                if (v <= 0.0) continue;
                total += v;
                if (grad) {
                    ddist[a * n + p] += 1.0;
                    ddist[a * n + q] -= 1.0;
                }
            }
        }
    if (count == 0) throw loss_error("triplet loss: no valid triplets (every class needs two members)");
    const double inv = 1.0 / static_cast<double>(count);
    if (grad) {
        *grad = Tensor({n, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double g = ddist[i * n + j] * inv, r = dist[i * n + j];
                if (g == 0.0 || r < 1e-12) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    const double u = g * (emb[i * d + k] - emb[j * d + k]) / r;
                    (*grad)[i * d + k] += u;
                    (*grad)[j * d + k] -= u;
                }
            }
    }
    return total * inv;
}

/// Linear identity classifier on the embedding (training only).
struct ClassifierHead {
    Parameter weight;  // classes × embed_dim
    Parameter bias;

    template <class Rng>
    static ClassifierHead init(std::size_t classes, std::size_t dim, Rng& rng) {
        return {{"head.weight", Tensor::normal({classes, dim}, rng, 1.0 / std::sqrt(static_cast<double>(dim)))},
                {"head.bias", Tensor({classes})}};
    }

    template <class F>
    void for_each(F&& f) {
        f(weight);
        f(bias);
    }
    template <class F>
    void for_each(F&& f) const {
        f(weight);
        f(bias);
    }
};

/// Mean cross-entropy of the head over the batch; accumulates head gradients
/// and writes dL/d embeddings when `grad` is given.
inline double head_ce_loss(const Tensor& emb, const std::vector<std::size_t>& labels, ClassifierHead& head,
                           Tensor* grad = nullptr) {
    const std::size_t n = emb.extent(0), d = emb.extent(1), classes = head.bias.value.size();
    if (labels.size() != n) throw validation_error("head ce: label count mismatch");
    if (grad) *grad = Tensor({n, d});
    const double inv = 1.0 / static_cast<double>(n);
    double total = 0.0;
    std::vector<double> logits(classes), dlogits(classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= classes) throw validation_error("head ce: label " + std::to_string(labels[i]) + " out of range");
        const double* e = emb.data() + i * d;
        for (std::size_t c = 0; c < classes; ++c) {
            double s = head.bias.value[c];
            #pragma omp simd reduction(+ : s)
            for (std::size_t k = 0; k < d; ++k) s += head.weight.value[c * d + k] * e[k];
            logits[c] = s;
        }
        total += ops::cross_entropy(logits, labels[i], grad ? std::span<double>(dlogits) : std::span<double>());
        if (!grad) continue;
        for (std::size_t c = 0; c < classes; ++c) {
            const double g = dlogits[c] * inv;
            head.bias.grad[c] += g;
            for (std::size_t k = 0; k < d; ++k) {
                head.weight.grad[c * d + k] += g * e[k];
                (*grad)[i * d + k] += g * head.weight.value[c * d + k];
            }
        }
    }
    return total * inv;
}

/// tri + ce + sum_i lambda_i * bundle_i.total
inline double total_loss(double tri, double ce, const std::vector<StageLossBundle>& bundles,
                         const std::vector<double>& lambda) {
    if (bundles.size() != lambda.size())
        throw validation_error("total_loss: " + std::to_string(bundles.size()) + " stage bundles for " +
                               std::to_string(lambda.size()) + " weights");
    double s = tri + ce;
    for (std::size_t i = 0; i < bundles.size(); ++i) s += lambda[i] * bundles[i].total;
    return s;
}

}  // namespace cltd
