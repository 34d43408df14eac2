#pragma once

// End-to-end synthetic benchmark: for each seed, train with CLTD losses and
// with all lambdas zero on the same data and initialization, then compare
// probe Rank-1. Seeds run on parallel worker threads.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>
#include <vector>

#include "cltd/config.hpp"

namespace cltd {

/// The fixed benchmark setting. Data and CLTD hyperparameters are pinned;
/// backbone size, batch shape and learning rate are sized for a desk CPU.
/// lr is the baseline arm's best on a tuning seed; fph_init_gain is the
/// CLTD arm's best at that lr.
inline RunConfig e2e_config() {
    RunConfig c;
    c.data.train_ids = 40;
    c.data.test_ids = 20;
    c.data.seqs_per_id = 4;
    c.data.t = 30, c.data.h = 64, c.data.w = 44;
    c.backbone.widths = {1, 1, 2, 4, 8};
    c.backbone.downsample = {true, true, false, false};
    c.backbone.embed_dim = 32;
    c.backbone.cltd_stages = 3;
    c.train.lambda = {0.1, 0.2, 0.3};
    c.train.window = 7;
    c.train.c_out = 128;
    c.train.steps = 2000;
    c.train.p = 2, c.train.k = 2;
    c.train.lr = 0.1;
    c.train.fph_init_gain = 0.03;
    return c;
}

struct ArmResult {
    std::uint64_t seed = 0;
    bool cltd = false;
    RankResult rank;
    TrainSummary summary;
    double seconds = 0.0;
    std::string error;  // "code: detail" when the run threw

    bool ok() const { return error.empty() && std::isfinite(summary.last_total); }
};

struct E2eReport {
    std::vector<ArmResult> runs;  // seed-major, baseline before CLTD
    double seconds = 0.0;
    std::size_t jobs = 1;

    double mean_rank1(bool cltd) const {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : runs)
            if (r.cltd == cltd) s += r.rank.rank1, ++n;
        return n ? s / static_cast<double>(n) : 0.0;
    }
    bool all_ok() const {
        return std::all_of(runs.begin(), runs.end(), [](const ArmResult& r) { return r.ok(); });
    }
};

/// Trains one arm on `d` and scores gallery/probe retrieval.
inline ArmResult run_arm(const RunConfig& cfg, const Dataset& d, bool cltd) {
    ArmResult r;
    r.seed = cfg.train.seed;
    r.cltd = cltd;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        TrainConfig tc = cfg.train;
        if (!cltd) std::fill(tc.lambda.begin(), tc.lambda.end(), 0.0);
        Model m = build_model(cfg.backbone, tc, LabelMap(d.train).classes(), cfg.data.t, cfg.data.h, cfg.data.w, cltd);
        r.summary = train(m, d.train, tc);
        const auto g = embed_all(d.gallery, m.backbone), p = embed_all(d.probe, m.backbone);
        r.rank = evaluate_rank(g.emb, g.labels, p.emb, p.labels);
    } catch (const Error& e) {
        r.error = e.code() + ": " + e.what();
    } catch (const std::exception& e) {
        r.error = std::string("internal_error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// Runs both arms for every seed (data.seed = train.seed = seed). `jobs` = 0
/// uses the hardware concurrency. `progress` is called once per finished arm.
template <class Progress>
E2eReport run_e2e(const RunConfig& base, const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                  Progress&& progress) {
    base.validate();
    if (seeds.empty()) throw validation_error("e2e: no seeds");
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min(jobs, seeds.size());
    E2eReport rep;
    rep.jobs = jobs;
    rep.runs.resize(2 * seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    const auto t0 = std::chrono::steady_clock::now();
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < seeds.size();) {
            RunConfig cfg = base;
            cfg.data.seed = cfg.train.seed = seeds[i];
            const Dataset d = build_dataset(cfg.data);
            for (bool cltd : {false, true}) {
                ArmResult r = run_arm(cfg, d, cltd);
                std::lock_guard lock(mu);
                rep.runs[2 * i + (cltd ? 1 : 0)] = r;
                progress(r);
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline E2eReport run_e2e(const RunConfig& base, const std::vector<std::uint64_t>& seeds, std::size_t jobs = 0) {
    return run_e2e(base, seeds, jobs, [](const ArmResult&) {});
}

}  // namespace cltd
