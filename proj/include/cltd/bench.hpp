#pragma once

// Complexity benchmark: dense spatio-temporal self-attention over all t·h·w
// tokens against CPAG on the same feature map, with exact MAC tallies and
// median wall-clock times.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cltd/cpag.hpp"
#include "cltd/instrument.hpp"

namespace cltd {

/// Largest token count t·h·w the dense kernel accepts. Scores are streamed one
/// row at a time, so memory stays O(t·h·w·c).
inline constexpr std::size_t kNaiveTokenLimit = 8192;

/// Q/K/V projections (C×C each) of the dense attention baseline.
struct NaiveAttentionParams {
    Tensor wq, wk, wv;

    static NaiveAttentionParams identity(std::size_t c) {
        NaiveAttentionParams p{Tensor({c, c}), Tensor({c, c}), Tensor({c, c})};
        for (std::size_t i = 0; i < c; ++i) p.wq(i, i) = p.wk(i, i) = p.wv(i, i) = 1.0;
        return p;
    }
    template <class Rng>
    static NaiveAttentionParams random(std::size_t c, Rng& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(c));
        return {Tensor::normal({c, c}, rng, s), Tensor::normal({c, c}, rng, s), Tensor::normal({c, c}, rng, s)};
    }
};

/// softmax(Q K^T / sqrt(c)) V over the N = t·h·w tokens of f (token features
/// are the C channels at one (t, y, x)). Score and aggregation products go to
/// the attention MAC counter (2 N^2 c); the projections go to the projection
/// counter.
inline Tensor naive_attention_forward(const Tensor& f, const NaiveAttentionParams& p) {
    const MapShape s = MapShape::of(f);
    const std::size_t hw = s.h * s.w, n = s.t * hw, c = s.c;
    if (n > kNaiveTokenLimit)
        throw validation_error("naive attention: " + std::to_string(n) + " tokens exceed the limit of " +
                               std::to_string(kNaiveTokenLimit));
    for (const Tensor* w : {&p.wq, &p.wk, &p.wv})
        if (w->rank() != 2 || w->extent(0) != c || w->extent(1) != c)
            throw dimension_error("naive attention: projection is not " + std::to_string(c) + "x" + std::to_string(c));
    Tensor x({n, c});
    for (std::size_t t = 0; t < s.t; ++t)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) x[(t * hw + i) * c + ch] = f[(t * c + ch) * hw + i];
    const Tensor q = ops::matmul(x, p.wq), k = ops::matmul(x, p.wk), v = ops::matmul(x, p.wv);
    instrument::add_projection_macs(3 * n * c * c);

    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor y({n, c});
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* qi = q.data() + i * c;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            const double* kj = k.data() + j * c;
            double acc = 0.0;
            #pragma omp simd reduction(+ : acc)
            for (std::size_t d = 0; d < c; ++d) acc += qi[d] * kj[d];
            row[j] = acc * scale;
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += row[j] = std::exp(row[j] - mx);
        double* yi = y.data() + i * c;
        for (std::size_t j = 0; j < n; ++j) {
            const double pj = row[j] / z;
            const double* vj = v.data() + j * c;
            for (std::size_t d = 0; d < c; ++d) yi[d] += pj * vj[d];
        }
    }
    instrument::add_attention_macs(2 * n * n * c);

    Tensor out(f.shape());
    for (std::size_t t = 0; t < s.t; ++t)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) out[(t * c + ch) * hw + i] = y[(t * hw + i) * c + ch];
    return out;
}

struct BenchRecord {
    std::size_t t = 0, c = 0, h = 0, w = 0;
    std::uint64_t mac_naive = 0, mac_cpag = 0;  // attention-kernel MACs
    std::uint64_t formula_naive = 0, formula_cpag = 0;
    std::uint64_t wall_ns_naive = 0, wall_ns_cpag = 0;  // medians
    std::size_t reps = 0;
    std::vector<std::string> failures;

    double formula_ratio() const { return static_cast<double>(formula_naive) / static_cast<double>(formula_cpag); }
    double wall_ratio() const {
        return static_cast<double>(wall_ns_naive) / static_cast<double>(std::max<std::uint64_t>(wall_ns_cpag, 1));
    }
};

/// Lower-order slack allowed between CPAG's counted attention MACs and t^2 (c + hw).
inline constexpr double kCpagFormulaSlack = 0.20;

namespace detail {

template <class F>
std::uint64_t median_ns(std::size_t reps, F&& f) {
    std::vector<std::uint64_t> ns;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        ns.push_back(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count()));
    }
    std::sort(ns.begin(), ns.end());
    return ns.size() % 2 ? ns[ns.size() / 2] : (ns[ns.size() / 2 - 1] + ns[ns.size() / 2]) / 2;
}

}  // namespace detail

/// Benchmarks one (t, c, h, w) map. CPAG targets a next stage of the same shape.
inline BenchRecord bench_shape(const MapShape& s, std::size_t reps, std::uint64_t seed = 1) {
    if (reps == 0) throw validation_error("bench: repetitions must be >= 1");
    if (s.t == 0 || s.c == 0 || s.h == 0 || s.w == 0) throw validation_error("bench: zero extent in shape");
    std::mt19937_64 rng(seed);
    const Tensor f = Tensor::uniform(s.dims(), rng, -1.0, 1.0);
    const auto naive = NaiveAttentionParams::random(s.c, rng);
    const auto cpag = CpagParams::init(s.c, s.h, s.w, s.c, s.h, s.w, rng);

    BenchRecord r;
    r.t = s.t, r.c = s.c, r.h = s.h, r.w = s.w, r.reps = reps;
    const auto fl = cpag_flops(s.t, s.c, s.h, s.w, s.c, s.h, s.w);
    r.formula_naive = fl.naive_formula;
    r.formula_cpag = fl.cpag_formula;
    {
        instrument::MacCounter mc;
        instrument::MacScope scope(mc);
        naive_attention_forward(f, naive);
        r.mac_naive = mc.attention;
    }
    {
        instrument::MacCounter mc;
        instrument::MacScope scope(mc);
        generate_attention(f, s, cpag);
        r.mac_cpag = mc.attention;
    }
    r.wall_ns_naive = detail::median_ns(reps, [&] { naive_attention_forward(f, naive); });
    r.wall_ns_cpag = detail::median_ns(reps, [&] { generate_attention(f, s, cpag); });

    if (r.mac_naive != r.formula_naive)
        r.failures.push_back("mac_naive " + std::to_string(r.mac_naive) + " != 2t^2h^2w^2c " +
                             std::to_string(r.formula_naive));
    const double dev = std::abs(static_cast<double>(r.mac_cpag) - static_cast<double>(r.formula_cpag)) /
                       static_cast<double>(r.formula_cpag);
    if (dev >= kCpagFormulaSlack)
        r.failures.push_back("mac_cpag " + std::to_string(r.mac_cpag) + " deviates " + std::to_string(100.0 * dev) +
                             "% from t^2(c+hw) " + std::to_string(r.formula_cpag));
    return r;
}

inline std::vector<BenchRecord> run_bench(const std::vector<MapShape>& shapes, std::size_t reps, std::uint64_t seed = 1) {
    if (shapes.empty()) throw validation_error("bench: no shapes given");
    for (const auto& s : shapes)
        if (s.t * s.h * s.w > kNaiveTokenLimit)
            throw validation_error("bench: shape " + shape_str(s.dims()) + " exceeds the dense attention token limit");
    std::vector<BenchRecord> out;
    for (const auto& s : shapes) out.push_back(bench_shape(s, reps, seed));
    return out;
}

inline constexpr const char* kBenchCsvHeader =
    "t,c,h,w,mac_naive,mac_cpag,formula_naive,formula_cpag,wall_ns_naive,wall_ns_cpag";

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
    out << kBenchCsvHeader << '\n';
    for (const auto& r : records)
        out << r.t << ',' << r.c << ',' << r.h << ',' << r.w << ',' << r.mac_naive << ',' << r.mac_cpag << ','
            << r.formula_naive << ',' << r.formula_cpag << ',' << r.wall_ns_naive << ',' << r.wall_ns_cpag << '\n';
}

/// Parses "30x64x16x11" (t×c×h×w); several shapes separated by commas.
inline std::vector<MapShape> parse_shapes(const std::string& text) {
    std::vector<MapShape> out;
    std::stringstream list(text);
    std::string item;
    while (std::getline(list, item, ',')) {
        std::vector<std::size_t> v;
        std::stringstream parts(item);
        std::string num;
        while (std::getline(parts, num, 'x')) {
            const bool digits = !num.empty() && num.size() < 10 &&
                                std::all_of(num.begin(), num.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
            const std::size_t x = digits ? std::stoul(num) : 0;
            if (x == 0) throw validation_error("bad shape '" + item + "': expected positive integers like 30x64x16x11");
            v.push_back(x);
        }
        if (v.size() != 4) throw validation_error("bad shape '" + item + "': expected t x c x h x w");
        out.push_back({v[0], v[1], v[2], v[3]});
    }
    if (out.empty()) throw validation_error("no shapes given");
    return out;
}

}  // namespace cltd
