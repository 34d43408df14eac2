// cltd: data generation, training, evaluation, gradient checking and
// benchmarks on synthetic gait silhouettes.
//
// Exit status: 0 success, 1 validation/io error, 2 numerical failure.
// Failures print one line `error_code=<name> detail=<text>` to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cltd/bench.hpp"
#include "cltd/config.hpp"
#include "cltd/experiment.hpp"
#include "cltd/grad_suite.hpp"

namespace fs = std::filesystem;
using namespace cltd;

namespace {

constexpr int kExitOk = 0, kExitInvalid = 1, kExitNumerical = 2;

int fail(const std::string& code, const std::string& detail, int status) {
    std::string flat = detail;
    for (char& ch : flat)
        if (ch == '\n') ch = ' ';
    std::cerr << "error_code=" << code << " detail=" << flat << '\n';
    return status;
}

struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;

    void add(CLI::App* app, bool with_seed = true) {
        app->add_option("--config", file, "config file (key = value lines)");
        app->add_option("--set", sets, "override one config key, e.g. --set train.lr=0.01")->take_all();
        app->add_option("--out", out, "output directory (overrides out_dir)");
        if (with_seed)
            app->add_option_function<std::uint64_t>(
                "--seed", [this](std::uint64_t s) { seed = s, seed_given = true; }, "training seed (overrides seed)");
    }

    /// `base`, then the file, then --set overrides, then --out/--seed.
    /// `fallback` is read when no --config is given and it exists.
    RunConfig resolve(const fs::path& fallback = {}, RunConfig base = {}) const {
        RunConfig cfg = std::move(base);
        if (!file.empty())
            cfg = load_config(file, cfg);
        else if (!fallback.empty() && fs::exists(fallback))
            cfg = load_config(fallback, cfg);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw validation_error("--set expects key=value, got '" + s + "'");
            set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        if (!out.empty()) cfg.out_dir = out;
        if (seed_given) cfg.train.seed = seed;
        cfg.validate();
        return cfg;
    }

    fs::path out_dir() const { return out.empty() ? fs::path("out") : fs::path(out); }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path.string());
    f << text;
    if (!f) throw io_error("write failed for " + path.string());
}

Dataset load_data(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_dataset(cfg.data_dir);
    return build_dataset(cfg.data);
}

/// T, H, W of the sequences, checked to be uniform.
std::array<std::size_t, 3> data_extents(const Dataset& d) {
    const SyntheticSample* first = !d.train.empty() ? &d.train[0] : !d.gallery.empty() ? &d.gallery[0] : nullptr;
    if (!first) throw validation_error("dataset is empty");
    const Shape s = first->frames.shape();
    for (const auto* split : {&d.train, &d.gallery, &d.probe})
        for (const auto& x : *split)
            if (x.frames.shape() != s) throw dimension_error("dataset sequences differ in shape");
    return {s[0], s[1], s[2]};
}

Backbone load_backbone(const RunConfig& cfg, const fs::path& checkpoint) {
    std::mt19937_64 rng(0);
    Backbone b = Backbone::init(cfg.backbone, rng);
    restore(b, read_checkpoint(checkpoint));
    return b;
}

int cmd_gen_data(const RunConfig& cfg, const fs::path& dir) {
    const Dataset d = build_dataset(cfg.data);
    write_dataset(d, dir);
    RunConfig echo = cfg;
    echo.data_dir = dir.string();
    write_text(dir / "config.cfg", echo_config(echo));
    std::cout << "wrote " << d.train.size() + d.gallery.size() + d.probe.size() << " sequences to " << dir.string()
              << " (hash " << std::hex << dataset_hash(d) << std::dec << ")\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_text(out / "config.cfg", echo_config(cfg, true));
    const Dataset d = load_data(cfg);
    const auto [t, h, w] = data_extents(d);
    Model m = build_model(cfg.backbone, cfg.train, LabelMap(d.train).classes(), t, h, w, cfg.train.any_cltd());
    std::ofstream metrics(out / "metrics.jsonl");
    if (!metrics) throw io_error("cannot write " + (out / "metrics.jsonl").string());
    const auto t0 = std::chrono::steady_clock::now();
    const TrainSummary s = train(m, d.train, cfg.train, &metrics);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    NamedTensors all;
    collect(m, all);
    write_checkpoint(out / "checkpoint.bin", all);
    nlohmann::json done{{"event", "train_done"},          {"steps_run", s.steps_run},
                        {"steps_skipped", s.steps_skipped}, {"first_total", s.first_total},
                        {"last_total", s.last_total}};
    metrics << done.dump() << '\n';
    std::cout << "trained " << s.steps_run << " steps, loss " << s.first_total << " -> " << s.last_total << " in "
              << std::fixed << std::setprecision(1) << secs << " s; checkpoint " << (out / "checkpoint.bin").string()
              << '\n';
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint) {
    const fs::path out = cfg.out_dir;
    const Backbone b = load_backbone(cfg, checkpoint);
    const Dataset d = load_data(cfg);
    const auto g = embed_all(d.gallery, b), p = embed_all(d.probe, b);
    const RankResult r = evaluate_rank(g.emb, g.labels, p.emb, p.labels);
    nlohmann::json j{{"event", "eval"}, {"rank1", r.rank1}, {"rank5", r.rank5},
                     {"probes", d.probe.size()}, {"gallery", d.gallery.size()}, {"missing", r.missing}};
    fs::create_directories(out);
    std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
    if (!metrics) throw io_error("cannot write " + (out / "metrics.jsonl").string());
    metrics << j.dump() << '\n';
    std::cout << "rank1=" << r.rank1 << " rank5=" << r.rank5 << '\n';
    return kExitOk;
}

int cmd_export(const RunConfig& cfg, const fs::path& checkpoint, fs::path csv) {
    if (csv.empty()) csv = fs::path(cfg.out_dir) / "embeddings.csv";
    const Backbone b = load_backbone(cfg, checkpoint);
    const Dataset d = load_data(cfg);
    std::vector<SyntheticSample> both = d.gallery;
    both.insert(both.end(), d.probe.begin(), d.probe.end());
    std::ostringstream text;
    write_embeddings_csv(text, embed_all(both, b));
    write_text(csv, text.str());
    std::cout << "wrote " << both.size() << " embeddings to " << csv.string() << '\n';
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t failed = 0;
    std::cout << std::left << std::setw(22) << "op" << std::setw(7) << "seeds" << std::setw(8) << "coords"
              << "max_rel_error\n";
    run_gradcheck_suite(seed, [&](const GradCheckEntry& e) {
        if (!e.passed()) ++failed;
        std::cout << std::left << std::setw(22) << e.op << std::setw(7) << e.seeds << std::setw(8) << e.coords
                  << std::scientific << std::setprecision(3) << e.max_rel_error << std::defaultfloat
                  << (e.passed() ? "  PASS" : "  FAIL") << '\n'
                  << std::flush;
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (failed ? "FAILED " : "all passed ") << "(tolerance " << kGradTolerance << ", " << std::fixed
              << std::setprecision(2) << secs << " s)\n";
    if (failed) return fail("gradcheck_failed", std::to_string(failed) + " ops above tolerance", kExitNumerical);
    return kExitOk;
}

int cmd_bench(const std::string& shapes, std::size_t reps, std::uint64_t seed, const fs::path& csv) {
    const auto records = run_bench(parse_shapes(shapes), reps, seed);
    std::ostringstream text;
    write_bench_csv(text, records);
    if (!csv.empty()) write_text(csv, text.str());
    std::cout << text.str();
    std::size_t failures = 0;
    for (const auto& r : records) {
        std::cerr << "shape " << r.t << 'x' << r.c << 'x' << r.h << 'x' << r.w << ": formula ratio " << std::fixed
                  << std::setprecision(1) << r.formula_ratio() << "x, wall ratio " << r.wall_ratio() << "x\n";
        for (const auto& f : r.failures) {
            std::cerr << "  assertion failed: " << f << '\n';
            ++failures;
        }
    }
    if (failures) return fail("bench_assertion_failed", std::to_string(failures) + " MAC assertions failed",
                              kExitNumerical);
    return kExitOk;
}

int cmd_e2e(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_text(out / "config.cfg", echo_config(cfg, true));
    const E2eReport rep = run_e2e(cfg, seeds, jobs, [](const ArmResult& r) {
        std::cout << "seed " << r.seed << (r.cltd ? " cltd    " : " baseline") << " rank1=" << r.rank.rank1
                  << " rank5=" << r.rank.rank5 << " loss=" << r.summary.last_total << " time_s=" << std::fixed
                  << std::setprecision(1) << r.seconds << std::defaultfloat
                  << (r.error.empty() ? "" : " error=" + r.error) << '\n'
                  << std::flush;
    });
    nlohmann::json j;
    for (const auto& r : rep.runs)
        j["runs"].push_back({{"seed", r.seed},
                             {"cltd", r.cltd},
                             {"rank1", r.rank.rank1},
                             {"rank5", r.rank.rank5},
                             {"last_total", r.summary.last_total},
                             {"error", r.error}});
    j["mean_rank1_cltd"] = rep.mean_rank1(true);
    j["mean_rank1_baseline"] = rep.mean_rank1(false);
    j["jobs"] = rep.jobs;
    j["wall_s"] = rep.seconds;
    write_text(out / "e2e.json", j.dump(2) + '\n');
    std::cout << "mean rank1: cltd=" << rep.mean_rank1(true) << " baseline=" << rep.mean_rank1(false) << " ("
              << rep.jobs << " jobs, " << std::fixed << std::setprecision(1) << rep.seconds << " s)\n";
    if (!rep.all_ok()) return fail("numerical_error", "a training run failed or ended with a non-finite loss",
                                   kExitNumerical);
    return kExitOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::uint64_t v = 0;
        const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size())
            throw validation_error("bad seed list '" + text + "'");
        out.push_back(v);
    }
    if (out.empty()) throw validation_error("empty seed list");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal spectral training losses for gait recognition on synthetic silhouettes"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "suppress warnings and progress on stderr");

    ConfigFlags gen_flags, train_flags, eval_flags, export_flags, e2e_flags, config_flags;
    std::string checkpoint, csv, shapes = "30x64x16x11", seeds = "1,2,3,4,5";
    std::uint64_t gc_seed = 7, bench_seed = 1;
    std::size_t reps = 5, jobs = 0;
    bool docs = false;

    auto* gen = app.add_subcommand("gen-data", "write the synthetic PGM dataset and manifest");
    gen_flags.add(gen, false);
    auto* tr = app.add_subcommand("train", "train; writes checkpoint.bin, metrics.jsonl and config.cfg to out_dir");
    train_flags.add(tr);
    auto* ev = app.add_subcommand("eval", "retrieval Rank-1/Rank-5 of a checkpoint; appends to metrics.jsonl");
    eval_flags.add(ev);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.bin)");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite over every parameterized op");
    gc->add_option("--seed", gc_seed, "base seed")->capture_default_str();
    auto* be = app.add_subcommand("bench", "dense attention vs CPAG MAC counts and wall-clock");
    be->add_option("--shapes", shapes, "comma-separated TxCxHxW shapes")->capture_default_str();
    be->add_option("--reps", reps, "timing repetitions (median)")->capture_default_str();
    be->add_option("--seed", bench_seed, "input and weight seed")->capture_default_str();
    be->add_option("--csv", csv, "also write the CSV to this file");
    auto* ex = app.add_subcommand("export-embeddings", "write gallery and probe embeddings as CSV");
    export_flags.add(ex);
    ex->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.bin)");
    ex->add_option("--csv", csv, "output file (default <out>/embeddings.csv)");
    auto* e2e = app.add_subcommand("e2e", "CLTD vs lambda = 0 over several seeds; writes e2e.json");
    e2e_flags.add(e2e, false);
    e2e->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
    e2e->add_option("--jobs", jobs, "parallel seeds (0: hardware threads)")->capture_default_str();
    auto* cf = app.add_subcommand("config", "print the resolved config");
    config_flags.add(cf);
    cf->add_flag("--docs", docs, "include one comment line per key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage_error", e.what(), kExitInvalid);
    }
    log::quiet() = quiet;

    try {
        if (*gen) return cmd_gen_data(gen_flags.resolve(), gen_flags.out_dir());
        if (*tr) return cmd_train(train_flags.resolve());
        if (*ev) {
            const RunConfig cfg = eval_flags.resolve(eval_flags.out_dir() / "config.cfg");
            return cmd_eval(cfg, checkpoint.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(checkpoint));
        }
        if (*ex) {
            const RunConfig cfg = export_flags.resolve(export_flags.out_dir() / "config.cfg");
            return cmd_export(cfg, checkpoint.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(checkpoint),
                              csv);
        }
        if (*gc) return cmd_gradcheck(gc_seed);
        if (*be) return cmd_bench(shapes, reps, bench_seed, csv);
        if (*e2e) return cmd_e2e(e2e_flags.resolve({}, e2e_config()), parse_seeds(seeds), jobs);
        if (*cf) {
            std::cout << echo_config(config_flags.resolve(), docs);
            return kExitOk;
        }
    } catch (const Error& e) {
        return fail(e.code(), e.what(), e.is_numerical() ? kExitNumerical : kExitInvalid);
    } catch (const std::exception& e) {
        return fail("internal_error", e.what(), kExitInvalid);
    }
    return kExitInvalid;
}
