#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cltd/gradcheck.hpp"
#include "cltd/train.hpp"
#include "test_util.hpp"

using namespace cltd;
using cltd::testing::random_tensor;

namespace {

BackboneConfig micro_backbone() {
    BackboneConfig b;
    b.widths = {1, 2, 4, 8};
    b.downsample = {false, true, false};
    b.embed_dim = 6;
    return b;
}

TrainConfig micro_train() {
    TrainConfig t;
    t.p = 2;
    t.k = 2;
    t.window = 3;
    t.c_out = 2;
    t.lr = 0.05;
    return t;
}

DatasetConfig micro_data() {
    DatasetConfig d;
    d.train_ids = 4;
    d.test_ids = 3;
    d.seqs_per_id = 4;
    d.t = 6;
    d.h = 16;
    d.w = 12;
    return d;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(TrainConfig, Validation) {
    const BackboneConfig b;
    TrainConfig t;
    EXPECT_NO_THROW(t.validate(b));
    t.lambda = {0.1, 0.2};
    EXPECT_THROW(t.validate(b), Error);
    t = {};
    t.lambda = {0.1, -0.2, 0.3};
    EXPECT_THROW(t.validate(b), Error);
    t = {};
    t.p = 1;
    EXPECT_THROW(t.validate(b), Error);
    t = {};
    t.window = 4;
    EXPECT_THROW(t.validate(b), Error);
}

TEST(BuildModel, CltdStagesDoNotChangeTheInferencePath) {
    const auto b = micro_backbone();
    auto t = micro_train();
    const Model with = build_model(b, t, 4, 4, 8, 8, true);
    t.lambda = {0, 0, 0};
    const Model without = build_model(b, t, 4, 4, 8, 8, false);
    EXPECT_EQ(with.stages.size(), 3u);
    EXPECT_TRUE(without.stages.empty());
    const Tensor x = random_tensor({4, 1, 8, 8}, 3);
    EXPECT_TRUE(embed(x, with.backbone) == embed(x, without.backbone));
}

TEST(BuildModel, StagesFollowMapShapes) {
    auto b = micro_backbone();
    b.widths = {1, 1, 2, 4, 8};
    b.downsample = {true, false, true, false};
    const Model m = build_model(b, micro_train(), 4, 4, 16, 16, true);
    // CLTD 1 runs from f_2 (1×8×8) to f_3 (2×8×8)
    EXPECT_EQ(m.stages[0].factual.in_c, 1u);
    EXPECT_EQ(m.stages[0].factual.out_c, 2u);
    EXPECT_EQ(m.stages[2].factual.out_h, 4u);
}

TEST(ComputeObjective, FullStepGradientsMatchFiniteDifferences) {
    auto b = micro_backbone();
    // Central differences straddle activation kinks often enough to swamp the
    // tolerance; a unit slope keeps this check about the assembly of the step.
    b.leaky_slope = 1.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        auto t = micro_train();
        t.seed = seed;
        Model m = build_model(b, t, 2, 4, 8, 8, true);
        auto r = cltd::testing::rng(seed);
        m.for_each([&](Parameter& p) {
            if (p.name.find("bias") != std::string::npos) p.value = Tensor::uniform(p.value.shape(), r, -0.2, 0.2);
        });
        std::vector<Tensor> xs;
        for (int i = 0; i < 4; ++i) xs.push_back(random_tensor({4, 1, 8, 8}, seed * 10 + i, 0.0, 1.0));
        std::vector<const Tensor*> in;
        for (const auto& x : xs) in.push_back(&x);
        const std::vector<std::size_t> y{0, 1, 0, 1};
        m.zero_grad();
        compute_objective(m, in, y, t, true);
        auto loss = [&] { return compute_objective(m, in, y, t, false).total; };
        // With a total loss of a few units, central differences at eps 1e-5 carry
        // ~1e-10 of rounding noise; deep CLTD Q/K gradients sit near 1e-7, so the
        // relative error uses a 1e-6 floor. The per-op checks keep the 1e-8 floor.
        m.for_each([&](Parameter& p) {
            EXPECT_LE(check_parameter(p, loss, 1e-5, 12, seed, 1e-6).max_rel_error, 1e-4) << p.name << " seed " << seed;
        });
    }
}

TEST(ComputeObjective, ZeroLambdaSkipsStagesAndMatchesBaseline) {
    const auto b = micro_backbone();
    auto t = micro_train();
    Model with = build_model(b, t, 2, 4, 8, 8, true);
    auto t0 = t;
    t0.lambda = {0, 0, 0};
    Model without = build_model(b, t0, 2, 4, 8, 8, false);
    std::vector<Tensor> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(random_tensor({4, 1, 8, 8}, 40 + i, 0.0, 1.0));
    std::vector<const Tensor*> in;
    for (const auto& x : xs) in.push_back(&x);
    const std::vector<std::size_t> y{0, 1, 0, 1};
    const auto ops_before = instrument::cltd_ops().load();
    const auto a = compute_objective(with, in, y, t0, false);
    EXPECT_EQ(instrument::cltd_ops().load(), ops_before);
    const auto c = compute_objective(without, in, y, t0, false);
    EXPECT_EQ(a.total, c.total);
    EXPECT_EQ(a.total, a.tri + a.ce);
    EXPECT_THROW(compute_objective(without, in, y, t, false), Error);  // lambda > 0 without stages
}

TEST(Train, LossDecreasesOnMicroSet) {
    const auto d = build_dataset(micro_data());
    auto t = micro_train();
    t.steps = 50;
    Model m = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    std::vector<Tensor> xs;
    std::vector<std::size_t> y;
    const LabelMap labels(d.train);
    for (const auto& s : d.train) {
        xs.push_back(as_backbone_input(s.frames));
        y.push_back(labels.to_class.at(s.identity));
    }
    std::vector<const Tensor*> all;
    for (const auto& x : xs) all.push_back(&x);
    const double before = compute_objective(m, all, y, t, false).total;
    std::ostringstream metrics;
    const auto sum = train(m, d.train, t, &metrics);
    EXPECT_EQ(sum.steps_run, 50u);
    const double after = compute_objective(m, all, y, t, false).total;
    EXPECT_LT(after, before);

    std::istringstream lines(metrics.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("step").get<std::size_t>(), n);
        for (const char* k : {"tri", "ce", "stage1_nce", "stage1_ce", "stage3_total", "total"}) EXPECT_TRUE(j.contains(k)) << k;
        ++n;
    }
    EXPECT_EQ(n, 50u);
}

TEST(Train, SameSeedSameMetrics) {
    const auto d = build_dataset(micro_data());
    auto t = micro_train();
    t.steps = 5;
    std::ostringstream a, b;
    Model m1 = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    Model m2 = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    train(m1, d.train, t, &a);
    train(m2, d.train, t, &b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Train, DivergenceIsNumericalErrorNamingTheTerm) {
    const auto d = build_dataset(micro_data());
    auto t = micro_train();
    t.steps = 20;
    t.lr = 1e200;
    Model m = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    try {
        train(m, d.train, t);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_TRUE(e.is_numerical()) << e.code() << " " << e.what();
    }
}

TEST(Train, DivergedParametersAreNamed) {
    Model m = build_model(micro_backbone(), micro_train(), 4, 6, 16, 12, true);
    EXPECT_EQ(diverged_parameter(m), "");
    m.stages[0].counterfactual.gamma_raw.value[0] = -1e6;  // softplus underflows to 0
    EXPECT_EQ(diverged_parameter(m), m.stages[0].counterfactual.gamma_raw.name);
    m.backbone.embed_b.value[0] = std::numeric_limits<double>::infinity();
    EXPECT_EQ(diverged_parameter(m), "backbone.embed.bias");
}

TEST(Train, EvaluationRunsNoCltdOps) {
    const auto d = build_dataset(micro_data());
    auto t = micro_train();
    t.steps = 3;
    Model m = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    train(m, d.train, t);
    const auto before = instrument::cltd_ops().load();
    const auto g = embed_all(d.gallery, m.backbone), p = embed_all(d.probe, m.backbone);
    evaluate_rank(g.emb, g.labels, p.emb, p.labels);
    EXPECT_EQ(instrument::cltd_ops().load(), before);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
    Model m = build_model(micro_backbone(), micro_train(), 4, 4, 8, 8, true);
    NamedTensors all;
    collect(m, all);
    const auto path = temp_file("cltd_roundtrip.ckpt");
    write_checkpoint(path, all);
    const NamedTensors back = read_checkpoint(path);
    ASSERT_EQ(back.size(), all.size());
    for (const auto& [name, t] : all) {
        ASSERT_TRUE(back.count(name)) << name;
        EXPECT_EQ(back.at(name).shape(), t.shape());
        EXPECT_EQ(std::memcmp(back.at(name).data(), t.data(), t.size() * sizeof(double)), 0) << name;
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, StrippedAndFullGiveIdenticalEmbeddings) {
    const auto d = build_dataset(micro_data());
    auto t = micro_train();
    t.steps = 3;
    Model m = build_model(micro_backbone(), t, 4, 6, 16, 12, true);
    train(m, d.train, t);
    NamedTensors all;
    collect(m, all);
    const auto full = temp_file("cltd_full.ckpt"), stripped = temp_file("cltd_stripped.ckpt");
    write_checkpoint(full, all);
    write_checkpoint(stripped, filter_prefix(all, "backbone."));
    EXPECT_LT(read_checkpoint(stripped).size(), all.size());

    auto load = [&](const std::filesystem::path& p) {
        auto rng = cltd::testing::rng(99);  // values are overwritten by restore
        Backbone b = Backbone::init(micro_backbone(), rng);
        restore(b, read_checkpoint(p));
        return embed_all(d.probe, b).emb;
    };
    const Tensor a = load(full), b = load(stripped);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    EXPECT_TRUE(a == embed_all(d.probe, m.backbone).emb);
    std::filesystem::remove(full);
    std::filesystem::remove(stripped);
}

TEST(Checkpoint, CorruptOrIncompleteFilesAreIoErrors) {
    const auto path = temp_file("cltd_bad.ckpt");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPT";
    }
    try {
        read_checkpoint(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "io_error");
    }
    NamedTensors one{{"backbone.stage1.weight", Tensor({2, 1, 3, 3})}};
    write_checkpoint(path, one);
    auto rng = cltd::testing::rng(1);
    Backbone b = Backbone::init(micro_backbone(), rng);
    EXPECT_THROW(restore(b, read_checkpoint(path)), Error);  // other tensors missing
    one["backbone.stage1.weight"] = Tensor({3, 1, 3, 3});
    NamedTensors full;
    collect(b, full);
    full["backbone.stage1.weight"] = Tensor({3, 1, 3, 3});
    EXPECT_THROW(restore(b, full), Error);  // shape mismatch
    std::filesystem::remove(path);
}

TEST(BatchSampler, DistinctSubjectsWithKEach) {
    const auto d = build_dataset(micro_data());
    BatchSampler s(d.train, 3, 2, 5), s2(d.train, 3, 2, 5);
    for (int rep = 0; rep < 10; ++rep) {
        const auto idx = s.next();
        EXPECT_EQ(idx, s2.next());
        ASSERT_EQ(idx.size(), 6u);
        std::map<std::size_t, int> count;
        for (std::size_t i : idx) ++count[d.train[i].identity];
        EXPECT_EQ(count.size(), 3u);
        for (const auto& [id, c] : count) EXPECT_EQ(c, 2);
    }
    EXPECT_THROW(BatchSampler(d.train, 5, 2, 1), Error);
}

TEST(EvaluateRank, ProbeEqualsGallery) {
    const Tensor g = random_tensor({6, 4}, 1);
    const std::vector<std::size_t> y{0, 1, 2, 3, 4, 5};
    const auto r = evaluate_rank(g, y, g, y);
    EXPECT_EQ(r.rank1, 100.0);
    EXPECT_EQ(r.rank5, 100.0);
}

TEST(EvaluateRank, OneHotPerClass) {
    Tensor g({3, 3}), p({6, 3});
    for (std::size_t c = 0; c < 3; ++c) {
        g(c, c) = 1.0;
        p(2 * c, c) = 1.0;
        p(2 * c + 1, c) = 1.0;
    }
    EXPECT_EQ(evaluate_rank(g, {0, 1, 2}, p, {0, 0, 1, 1, 2, 2}).rank1, 100.0);
}

TEST(EvaluateRank, SharedDistributionIsChance) {
    std::mt19937_64 r(17);
    std::normal_distribution<double> n;
    Tensor g({20, 4}), p({1000, 4});
    for (double& v : g.span()) v = n(r);
    for (double& v : p.span()) v = n(r);
    std::vector<std::size_t> gy, py;
    for (std::size_t i = 0; i < 20; ++i) gy.push_back(i % 2);
    for (std::size_t i = 0; i < 1000; ++i) py.push_back(i % 2);
    const double r1 = evaluate_rank(g, gy, p, py).rank1;
    EXPECT_NEAR(r1, 50.0, 10.0);
}

TEST(EvaluateRank, TiesGoToLowerIndexAndMissingLabelsAreMisses) {
    Tensor g({2, 2}), p({2, 2});
    const auto r = evaluate_rank(g, {5, 7}, p, {7, 9});
    EXPECT_EQ(r.rank1, 0.0);   // tie resolved to label 5; label 9 absent
    EXPECT_EQ(r.rank5, 50.0);
    EXPECT_EQ(r.missing, 1u);
    EXPECT_THROW(evaluate_rank(Tensor({0, 2}), {}, p, {7, 9}), Error);
}

TEST(EmbeddingCsv, HeaderAndRows) {
    EmbeddingSet s;
    s.emb = Tensor({2, 3});
    s.emb(1, 2) = 0.25;
    s.labels = {4, 5};
    s.seqs = {0, 3};
    std::ostringstream out;
    write_embeddings_csv(out, s);
    EXPECT_EQ(out.str(), "id,seq,d0,d1,d2\n4,0,0,0,0\n5,3,0,0,0.25\n");
}
