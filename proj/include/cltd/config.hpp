#pragma once

// Run configuration: `key = value` text with dotted keys for every dataset,
// backbone and training field. '#' starts a comment. Unknown keys and
// malformed values are validation errors.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cltd/train.hpp"

namespace cltd {

struct RunConfig {
    DatasetConfig data;
    BackboneConfig backbone;
    TrainConfig train;
    std::string data_dir;         // empty: synthesize in memory from data.*
    std::string out_dir = "out";

    void validate() const {
        backbone.validate();
        train.validate(backbone);
        if (data.train_ids < train.p)
            throw validation_error("config: data.train_ids=" + std::to_string(data.train_ids) + " < train.p=" +
                                   std::to_string(train.p));
        if (data.seqs_per_id < 2) throw validation_error("config: data.seqs_per_id must be >= 2");
        if (data.t == 0 || data.h == 0 || data.w == 0) throw validation_error("config: zero data extent");
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

inline std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw validation_error("config: " + key + ": expected a non-negative integer, got '" + v + "'");
    return x;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw validation_error("config: " + key + ": expected a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw validation_error("config: " + key + ": expected true or false, got '" + v + "'");
}

struct Field {
    const char* key;
    const char* doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Field size_field(const char* key, const char* doc, T RunConfig::*part, std::size_t T::*member) {
    return {key, doc, [=](const RunConfig& c) { return std::to_string(c.*part.*member); },
            [=](RunConfig& c, const std::string& v) { c.*part.*member = parse_uint(key, v); }};
}

template <class T>
Field double_field(const char* key, const char* doc, T RunConfig::*part, double T::*member) {
    return {key, doc, [=](const RunConfig& c) { return fmt(c.*part.*member); },
            [=](RunConfig& c, const std::string& v) { c.*part.*member = parse_double(key, v); }};
}

template <class T>
Field bool_field(const char* key, const char* doc, T RunConfig::*part, bool T::*member) {
    return {key, doc, [=](const RunConfig& c) { return std::string(c.*part.*member ? "true" : "false"); },
            [=](RunConfig& c, const std::string& v) { c.*part.*member = parse_bool(key, v); }};
}

}  // namespace config_detail

/// Every accepted key in echo order, with its documentation line.
inline const std::vector<config_detail::Field>& config_fields() {
    using namespace config_detail;
    using R = RunConfig;
    static const std::vector<Field> fields = {
        {"seed", "training seed (initialization and batch order)",
         [](const R& c) { return std::to_string(c.train.seed); },
         [](R& c, const std::string& v) { c.train.seed = parse_uint("seed", v); }},
        {"out_dir", "output directory for checkpoint, metrics and config echo",
         [](const R& c) { return c.out_dir; }, [](R& c, const std::string& v) { c.out_dir = v; }},
        {"data.dir", "dataset directory written by gen-data; empty synthesizes from data.*",
         [](const R& c) { return c.data_dir; }, [](R& c, const std::string& v) { c.data_dir = v; }},
        {"data.seed", "dataset generator seed", [](const R& c) { return std::to_string(c.data.seed); },
         [](R& c, const std::string& v) { c.data.seed = parse_uint("data.seed", v); }},
        size_field("data.train_ids", "training identities", &R::data, &DatasetConfig::train_ids),
        size_field("data.test_ids", "test identities (gallery + probe)", &R::data, &DatasetConfig::test_ids),
        size_field("data.seqs_per_id", "sequences per identity; sequence 0 is clean", &R::data,
                   &DatasetConfig::seqs_per_id),
        size_field("data.frames", "frames per sequence T", &R::data, &DatasetConfig::t),
        size_field("data.height", "silhouette height", &R::data, &DatasetConfig::h),
        size_field("data.width", "silhouette width", &R::data, &DatasetConfig::w),
        {"data.confounders", "confounder cycle for sequences 1.. (bag,coat,noise,occlusion)",
         [](const R& c) {
             std::vector<std::string> v;
             for (auto k : c.data.confounders) v.push_back(to_string(k));
             return join(v);
         },
         [](R& c, const std::string& v) {
             c.data.confounders.clear();
             for (const auto& s : split(v)) c.data.confounders.push_back(parse_confounder(s));
         }},
        double_field("data.intensity", "confounder intensity in [0,1]", &R::data, &DatasetConfig::intensity),
        {"backbone.widths", "channels of f_1..f_n (f_1 is the 1-channel input)",
         [](const R& c) {
             std::vector<std::string> v;
             for (auto w : c.backbone.widths) v.push_back(std::to_string(w));
             return join(v);
         },
         [](R& c, const std::string& v) {
             c.backbone.widths.clear();
             for (const auto& s : split(v)) c.backbone.widths.push_back(parse_uint("backbone.widths", s));
         }},
        {"backbone.downsample", "per stage: 2x2 average pooling before the convolution",
         [](const R& c) {
             std::vector<std::string> v;
             for (bool b : c.backbone.downsample) v.push_back(b ? "true" : "false");
             return join(v);
         },
         [](R& c, const std::string& v) {
             c.backbone.downsample.clear();
             for (const auto& s : split(v)) c.backbone.downsample.push_back(parse_bool("backbone.downsample", s));
         }},
        size_field("backbone.embed_dim", "embedding dimension", &R::backbone, &BackboneConfig::embed_dim),
        size_field("backbone.cltd_stages", "CLTD stages, attached to the last map transitions", &R::backbone,
                   &BackboneConfig::cltd_stages),
        double_field("backbone.leaky_slope", "leaky ReLU negative slope", &R::backbone, &BackboneConfig::leaky_slope),
        {"train.lambda", "per-stage CLTD weights; all zero is the baseline",
         [](const R& c) {
             std::vector<std::string> v;
             for (double l : c.train.lambda) v.push_back(fmt(l));
             return join(v);
         },
         [](R& c, const std::string& v) {
             c.train.lambda.clear();
             for (const auto& s : split(v)) c.train.lambda.push_back(parse_double("train.lambda", s));
         }},
        double_field("train.margin", "triplet margin", &R::train, &TrainConfig::margin),
        double_field("train.lr", "SGD learning rate", &R::train, &TrainConfig::lr),
        size_field("train.steps", "SGD steps", &R::train, &TrainConfig::steps),
        size_field("train.p", "identities per batch", &R::train, &TrainConfig::p),
        size_field("train.k", "sequences per identity per batch", &R::train, &TrainConfig::k),
        {"train.nce_variant", "InfoNCE variant: exp or literal",
         [](const R& c) { return to_string(c.train.variant); },
         [](R& c, const std::string& v) {
             if (v == "exp")
                 c.train.variant = NceVariant::Exp;
             else if (v == "literal")
                 c.train.variant = NceVariant::Literal;
             else
                 throw validation_error("config: train.nce_variant: expected exp or literal, got '" + v + "'");
         }},
        size_field("train.window", "FPH low-frequency window k (odd)", &R::train, &TrainConfig::window),
        size_field("train.c_out", "FPH projection channels", &R::train, &TrainConfig::c_out),
        {"train.fph_pool", "FPH temporal pooling: mean or max",
         [](const R& c) { return std::string(c.train.fph_pool == ops::PoolMode::Mean ? "mean" : "max"); },
         [](R& c, const std::string& v) {
             if (v == "mean")
                 c.train.fph_pool = ops::PoolMode::Mean;
             else if (v == "max")
                 c.train.fph_pool = ops::PoolMode::Max;
             else
                 throw validation_error("config: train.fph_pool: expected mean or max, got '" + v + "'");
         }},
        double_field("train.fph_init_gain", "scale of the FPH projection initialization", &R::train,
                     &TrainConfig::fph_init_gain),
        bool_field("train.use_nce", "include the InfoNCE term in CLTD stages", &R::train, &TrainConfig::use_nce),
        bool_field("train.use_ce", "include the factual/counterfactual CE term in CLTD stages", &R::train,
                   &TrainConfig::use_ce),
    };
    return fields;
}

/// Applies one `key = value` assignment.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields())
        if (key == f.key) return f.set(cfg, value);
    throw validation_error("config: unknown key '" + key + "'");
}

/// Parses config text over `base`. Later assignments override earlier ones.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::stringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw validation_error("config line " + std::to_string(no) + ": expected key = value");
        set_config_value(base, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// Resolved config in the input format; parse_config(echo_config(c)) == c.
inline std::string echo_config(const RunConfig& cfg, bool with_docs = false) {
    std::string out;
    for (const auto& f : config_fields()) {
        if (with_docs) out += std::string("# ") + f.doc + '\n';
        out += std::string(f.key) + " = " + f.get(cfg) + '\n';
    }
    return out;
}

}  // namespace cltd
