#pragma once

// Procedural walking silhouettes. Each identity is a torso ellipse with two
// swinging limb ellipses; confounders (bag, coat, noise, occlusion) are
// painted on top. Everything is a pure function of the specs and seeds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cltd/error.hpp"
#include "cltd/tensor.hpp"

namespace cltd {

/// Shape and gait parameters of one synthetic walker. Extents are fractions
/// of the frame; the ranges below keep the whole body inside the frame.
struct IdentitySpec {
    std::size_t label = 0;
    double torso_width = 0.25;   // of W, [0.16, 0.34]
    double torso_height = 0.36;  // of H, [0.28, 0.42]
    double limb_length = 0.32;   // of H, [0.24, 0.38]
    double limb_amplitude = 0.3; // radians, [0.10, 0.50]
    double frequency = 0.08;     // cycles per frame, [0.05, 0.12]
    double phase = 0.0;          // radians, [0, 2pi)

    void validate() const {
        auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
        if (!in(torso_width, 0.16, 0.34) || !in(torso_height, 0.28, 0.42) || !in(limb_length, 0.24, 0.38) ||
            !in(limb_amplitude, 0.10, 0.50) || !in(frequency, 0.05, 0.12) || !in(phase, 0.0, 2 * std::numbers::pi))
            throw validation_error("identity " + std::to_string(label) + ": parameter out of range");
    }

    template <class Rng>
    static IdentitySpec sample(std::size_t label, Rng& rng) {
        auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
        IdentitySpec s;
        s.label = label;
        s.torso_width = u(0.16, 0.34);
        s.torso_height = u(0.28, 0.42);
        s.limb_length = u(0.24, 0.38);
        s.limb_amplitude = u(0.10, 0.50);
        s.frequency = u(0.05, 0.12);
        s.phase = u(0.0, 2 * std::numbers::pi);
        return s;
    }
};

enum class ConfounderKind { None, Bag, Coat, Noise, Occlusion };

inline std::string to_string(ConfounderKind k) {
    switch (k) {
        case ConfounderKind::None: return "none";
        case ConfounderKind::Bag: return "bag";
        case ConfounderKind::Coat: return "coat";
        case ConfounderKind::Noise: return "noise";
        case ConfounderKind::Occlusion: return "occlusion";
    }
    return "none";
}

inline ConfounderKind parse_confounder(const std::string& s) {
    for (auto k : {ConfounderKind::None, ConfounderKind::Bag, ConfounderKind::Coat, ConfounderKind::Noise,
                   ConfounderKind::Occlusion})
        if (to_string(k) == s) return k;
    throw validation_error("unknown confounder '" + s + "' (expected none|bag|coat|noise|occlusion)");
}

struct ConfounderSpec {
    ConfounderKind kind = ConfounderKind::None;
    double intensity = 0.0;  // [0,1], ignored for None
    std::uint64_t seed = 0;

    void validate() const {
        if (kind != ConfounderKind::None && !(intensity >= 0.0 && intensity <= 1.0))
            throw validation_error("confounder intensity must be in [0,1], got " + std::to_string(intensity));
    }
};

struct SyntheticSample {
    Tensor frames;  // T×H×W, values in {0,1}
    std::size_t identity = 0;
    ConfounderSpec confounder;
    std::size_t sequence = 0;
};

namespace synth {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined key
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Axis-aligned ellipse rotated by `angle` (radians, from the vertical).
inline void fill_ellipse(double* frame, std::size_t h, std::size_t w, double cy, double cx, double ry, double rx,
                         double angle = 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double reach = std::max(ry, rx) + 1.0;
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - reach)), y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + reach));
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - reach)), x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + reach));
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, h - 1); ++y)
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, w - 1); ++x) {
            const double dy = (static_cast<double>(y) + 0.5) - cy, dx = (static_cast<double>(x) + 0.5) - cx;
            const double along = dy * c + dx * s, across = -dy * s + dx * c;
            if ((along * along) / (ry * ry) + (across * across) / (rx * rx) <= 1.0) frame[y * w + x] = 1.0;
        }
}

inline void dilate(double* frame, std::size_t h, std::size_t w, std::size_t radius) {
    if (radius == 0) return;
    std::vector<double> src(frame, frame + h * w);
    const auto r = static_cast<std::ptrdiff_t>(radius);
    for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y)
        for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
            if (src[y * w + x] != 0.0) continue;
            bool hit = false;
            for (std::ptrdiff_t dy = -r; dy <= r && !hit; ++dy)
                for (std::ptrdiff_t dx = -r; dx <= r && !hit; ++dx) {
                    if (dy * dy + dx * dx > r * r) continue;
                    const auto yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    hit = src[yy * w + xx] != 0.0;
                }
            if (hit) frame[y * w + x] = 1.0;
        }
}

}  // namespace synth

/// Renders T frames of the walker and applies the confounder. `seed` drives
/// per-sequence jitter (start phase, horizontal offset) and confounder noise.
inline SyntheticSample generate_sequence(const IdentitySpec& id, const ConfounderSpec& conf, std::size_t t_len,
                                         std::size_t h, std::size_t w, std::uint64_t seed) {
    id.validate();
    conf.validate();
    if (t_len == 0 || h < 16 || w < 12)
        throw validation_error("generate_sequence: need T >= 1 and a frame of at least 16x12, got " +
                               std::to_string(h) + "x" + std::to_string(w));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double jitter_phase = 0.6 * (unit(rng) - 0.5);
    const double jitter_x = 0.04 * static_cast<double>(w) * (unit(rng) - 0.5);

    const double hd = static_cast<double>(h), wd = static_cast<double>(w);
    const double torso_ry = 0.5 * id.torso_height * hd, torso_rx = 0.5 * id.torso_width * wd;
    const double torso_cy = 0.50 * hd - 0.5 * id.torso_height * hd + 0.06 * hd;  // hip line near 0.56 H
    const double hip_y = torso_cy + 0.85 * torso_ry;
    const double limb_len = id.limb_length * hd, limb_rx = std::max(1.0, 0.05 * wd);

    SyntheticSample s;
    s.frames = Tensor({t_len, h, w});
    s.identity = id.label;
    s.confounder = conf;
    for (std::size_t t = 0; t < t_len; ++t) {
        double* f = s.frames.data() + t * h * w;
        const double cx = 0.5 * wd + jitter_x;
        const double swing =
            id.limb_amplitude * std::sin(2 * std::numbers::pi * id.frequency * static_cast<double>(t) + id.phase + jitter_phase);
        synth::fill_ellipse(f, h, w, torso_cy, cx, torso_ry, torso_rx);
        for (double sign : {1.0, -1.0}) {
            const double a = sign * swing;
            const double ly = hip_y + 0.5 * limb_len * std::cos(a), lx = cx + 0.5 * limb_len * std::sin(a);
            synth::fill_ellipse(f, h, w, ly, lx, 0.5 * limb_len, limb_rx, a);
        }

        const double in = conf.intensity;
        switch (conf.kind) {
            case ConfounderKind::None: break;
            case ConfounderKind::Bag: {
                const double ry = (0.05 + 0.08 * in) * hd, rx = (0.04 + 0.08 * in) * wd;
                synth::fill_ellipse(f, h, w, torso_cy, cx + torso_rx + 0.6 * rx, ry, rx);
                break;
            }
            case ConfounderKind::Coat:
                synth::dilate(f, h, w, static_cast<std::size_t>(std::ceil(3.0 * in)));
                break;
            case ConfounderKind::Noise:
            case ConfounderKind::Occlusion: break;  // handled below with the sequence rng
        }
    }

    std::mt19937_64 crng(synth::mix_seed(conf.seed, seed));
    if (conf.kind == ConfounderKind::Noise) {
        std::bernoulli_distribution flip(0.15 * conf.intensity);
        for (std::size_t i = 0; i < s.frames.size(); ++i)
            if (flip(crng)) s.frames[i] = 1.0 - s.frames[i];
    } else if (conf.kind == ConfounderKind::Occlusion) {
        const auto band = static_cast<std::size_t>(std::lround(0.25 * conf.intensity * hd));
        const auto top = static_cast<std::size_t>(std::uniform_real_distribution<double>(0.3, 0.6)(crng) * hd);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t y = top; y < std::min(h, top + band); ++y)
                std::fill_n(s.frames.data() + (t * h + y) * w, w, 0.0);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetConfig {
    std::size_t train_ids = 40;
    std::size_t test_ids = 20;
    std::size_t seqs_per_id = 4;
    std::size_t t = 30, h = 64, w = 44;
    std::vector<ConfounderKind> confounders = {ConfounderKind::Bag, ConfounderKind::Coat, ConfounderKind::Noise,
                                               ConfounderKind::Occlusion};
    double intensity = 0.5;
    std::uint64_t seed = 1;
};

/// Train identities are labelled 0..train_ids-1, test identities follow.
/// Sequence 0 of every identity is clean; the rest cycle through the
/// confounder list. Test sequence 0 forms the gallery, the others the probe.
struct Dataset {
    std::vector<SyntheticSample> train, gallery, probe;
    bool probe_confounded = true;
};

inline ConfounderSpec confounder_for(const DatasetConfig& cfg, std::size_t label, std::size_t seq) {
    ConfounderSpec c;
    c.seed = synth::mix_seed(cfg.seed ^ 0xC0FFEEull, label * 1000 + seq);
    if (seq == 0 || cfg.confounders.empty()) return c;
    c.kind = cfg.confounders[(label + seq - 1) % cfg.confounders.size()];
    c.intensity = cfg.intensity;
    return c;
}

inline Dataset build_dataset(const DatasetConfig& cfg) {
    if (cfg.train_ids < 2 || cfg.test_ids < 2) throw validation_error("dataset: need at least 2 identities per split");
    if (cfg.seqs_per_id < 2) throw validation_error("dataset: need at least 2 sequences per identity");
    Dataset d;
    d.probe_confounded = !cfg.confounders.empty();
    for (std::size_t label = 0; label < cfg.train_ids + cfg.test_ids; ++label) {
        std::mt19937_64 id_rng(synth::mix_seed(cfg.seed, label));
        const IdentitySpec id = IdentitySpec::sample(label, id_rng);
        for (std::size_t seq = 0; seq < cfg.seqs_per_id; ++seq) {
            auto s = generate_sequence(id, confounder_for(cfg, label, seq), cfg.t, cfg.h, cfg.w,
                                       synth::mix_seed(cfg.seed + 17, label * 1000 + seq));
            s.sequence = seq;
            if (label < cfg.train_ids)
                d.train.push_back(std::move(s));
            else if (seq == 0)
                d.gallery.push_back(std::move(s));
            else
                d.probe.push_back(std::move(s));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Files: id/seq/frame_%04d.pgm plus a manifest

inline void write_pgm(const std::filesystem::path& path, const double* frame, std::size_t h, std::size_t w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path.string());
    out << "P5\n" << w << ' ' << h << "\n255\n";
    std::vector<char> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) row[x] = frame[y * w + x] != 0.0 ? static_cast<char>(255) : 0;
        out.write(row.data(), static_cast<std::streamsize>(w));
    }
    if (!out) throw io_error("short write to " + path.string());
}

/// Reads a binary 8-bit PGM; nonzero pixels become 1.
inline Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w == 0 || h == 0 || maxval == 0 || maxval > 255)
        throw io_error(path.string() + ": not an 8-bit P5 image");
    in.get();
    std::vector<unsigned char> buf(h * w);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw io_error(path.string() + ": truncated");
    Tensor f({h, w});
    for (std::size_t i = 0; i < buf.size(); ++i) f[i] = buf[i] ? 1.0 : 0.0;
    return f;
}

/// FNV-1a over the frame bits and metadata of every sequence, in split order.
inline std::uint64_t dataset_hash(const Dataset& d) {
    std::uint64_t hsh = 0xcbf29ce484222325ull;
    auto feed = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hsh ^= (v >> (8 * i)) & 0xff;
            hsh *= 0x100000001b3ull;
        }
    };
    for (const auto* split : {&d.train, &d.gallery, &d.probe})
        for (const auto& s : *split) {
            feed(s.identity);
            feed(s.sequence);
            feed(static_cast<std::uint64_t>(s.confounder.kind));
            for (double v : s.frames.span()) feed(v != 0.0);
        }
    return hsh;
}

inline const char* split_name(std::size_t i) {
    static const char* names[] = {"train", "gallery", "probe"};
    return names[i];
}

/// Writes frames and `manifest.txt`. Manifest lines after the `#` header:
/// split id seq kind intensity path(relative to `dir`).
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
    std::ostringstream man;
    man << "# cltd-synth-gait manifest v1\n";
    man << "# hash " << std::hex << dataset_hash(d) << std::dec << '\n';
    man << "# probe_confounded " << (d.probe_confounded ? "true" : "false") << '\n';
    const std::vector<const std::vector<SyntheticSample>*> splits = {&d.train, &d.gallery, &d.probe};
    for (std::size_t si = 0; si < splits.size(); ++si)
        for (const auto& s : *splits[si]) {
            const std::size_t t_len = s.frames.extent(0), h = s.frames.extent(1), w = s.frames.extent(2);
            const fs::path rel = fs::path(std::to_string(s.identity)) / std::to_string(s.sequence);
            fs::create_directories(dir / rel, ec);
            if (ec) throw io_error("cannot create " + (dir / rel).string());
            for (std::size_t t = 0; t < t_len; ++t) {
                char name[32];
                std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
                write_pgm(dir / rel / name, s.frames.data() + t * h * w, h, w);
            }
            man << split_name(si) << ' ' << s.identity << ' ' << s.sequence << ' ' << to_string(s.confounder.kind)
                << ' ' << s.confounder.intensity << ' ' << rel.string() << '\n';
        }
    std::ofstream out(dir / "manifest.txt");
    out << man.str();
    if (!out) throw io_error("cannot write manifest in " + dir.string());
}

/// Loads a dataset written by write_dataset.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw io_error("no manifest.txt in " + dir.string());
    Dataset d;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# probe_confounded", 0) == 0) d.probe_confounded = line.find("true") != std::string::npos;
            continue;
        }
        std::istringstream ls(line);
        std::string split, kind, rel;
        SyntheticSample s;
        if (!(ls >> split >> s.identity >> s.sequence >> kind >> s.confounder.intensity >> rel))
            throw io_error("malformed manifest line: " + line);
        s.confounder.kind = parse_confounder(kind);
        std::vector<Tensor> frames;
        for (std::size_t t = 0;; ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
            const fs::path p = dir / rel / name;
            if (!fs::exists(p)) break;
            frames.push_back(read_pgm(p));
        }
        if (frames.empty()) throw io_error("no frames under " + (dir / rel).string());
        const std::size_t h = frames[0].extent(0), w = frames[0].extent(1);
        s.frames = Tensor({frames.size(), h, w});
        for (std::size_t t = 0; t < frames.size(); ++t) {
            frames[t].require_same_shape(frames[0], "frame size");
            std::copy_n(frames[t].data(), h * w, s.frames.data() + t * h * w);
        }
        if (split == "train")
            d.train.push_back(std::move(s));
        else if (split == "gallery")
            d.gallery.push_back(std::move(s));
        else if (split == "probe")
            d.probe.push_back(std::move(s));
        else
            throw io_error("unknown split '" + split + "' in manifest");
    }
    if (d.train.empty() && d.gallery.empty()) throw io_error("empty manifest in " + dir.string());
    return d;
}

}  // namespace cltd
