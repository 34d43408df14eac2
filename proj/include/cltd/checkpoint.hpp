#pragma once

// Checkpoint file, little-endian:
//   magic   8 bytes  "CLTDCKPT"
//   version u32      1
//   count   u64      number of tensors
//   per tensor: name_len u32, name bytes, rank u32, extents u64 × rank,
//               payload f64 × numel

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cltd/error.hpp"
#include "cltd/tensor.hpp"

namespace cltd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'T', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

inline void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint " + path.string());
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put(kCheckpointVersion);
    put(static_cast<std::uint64_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put(static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) put(static_cast<std::uint64_t>(e));
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw io_error("short write to checkpoint " + path.string());
}

inline NamedTensors read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read checkpoint " + path.string());
    auto get = [&](auto& v) {
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw io_error("truncated checkpoint " + path.string());
    };
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw io_error(path.string() + " is not a cltd checkpoint");
    std::uint32_t version = 0;
    get(version);
    if (version != kCheckpointVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version));
    std::uint64_t count = 0;
    get(count);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t len = 0, rank = 0;
        get(len);
        if (len > 4096) throw io_error("corrupt checkpoint: tensor name too long");
        std::string name(len, '\0');
        in.read(name.data(), len);
        get(rank);
        if (rank > 8) throw io_error("corrupt checkpoint: rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& e : shape) {
            std::uint64_t v = 0;
            get(v);
            e = static_cast<std::size_t>(v);
        }
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw io_error("truncated checkpoint payload for " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

/// Copies parameter values out by name.
template <class Model>
void collect(const Model& m, NamedTensors& out) {
    m.for_each([&](const Parameter& p) { out[p.name] = p.value; });
}

/// Fills every parameter of `m` from `tensors`; entries for other models are
/// ignored. Missing names or shape mismatches are io errors.
template <class Model>
void restore(Model& m, const NamedTensors& tensors) {
    m.for_each([&](Parameter& p) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) throw io_error("checkpoint lacks " + p.name);
        if (it->second.shape() != p.value.shape())
            throw io_error("checkpoint shape " + shape_str(it->second.shape()) + " for " + p.name + ", expected " +
                           shape_str(p.value.shape()));
        p.value = it->second;
    });
}

/// Keeps only tensors whose name starts with `prefix`.
inline NamedTensors filter_prefix(const NamedTensors& tensors, const std::string& prefix) {
    NamedTensors out;
    for (const auto& [name, t] : tensors)
        if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
    return out;
}

}  // namespace cltd
