#pragma once

// Weight snapshots.
//
// format: "MTRO", u32 version, u64 config digest, u32 param count, then per
// parameter: u32 name length, name bytes, u32 rank, u32 dims..., f32 values.
// Everything little-endian. Values are stored in f32, so the first save after
// training rounds the weights; saving again after a load is byte-identical.

#include "mrt/common.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

constexpr uint32_t kCheckpointVersion = 1;

// Hash of every parameter value's raw bits, for cheap mutation checks.
inline uint64_t weights_fingerprint(const ParamStore& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < params.count(); ++i) {
        const auto& v = params[i].value;
        h = splitmix64(h ^ fnv1a64(v.data(), v.size() * sizeof(double)));
    }
    return h;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params, uint64_t digest) {
    detail::BinWriter w(path);
    w.bytes("MTRO", 4);
    w.u32(kCheckpointVersion);
    w.u64(digest);
    w.u32(static_cast<uint32_t>(params.count()));
    for (size_t i = 0; i < params.count(); ++i) {
        const Param& p = params[i];
        w.u32(static_cast<uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.u32(static_cast<uint32_t>(p.shape.size()));
        for (int d : p.shape) w.u32(static_cast<uint32_t>(d));
        for (double v : p.value) w.f32(static_cast<float>(v));
    }
}

// Loads weights into an existing store; names, order and shapes must match
// what the store already declares, which ties a file to its architecture in
// addition to the digest check.
inline void load_checkpoint(const std::string& path, ParamStore& params, uint64_t expected_digest) {
    detail::BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "MTRO") throw ParseError(path + ": not a checkpoint file (bad magic)");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint64_t digest = r.u64();
    if (digest != expected_digest)
        throw ValidationError(path + ": checkpoint was written for a different model configuration");
    const uint32_t count = r.u32();
    if (count != params.count())
        throw ValidationError(path + ": checkpoint has " + std::to_string(count) + " parameters, model has " +
                              std::to_string(params.count()));
    for (size_t i = 0; i < params.count(); ++i) {
        Param& p = params[i];
        const uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        if (name != p.name)
            throw ValidationError(path + ": parameter " + std::to_string(i) + " is '" + name +
                                  "', expected '" + p.name + "'");
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
        if (shape != p.shape)
            throw ValidationError(path + ": parameter '" + name + "' has shape " + shape_str(shape) +
                                  ", expected " + shape_str(p.shape));
        for (double& v : p.value) v = static_cast<double>(r.f32());
    }
}

}  // namespace mrt
