#pragma once

// Single-file checkpoint format:
//
//   bytes 0..3   magic "RSCP"
//   u32          format version (1)
//   u64          meta length, then meta bytes (UTF-8 key=value text; carries
//                the serialized run config and training state)
//   u64          entry count
//   per entry:   u16 name length, name bytes, u8 ndim, u64 dims...,
//                u64 offset (in doubles, from payload start)
//   u64          payload length (in doubles)
//   payload      little-endian IEEE-754 doubles
//
// Payloads are validated to be finite on both save and load: a NaN/Inf never
// reaches or leaves a checkpoint silently.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ribosphere/tensor.hpp"

namespace ribosphere {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::vector<int> shape;
    std::vector<double> data;
};

struct Checkpoint {
    std::string meta;
    // std::map keeps manifest iteration deterministic.
    std::map<std::string, CheckpointEntry> tensors;

    const CheckpointEntry& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
        return it->second;
    }
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint: truncated file");
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const std::string& meta,
                            const std::vector<std::pair<std::string, TensorPtr>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    os.write("RSCP", 4);
    detail::write_pod<uint32_t>(os, 1u);
    detail::write_pod<uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::write_pod<uint64_t>(os, entries.size());
    uint64_t offset = 0;
    for (const auto& [name, t] : entries) {
        for (double v : t->data)
            if (!std::isfinite(v))
                throw CheckpointError("checkpoint: refusing to save non-finite tensor " + name);
        if (name.size() > 0xffff) throw CheckpointError("checkpoint: name too long");
        detail::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint8_t>(os, static_cast<uint8_t>(t->shape.size()));
        for (int d : t->shape) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
        detail::write_pod<uint64_t>(os, offset);
        offset += static_cast<uint64_t>(t->numel());
    }
    detail::write_pod<uint64_t>(os, offset);
    for (const auto& [name, t] : entries)
        os.write(reinterpret_cast<const char*>(t->data.data()),
                 static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RSCP", 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != 1)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    uint64_t meta_len = detail::read_pod<uint64_t>(is);
    Checkpoint ck;
    ck.meta.resize(meta_len);
    is.read(ck.meta.data(), static_cast<std::streamsize>(meta_len));
    uint64_t n_entries = detail::read_pod<uint64_t>(is);
    std::vector<std::pair<std::string, std::pair<std::vector<int>, uint64_t>>> manifest;
    manifest.reserve(n_entries);
    for (uint64_t i = 0; i < n_entries; ++i) {
        uint16_t name_len = detail::read_pod<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint8_t ndim = detail::read_pod<uint8_t>(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(detail::read_pod<uint64_t>(is));
        uint64_t off = detail::read_pod<uint64_t>(is);
        manifest.emplace_back(std::move(name), std::make_pair(std::move(shape), off));
    }
    uint64_t payload_len = detail::read_pod<uint64_t>(is);
    std::vector<double> payload(payload_len);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload_len * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint: truncated payload in " + path);
    for (auto& [name, desc] : manifest) {
        auto& [shape, off] = desc;
        uint64_t n = static_cast<uint64_t>(shape_numel(shape));
        if (off + n > payload_len)
            throw CheckpointError("checkpoint: entry " + name + " overruns payload");
        CheckpointEntry e;
        e.shape = shape;
        e.data.assign(payload.begin() + static_cast<ptrdiff_t>(off),
                      payload.begin() + static_cast<ptrdiff_t>(off + n));
        for (double v : e.data)
            if (!std::isfinite(v))
                throw CheckpointError("checkpoint: non-finite value in tensor " + name);
        ck.tensors.emplace(std::move(name), std::move(e));
    }
    return ck;
}

// Copy checkpoint values into an existing parameter store (shapes must match).
inline void restore_params(const Checkpoint& ck, ParamStore& store) {
    for (const auto& [name, t] : store.entries()) {
        const CheckpointEntry& e = ck.at(name);
        if (e.shape != t->shape)
            throw CheckpointError("checkpoint: shape mismatch for " + name + ": file " +
                                  shape_str(e.shape) + " vs model " + shape_str(t->shape));
        t->data = e.data;
    }
}

// Minimal key=value meta block helpers.
inline std::map<std::string, std::string> parse_meta(const std::string& meta) {
    std::map<std::string, std::string> kv;
    std::istringstream is(meta);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

} // namespace ribosphere
