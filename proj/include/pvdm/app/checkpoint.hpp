#pragma once

// Binary checkpoint: 8-byte magic, u32 format version, u64 header length,
// a JSON header, then every array as little-endian float32 in name order.
// The header records kind, producing config, step, RNG counters, free-form
// trainer state, array shapes and offsets, and a checksum of the payload.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "pvdm/errors.hpp"
#include "pvdm/nn/adam.hpp"
#include "pvdm/nn/params.hpp"

namespace pvdm::app {

inline constexpr char kCheckpointMagic[8] = {'P', 'V', 'D', 'M', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
    std::string kind;            // "autoencoder" or "diffusion"
    nlohmann::json config;       // resolved run config that produced it
    int64_t step = 0;
    nlohmann::json state;        // trainer bookkeeping (RNG counters, schedules, monitors)
    std::map<std::string, Tensor<float>> arrays;
};

inline uint64_t fnv1a(const char* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<uint8_t>(data[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string payload;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, t] : ck.arrays) {
        const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        arrays.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"bytes", bytes}});
        payload.append(reinterpret_cast<const char*>(t.data()), bytes);
    }
    nlohmann::json header = {{"kind", ck.kind},
                             {"config", ck.config},
                             {"step", ck.step},
                             {"state", ck.state},
                             {"arrays", arrays},
                             {"payload_bytes", payload.size()},
                             {"payload_fnv1a", fnv1a(payload.data(), payload.size())}};
    const std::string h = header.dump();
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    const uint32_t version = kCheckpointVersion;
    const uint64_t hlen = h.size();
    out.append(reinterpret_cast<const char*>(&version), sizeof version);
    out.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out += h;
    out += payload;
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
    auto fail = [&](const std::string& m) -> CheckpointError { return CheckpointError(origin + ": " + m); };
    const size_t fixed = sizeof kCheckpointMagic + sizeof(uint32_t) + sizeof(uint64_t);
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw fail("not a pvdm checkpoint");
    uint32_t version;
    uint64_t hlen;
    std::memcpy(&version, bytes.data() + 8, sizeof version);
    std::memcpy(&hlen, bytes.data() + 12, sizeof hlen);
    if (version != kCheckpointVersion)
        throw fail("format version " + std::to_string(version) + " is not supported (expected " +
                   std::to_string(kCheckpointVersion) + ")");
    if (hlen > bytes.size() - fixed) throw fail("truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(fixed, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt header: ") + e.what());
    }
    const size_t base = fixed + hlen;
    Checkpoint ck;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.config = header.at("config");
        ck.step = header.at("step").get<int64_t>();
        ck.state = header.at("state");
        const auto pbytes = header.at("payload_bytes").get<uint64_t>();
        if (bytes.size() - base != pbytes) throw fail("payload size mismatch");
        if (fnv1a(bytes.data() + base, pbytes) != header.at("payload_fnv1a").get<uint64_t>()) throw fail("payload checksum mismatch");
        for (const auto& a : header.at("arrays")) {
            Tensor<float> t(a.at("shape").get<Shape>());
            const auto off = a.at("offset").get<uint64_t>(), n = a.at("bytes").get<uint64_t>();
            if (n != static_cast<uint64_t>(t.numel()) * sizeof(float) || off + n > pbytes) throw fail("bad array extent");
            std::memcpy(t.data(), bytes.data() + base + off, n);
            ck.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed header: ") + e.what());
    }
    return ck;
}

/// Writes atomically through a temporary sibling file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        const std::string bytes = serialize_checkpoint(ck);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("failed to write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, path.string());
}

/// Stores every parameter of `store` under `prefix`.
inline void put_params(Checkpoint& ck, const std::string& prefix, const ParamStore<float>& store) {
    for (const auto& [name, v] : store.all()) ck.arrays[prefix + name] = v.value();
}

/// Loads `prefix`-named arrays into `store`; names and shapes must match exactly.
inline void get_params(const Checkpoint& ck, const std::string& prefix, ParamStore<float>& store) {
    size_t found = 0;
    for (const auto& [name, _] : ck.arrays)
        if (name.rfind(prefix, 0) == 0) ++found;
    if (found != store.all().size())
        throw CheckpointError("checkpoint holds " + std::to_string(found) + " '" + prefix + "' arrays, model expects " +
                              std::to_string(store.all().size()));
    for (auto& [name, v] : store.all()) {
        auto it = ck.arrays.find(prefix + name);
        if (it == ck.arrays.end()) throw CheckpointError("checkpoint lacks parameter " + prefix + name);
        if (it->second.shape() != v.shape())
            throw CheckpointError("parameter " + prefix + name + " has shape " + shape_str(it->second.shape()) +
                                  ", model expects " + shape_str(v.shape()));
        v.mutable_value() = it->second;
    }
}

inline void put_adam(Checkpoint& ck, const std::string& prefix, const nn::Adam<float>& opt) {
    for (const auto& [name, m] : opt.first_moments()) ck.arrays[prefix + "m/" + name] = m;
    for (const auto& [name, v] : opt.second_moments()) ck.arrays[prefix + "v/" + name] = v;
    ck.state[prefix + "steps"] = opt.steps();
}

inline void get_adam(const Checkpoint& ck, const std::string& prefix, nn::Adam<float>& opt) {
    auto load = [&](std::map<std::string, Tensor<float>>& dst, const std::string& tag) {
        for (auto& [name, t] : dst) {
            auto it = ck.arrays.find(prefix + tag + name);
            if (it == ck.arrays.end() || it->second.shape() != t.shape())
                throw CheckpointError("optimizer state for " + name + " missing or misshapen");
            t = it->second;
        }
    };
    load(opt.first_moments(), "m/");
    load(opt.second_moments(), "v/");
    opt.set_steps(ck.state.at(prefix + "steps").get<int64_t>());
}

}  // namespace pvdm::app
