#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "pvdm/app/checkpoint.hpp"
#include "pvdm/app/config.hpp"

namespace pvdm::app {

namespace fs = std::filesystem;

/// Short stable fingerprint of a resolved config.
inline std::string config_hash(const RunConfig& c) {
    const std::string text = to_json(c).dump();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
    return buf;
}

/// Creates `<root>/<name>` and writes the resolved config into it.
inline fs::path run_dir(const RunConfig& c, const std::string& root_override = "") {
    const fs::path dir = output_root(c, root_override) / c.name;
    fs::create_directories(dir);
    return dir;
}

/// Training entry point: creates the run directory and persists the resolved config.
inline fs::path prepare_run_dir(const RunConfig& c, const std::string& root_override = "") {
    const fs::path dir = run_dir(c, root_override);
    std::ofstream(dir / "config.json") << dump_config(c);
    return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << text;
    if (!out) throw std::runtime_error("failed to write " + path.string());
}

/// Append-only JSON-lines log.
class JsonlLog {
public:
    JsonlLog() = default;
    explicit JsonlLog(const fs::path& path, bool append = false)
        : out_(path, append ? std::ios::app : std::ios::trunc), t0_(std::chrono::steady_clock::now()) {
        if (!out_) throw std::runtime_error("cannot open log " + path.string());
    }

    void write(nlohmann::json record) {
        if (!out_.is_open()) return;
        record["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        out_ << record.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace pvdm::app
