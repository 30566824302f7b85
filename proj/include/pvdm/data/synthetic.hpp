#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pvdm/data/video_clip.hpp"
#include "pvdm/errors.hpp"
#include "pvdm/rng.hpp"

namespace pvdm::data {

enum class ShapeKind { square, disk };

inline const char* to_string(ShapeKind k) { return k == ShapeKind::square ? "square" : "disk"; }

/// Parameters of the bouncing-shapes corpus. Sizes and speeds are in pixels
/// at the target resolution.
struct SyntheticSpec {
    int64_t count = 64;             // number of source videos
    int64_t clip_length = 8;        // S
    int64_t frames_per_video = 0;   // 0 means 2 * clip_length
    int64_t resolution = 64;
    uint64_t seed = 0;
    int shapes_per_video = 1;
    double min_size = 12.0;
    double max_size = 22.0;
    double min_speed = 1.0;
    double max_speed = 3.0;
    double edge_softness = 1.5;
    double motion_floor = 1e-4;     // minimum mean squared frame-to-frame difference
    std::optional<std::array<double, 2>> velocity;  // fixed (vx, vy) for every shape
    std::optional<std::array<double, 2>> start;     // fixed top-left for every shape
    std::optional<double> size;                     // fixed side/diameter
    std::optional<ShapeKind> shape;                 // fixed shape kind

    int64_t video_length() const { return frames_per_video > 0 ? frames_per_video : 2 * clip_length; }

    void validate() const {
        if (count <= 0) throw ConfigError("synthetic count must be positive");
        if (clip_length <= 0) throw ConfigError("synthetic clip_length must be positive");
        if (resolution <= 0) throw ConfigError("synthetic resolution must be positive");
        if (video_length() < clip_length) throw ConfigError("synthetic frames_per_video shorter than clip_length");
        if (shapes_per_video <= 0) throw ConfigError("shapes_per_video must be positive");
        if (min_size <= 0 || max_size < min_size) throw ConfigError("invalid synthetic size range");
        if (max_size >= static_cast<double>(resolution)) throw ConfigError("synthetic shapes must fit inside the frame");
        if (size && (*size <= 0 || *size >= static_cast<double>(resolution))) throw ConfigError("invalid fixed shape size");
        if (min_speed < 0 || max_speed < min_speed) throw ConfigError("invalid synthetic speed range");
        if (edge_softness <= 0) throw ConfigError("edge_softness must be positive");
        if (motion_floor < 0) throw ConfigError("motion_floor must be non-negative");
    }
};

struct Point {
    double x = 0;
    double y = 0;
};

/// Top-left positions of a shape of side `size` moving at (vx, vy) px/frame
/// inside a res x res frame, reflecting off the walls [0, res - size].
inline std::vector<Point> bounce_trajectory(Point start, double vx, double vy, double size, int64_t res, int64_t frames) {
    const double hi = static_cast<double>(res) - size;
    auto reflect = [hi](double& p, double& v) {
        for (int guard = 0; guard < 64 && (p < 0 || p > hi); ++guard) {
            if (p < 0) {
                p = -p;
                v = -v;
            }
            if (p > hi) {
                p = 2 * hi - p;
                v = -v;
            }
        }
    };
    std::vector<Point> out;
    Point p = start;
    for (int64_t f = 0; f < frames; ++f) {
        out.push_back(p);
        p.x += vx;
        p.y += vy;
        reflect(p.x, vx);
        reflect(p.y, vy);
    }
    return out;
}

struct ShapeTrack {
    ShapeKind kind = ShapeKind::square;
    double size = 0;
    std::array<float, 3> color{};
    std::vector<Point> positions;
};

/// Mean over frames of the mean squared difference between consecutive frames.
inline double motion_energy(const Tensor<float>& frames) {
    const int64_t F = frames.dim(1), plane = frames.dim(2) * frames.dim(3);
    if (F < 2) return 0.0;
    double acc = 0;
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t f = 1; f < F; ++f) {
            const float* a = frames.data() + (c * F + f - 1) * plane;
            const float* b = frames.data() + (c * F + f) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(b[i] - a[i]) * (b[i] - a[i]);
        }
    }
    return acc / static_cast<double>(3 * (F - 1) * plane);
}

/// Renders shapes over a plain background with a soft (antialiased) edge.
inline Tensor<float> render_shapes(const std::array<float, 3>& background, const std::vector<ShapeTrack>& tracks,
                                   int64_t frames, int64_t res, double softness) {
    Tensor<float> out({3, frames, res, res});
    const int64_t plane = res * res;
    for (int64_t c = 0; c < 3; ++c) {
        std::fill(out.data() + c * frames * plane, out.data() + (c + 1) * frames * plane, background[c]);
    }
    for (const auto& tr : tracks) {
        for (int64_t f = 0; f < frames; ++f) {
            const Point p = tr.positions[static_cast<size_t>(f)];
            const double half = tr.size / 2;
            const double cx = p.x + half, cy = p.y + half;
            const auto y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.y - softness - 1)));
            const auto y1 = std::min<int64_t>(res, static_cast<int64_t>(std::ceil(p.y + tr.size + softness + 1)));
            const auto x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.x - softness - 1)));
            const auto x1 = std::min<int64_t>(res, static_cast<int64_t>(std::ceil(p.x + tr.size + softness + 1)));
            for (int64_t y = y0; y < y1; ++y) {
                for (int64_t x = x0; x < x1; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    const double dist = tr.kind == ShapeKind::square ? std::max(std::abs(dx), std::abs(dy)) - half
                                                                     : std::sqrt(dx * dx + dy * dy) - half;
                    const double a = std::clamp(0.5 - dist / softness, 0.0, 1.0);
                    if (a <= 0) continue;
                    for (int64_t c = 0; c < 3; ++c) {
                        float& v = out[(c * frames + f) * plane + y * res + x];
                        v = static_cast<float>(v * (1 - a) + tr.color[static_cast<size_t>(c)] * a);
                    }
                }
            }
        }
    }
    return out;
}

/// Generates one video of the corpus; video i depends only on (spec, i).
inline std::pair<SourceVideo, std::vector<ShapeTrack>> synthesize_video(const SyntheticSpec& spec, int64_t index) {
    Rng rng = derive_rng(spec.seed, {0x5157u, static_cast<uint64_t>(index)});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto color = [&] {
        std::array<float, 3> c{};
        for (auto& v : c) v = static_cast<float>(-0.8 + 1.6 * unit(rng));
        return c;
    };
    const std::array<float, 3> bg = color();
    const int64_t F = spec.video_length();
    std::vector<ShapeTrack> tracks;
    for (int s = 0; s < spec.shapes_per_video; ++s) {
        ShapeTrack tr;
        tr.kind = spec.shape ? *spec.shape : (unit(rng) < 0.5 ? ShapeKind::square : ShapeKind::disk);
        tr.size = spec.size ? *spec.size : spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
        // Keep shapes visibly distinct from the background.
        do {
            tr.color = color();
        } while (std::abs(tr.color[0] - bg[0]) + std::abs(tr.color[1] - bg[1]) + std::abs(tr.color[2] - bg[2]) < 0.8f);
        const double room = static_cast<double>(spec.resolution) - tr.size;
        Point start{room * unit(rng), room * unit(rng)};
        if (spec.start) start = {(*spec.start)[0], (*spec.start)[1]};
        double vx, vy;
        if (spec.velocity) {
            vx = (*spec.velocity)[0];
            vy = (*spec.velocity)[1];
        } else {
            const double speed = spec.min_speed + (spec.max_speed - spec.min_speed) * unit(rng);
            const double angle = 2 * 3.14159265358979323846 * unit(rng);
            vx = speed * std::cos(angle);
            vy = speed * std::sin(angle);
        }
        tr.positions = bounce_trajectory(start, vx, vy, tr.size, spec.resolution, F);
        tracks.push_back(std::move(tr));
    }
    SourceVideo video;
    video.name = "synthetic_" + std::to_string(index);
    video.frames = render_shapes(bg, tracks, F, spec.resolution, spec.edge_softness);
    return {std::move(video), std::move(tracks)};
}

/// Key-value description of a spec, one `key = value` per line.
inline std::string describe(const SyntheticSpec& spec) {
    std::ostringstream os;
    os.precision(17);
    os << "kind = synthetic\n";
    os << "count = " << spec.count << "\n";
    os << "clip_length = " << spec.clip_length << "\n";
    os << "frames_per_video = " << spec.video_length() << "\n";
    os << "resolution = " << spec.resolution << "\n";
    os << "seed = " << spec.seed << "\n";
    os << "shapes_per_video = " << spec.shapes_per_video << "\n";
    os << "min_size = " << spec.min_size << "\n";
    os << "max_size = " << spec.max_size << "\n";
    os << "min_speed = " << spec.min_speed << "\n";
    os << "max_speed = " << spec.max_speed << "\n";
    os << "edge_softness = " << spec.edge_softness << "\n";
    os << "motion_floor = " << spec.motion_floor << "\n";
    if (spec.velocity) os << "velocity = " << (*spec.velocity)[0] << "," << (*spec.velocity)[1] << "\n";
    if (spec.start) os << "start = " << (*spec.start)[0] << "," << (*spec.start)[1] << "\n";
    if (spec.size) os << "size = " << *spec.size << "\n";
    if (spec.shape) os << "shape = " << to_string(*spec.shape) << "\n";
    return os.str();
}

/// Parses the `key = value` text produced by describe(). Unknown keys are errors.
inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
    SyntheticSpec spec;
    std::istringstream in(text);
    std::string line;
    auto pair_of = [](const std::string& v) {
        const auto comma = v.find(',');
        if (comma == std::string::npos) throw ConfigError("expected 'a,b' but got '" + v + "'");
        return std::array<double, 2>{std::stod(v.substr(0, comma)), std::stod(v.substr(comma + 1))};
    };
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) throw ConfigError("malformed line: " + line);
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "kind") {
                if (val != "synthetic") throw ConfigError("unsupported dataset kind '" + val + "'");
            } else if (key == "count") spec.count = std::stoll(val);
            else if (key == "clip_length") spec.clip_length = std::stoll(val);
            else if (key == "frames_per_video") spec.frames_per_video = std::stoll(val);
            else if (key == "resolution") spec.resolution = std::stoll(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else if (key == "shapes_per_video") spec.shapes_per_video = std::stoi(val);
            else if (key == "min_size") spec.min_size = std::stod(val);
            else if (key == "max_size") spec.max_size = std::stod(val);
            else if (key == "min_speed") spec.min_speed = std::stod(val);
            else if (key == "max_speed") spec.max_speed = std::stod(val);
            else if (key == "edge_softness") spec.edge_softness = std::stod(val);
            else if (key == "motion_floor") spec.motion_floor = std::stod(val);
            else if (key == "velocity") spec.velocity = pair_of(val);
            else if (key == "start") spec.start = pair_of(val);
            else if (key == "size") spec.size = std::stod(val);
            else if (key == "shape") {
                if (val == "square") spec.shape = ShapeKind::square;
                else if (val == "disk") spec.shape = ShapeKind::disk;
                else throw ConfigError("unknown shape '" + val + "'");
            } else {
                throw ConfigError("unknown synthetic spec key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw ConfigError("invalid value for '" + key + "': " + val);
        }
    }
    return spec;
}

}  // namespace pvdm::data
