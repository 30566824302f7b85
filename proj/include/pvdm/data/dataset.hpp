#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pvdm/data/preprocess.hpp"
#include "pvdm/data/synthetic.hpp"
#include "pvdm/data/video_clip.hpp"
#include "pvdm/errors.hpp"
#include "pvdm/rng.hpp"

namespace pvdm::data {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

struct ClipRef {
    size_t video = 0;
    int64_t start = 0;
};

/// A finite, in-memory set of preprocessed source videos plus the
/// non-overlapping length-S clip windows enumerated over them.
class DatasetHandle {
public:
    DatasetHandle() = default;

    DatasetHandle(std::string source, Split split, int64_t clip_length, int64_t resolution, uint64_t seed,
                  std::vector<SourceVideo> videos)
        : source_(std::move(source)),
          split_(split),
          clip_length_(clip_length),
          resolution_(resolution),
          seed_(seed),
          videos_(std::move(videos)) {
        if (clip_length_ <= 0) throw ConfigError("clip length must be positive");
        for (size_t v = 0; v < videos_.size(); ++v) {
            const int64_t n = videos_[v].length() / clip_length_;
            for (int64_t w = 0; w < n; ++w) clips_.push_back({v, w * clip_length_});
        }
        if (clips_.empty()) throw DataError("dataset '" + source_ + "' yields zero usable clips of length " + std::to_string(clip_length_));
    }

    const std::string& source() const { return source_; }
    Split split() const { return split_; }
    int64_t clip_length() const { return clip_length_; }
    int64_t resolution() const { return resolution_; }
    uint64_t seed() const { return seed_; }
    const std::vector<SourceVideo>& videos() const { return videos_; }
    const std::vector<ClipRef>& clip_refs() const { return clips_; }
    const std::vector<std::string>& skipped() const { return skipped_; }
    void set_skipped(std::vector<std::string> s) { skipped_ = std::move(s); }

    size_t num_clips() const { return clips_.size(); }

    VideoClip clip(size_t i) const {
        const ClipRef& r = clips_.at(i);
        return extract_clip(videos_[r.video], r.start, clip_length_);
    }

    /// Clip visiting order for one epoch, a pure function of (seed, epoch).
    std::vector<size_t> epoch_order(uint64_t epoch) const {
        std::vector<size_t> order(clips_.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng = derive_rng(seed_, {0xE90Cu, epoch, split_ == Split::train ? 0u : 1u});
        std::shuffle(order.begin(), order.end(), rng);
        return order;
    }

    /// Indices of videos with at least 2S frames.
    std::vector<size_t> pair_eligible() const {
        std::vector<size_t> out;
        for (size_t v = 0; v < videos_.size(); ++v) {
            if (videos_[v].length() >= 2 * clip_length_) out.push_back(v);
        }
        return out;
    }

    void require_pairs() const {
        if (pair_eligible().empty()) {
            throw DataError("dataset '" + source_ + "' has no video with at least " + std::to_string(2 * clip_length_) +
                            " frames for clip-pair sampling");
        }
    }

private:
    std::string source_;
    Split split_ = Split::train;
    int64_t clip_length_ = 0;
    int64_t resolution_ = 0;
    uint64_t seed_ = 0;
    std::vector<SourceVideo> videos_;
    std::vector<ClipRef> clips_;
    std::vector<std::string> skipped_;
};

/// Decodes one file into 8-bit frames; returns nullopt if unreadable.
using VideoDecoder = std::function<std::optional<RawVideo>(const std::filesystem::path&)>;

/// Loads every decodable video under `root/<split>` (or `root` when no split
/// directory exists), center-cropping and resizing to resolution^2.
inline DatasetHandle load_video_dataset(const std::filesystem::path& root, Split split, int64_t clip_length,
                                        int64_t resolution, const VideoDecoder& decode, uint64_t seed = 0,
                                        std::ostream* warnings = &std::cerr) {
    namespace fs = std::filesystem;
    if (resolution <= 0) throw ConfigError("resolution must be positive");
    fs::path dir = root / to_string(split);
    if (!fs::is_directory(dir)) dir = root;
    if (!fs::is_directory(dir)) throw DataError("video root '" + root.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<SourceVideo> videos;
    std::vector<std::string> skipped;
    for (const auto& f : files) {
        std::optional<RawVideo> raw;
        try {
            raw = decode(f);
        } catch (const std::exception&) {
            raw.reset();
        }
        if (!raw || raw->frames <= 0 || raw->height <= 0 || raw->width <= 0 ||
            raw->rgb.size() != static_cast<size_t>(raw->frames * raw->height * raw->width * 3)) {
            if (warnings) *warnings << "warning: skipping unreadable video " << f.string() << "\n";
            skipped.push_back(f.string());
            continue;
        }
        SourceVideo v;
        v.name = f.filename().string();
        v.frames = preprocess_video(*raw, resolution);
        if (raw->frame_rate > 0) v.frame_rate = raw->frame_rate;
        videos.push_back(std::move(v));
    }
    if (videos.empty()) throw DataError("no decodable videos under '" + dir.string() + "'");
    DatasetHandle ds(dir.string(), split, clip_length, resolution, seed, std::move(videos));
    ds.set_skipped(std::move(skipped));
    return ds;
}

/// Deterministic bouncing-shapes corpus. Throws ConfigError if any video's
/// motion energy falls below the configured floor.
inline DatasetHandle generate_synthetic_dataset(const SyntheticSpec& spec, Split split = Split::train) {
    spec.validate();
    SyntheticSpec s = spec;
    // The test split draws from a disjoint seed stream.
    if (split == Split::test) s.seed = spec.seed ^ 0x9E3779B97F4A7C15ull;
    std::vector<SourceVideo> videos;
    videos.reserve(static_cast<size_t>(s.count));
    for (int64_t i = 0; i < s.count; ++i) {
        auto [video, tracks] = synthesize_video(s, i);
        const double energy = motion_energy(video.frames);
        if (energy <= s.motion_floor) {
            throw ConfigError("synthetic video " + std::to_string(i) + " has motion energy " + std::to_string(energy) +
                              " below the floor " + std::to_string(s.motion_floor));
        }
        videos.push_back(std::move(video));
    }
    return DatasetHandle("synthetic:seed=" + std::to_string(spec.seed), split, s.clip_length, s.resolution, spec.seed,
                         std::move(videos));
}

/// Consecutive clips (x1, x2) from pair-eligible video `video_index`. The
/// aligned start offset {0, S, 2S, ...} is drawn from (seed, epoch, index).
inline ClipPair sample_clip_pair(const DatasetHandle& ds, size_t video_index, uint64_t epoch = 0) {
    const auto& videos = ds.videos();
    if (video_index >= videos.size()) throw DataError("video index out of range");
    const SourceVideo& v = videos[video_index];
    const int64_t S = ds.clip_length();
    if (v.length() < 2 * S) {
        throw DataError("video '" + v.name + "' has " + std::to_string(v.length()) + " frames; pairs need " +
                        std::to_string(2 * S));
    }
    const int64_t n_offsets = (v.length() - 2 * S) / S + 1;
    Rng rng = derive_rng(ds.seed(), {0xBA12u, epoch, static_cast<uint64_t>(video_index)});
    std::uniform_int_distribution<int64_t> pick(0, n_offsets - 1);
    const int64_t start = pick(rng) * S;
    return {extract_clip(v, start, S), extract_clip(v, start + S, S)};
}

/// Evaluation sampling: choose a video uniformly, then one random window of
/// `length` frames inside it, so long videos are not over-represented.
inline std::vector<ClipRef> eval_clip_protocol_refs(const DatasetHandle& ds, size_t n_clips, int64_t length,
                                                    uint64_t seed, bool cap_to_dataset = false) {
    std::vector<size_t> eligible;
    for (size_t v = 0; v < ds.videos().size(); ++v) {
        if (ds.videos()[v].length() >= length) eligible.push_back(v);
    }
    if (eligible.empty()) throw DataError("no video has at least " + std::to_string(length) + " frames");
    if (cap_to_dataset) n_clips = std::min(n_clips, eligible.size());
    Rng rng = derive_rng(seed, {0xFED0u});
    std::uniform_int_distribution<size_t> pick_video(0, eligible.size() - 1);
    std::vector<ClipRef> out;
    out.reserve(n_clips);
    for (size_t i = 0; i < n_clips; ++i) {
        const size_t v = eligible[pick_video(rng)];
        std::uniform_int_distribution<int64_t> pick_start(0, ds.videos()[v].length() - length);
        out.push_back({v, pick_start(rng)});
    }
    return out;
}

inline std::vector<VideoClip> eval_clip_protocol(const DatasetHandle& ds, size_t n_clips, int64_t length, uint64_t seed,
                                                 bool cap_to_dataset = false) {
    std::vector<VideoClip> clips;
    for (const auto& r : eval_clip_protocol_refs(ds, n_clips, length, seed, cap_to_dataset)) {
        clips.push_back(extract_clip(ds.videos()[r.video], r.start, length));
    }
    return clips;
}

/// Human-readable manifest: source descriptor plus one line per video.
inline std::string dataset_manifest(const DatasetHandle& ds) {
    std::ostringstream os;
    os << "source = " << ds.source() << "\n";
    os << "split = " << to_string(ds.split()) << "\n";
    os << "clip_length = " << ds.clip_length() << "\n";
    os << "resolution = " << ds.resolution() << "\n";
    os << "seed = " << ds.seed() << "\n";
    os << "videos = " << ds.videos().size() << "\n";
    os << "clips = " << ds.num_clips() << "\n";
    for (size_t i = 0; i < ds.videos().size(); ++i) {
        os << "video." << i << " = " << ds.videos()[i].name << " frames=" << ds.videos()[i].length() << "\n";
    }
    for (size_t i = 0; i < ds.skipped().size(); ++i) os << "skipped." << i << " = " << ds.skipped()[i] << "\n";
    return os.str();
}

}  // namespace pvdm::data
