#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvdm/errors.hpp"
#include "pvdm/tensor/tensor.hpp"

namespace pvdm::data {

/// Fixed-length RGB clip, pixels [3, S, H, W] in [-1, 1].
struct VideoClip {
    Tensor<float> pixels;
    std::optional<double> frame_rate;

    int64_t frames() const { return pixels.dim(1); }
    int64_t height() const { return pixels.dim(2); }
    int64_t width() const { return pixels.dim(3); }
};

/// Throws DataError unless the clip is finite, in range, and its spatial
/// extents are multiples of `downsample`.
inline void validate_clip(const VideoClip& clip, int64_t downsample = 1) {
    const auto& p = clip.pixels;
    if (p.rank() != 4 || p.dim(0) != 3) throw DataError("clip must be [3,S,H,W], got " + shape_str(p.shape()));
    if (p.dim(1) <= 0 || p.dim(2) <= 0 || p.dim(3) <= 0) throw DataError("clip extents must be positive");
    if (downsample > 0 && (p.dim(2) % downsample != 0 || p.dim(3) % downsample != 0)) {
        throw DataError("clip " + shape_str(p.shape()) + " not divisible by downsampling factor " + std::to_string(downsample));
    }
    for (float v : p.values()) {
        if (!std::isfinite(v) || v < -1.0f || v > 1.0f) throw DataError("clip values must be finite and within [-1, 1]");
    }
}

/// Two consecutive clips of one source video; `second` starts S frames after `first`.
struct ClipPair {
    VideoClip first;
    VideoClip second;
};

/// A preprocessed source video: frames [3, F, H, W] in [-1, 1].
struct SourceVideo {
    std::string name;
    Tensor<float> frames;
    std::optional<double> frame_rate;

    int64_t length() const { return frames.rank() == 4 ? frames.dim(1) : 0; }
};

/// Copies frames [start, start+len) of a source video into a clip.
inline VideoClip extract_clip(const SourceVideo& video, int64_t start, int64_t len) {
    if (start < 0 || start + len > video.length()) {
        throw DataError("clip window [" + std::to_string(start) + ", " + std::to_string(start + len) +
                        ") exceeds video '" + video.name + "' of " + std::to_string(video.length()) + " frames");
    }
    return VideoClip{slice(video.frames, 1, start, len), video.frame_rate};
}

/// Batches clips into [N, 3, S, H, W].
inline Tensor<float> stack_clips(const std::vector<VideoClip>& clips) {
    if (clips.empty()) throw DataError("cannot batch zero clips");
    Shape shape{static_cast<int64_t>(clips.size())};
    for (int64_t d : clips.front().pixels.shape()) shape.push_back(d);
    Tensor<float> out(shape);
    const int64_t n = clips.front().pixels.numel();
    for (size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].pixels.shape() != clips.front().pixels.shape()) throw DataError("clip shapes differ within batch");
        std::copy(clips[i].pixels.data(), clips[i].pixels.data() + n, out.data() + static_cast<int64_t>(i) * n);
    }
    return out;
}

inline VideoClip unstack_clip(const Tensor<float>& batch, int64_t index) {
    Shape shape(batch.shape().begin() + 1, batch.shape().end());
    const int64_t n = shape_numel(shape);
    std::vector<float> v(batch.data() + index * n, batch.data() + (index + 1) * n);
    return VideoClip{Tensor<float>(shape, std::move(v)), std::nullopt};
}

}  // namespace pvdm::data
