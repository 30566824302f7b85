#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pvdm/tensor/tensor.hpp"

namespace pvdm::data {

/// Decoded 8-bit video, interleaved RGB, frame-major.
struct RawVideo {
    int64_t frames = 0;
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> rgb;
    double frame_rate = 0.0;
};

namespace detail {

struct FilterTap {
    int64_t first = 0;
    std::vector<float> weights;
};

// Triangle (bilinear) filter whose support widens with the downscale factor,
// so minification averages instead of aliasing.
inline std::vector<FilterTap> triangle_taps(int64_t in, int64_t out) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double support = std::max(1.0, scale);
    std::vector<FilterTap> taps(static_cast<size_t>(out));
    for (int64_t i = 0; i < out; ++i) {
        const double center = (static_cast<double>(i) + 0.5) * scale;
        const auto lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(center - support)));
        const auto hi = std::min<int64_t>(in - 1, static_cast<int64_t>(std::ceil(center + support)));
        FilterTap tap;
        tap.first = lo;
        double total = 0;
        for (int64_t j = lo; j <= hi; ++j) {
            const double w = std::max(0.0, 1.0 - std::abs((static_cast<double>(j) + 0.5 - center) / support));
            tap.weights.push_back(static_cast<float>(w));
            total += w;
        }
        if (total <= 0) {
            tap.weights.assign(1, 1.0f);
            tap.first = std::clamp<int64_t>(static_cast<int64_t>(center), 0, in - 1);
            total = 1;
        }
        for (auto& w : tap.weights) w = static_cast<float>(w / total);
        taps[static_cast<size_t>(i)] = std::move(tap);
    }
    return taps;
}

}  // namespace detail

/// Antialiased bilinear resize of a planar image [C, H, W].
inline Tensor<float> resize_bilinear(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H == out_h && W == out_w) return img;
    const auto row_taps = detail::triangle_taps(H, out_h);
    const auto col_taps = detail::triangle_taps(W, out_w);
    Tensor<float> tmp({C, H, out_w});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < H; ++y) {
            const float* src = img.data() + (c * H + y) * W;
            float* dst = tmp.data() + (c * H + y) * out_w;
            for (int64_t x = 0; x < out_w; ++x) {
                const auto& t = col_taps[static_cast<size_t>(x)];
                float acc = 0;
                for (size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * src[t.first + static_cast<int64_t>(k)];
                dst[x] = acc;
            }
        }
    }
    Tensor<float> out({C, out_h, out_w});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < out_h; ++y) {
            const auto& t = row_taps[static_cast<size_t>(y)];
            float* dst = out.data() + (c * out_h + y) * out_w;
            for (size_t k = 0; k < t.weights.size(); ++k) {
                const float* src = tmp.data() + (c * H + t.first + static_cast<int64_t>(k)) * out_w;
                const float w = t.weights[k];
                for (int64_t x = 0; x < out_w; ++x) dst[x] += w * src[x];
            }
        }
    }
    return out;
}

struct CropWindow {
    int64_t top = 0;
    int64_t left = 0;
    int64_t size = 0;
};

/// Largest centered square inside an H x W frame.
inline CropWindow center_square(int64_t height, int64_t width) {
    const int64_t side = std::min(height, width);
    return {(height - side) / 2, (width - side) / 2, side};
}

/// Center-crops every frame to a square, resizes to resolution x resolution,
/// and maps 8-bit values to [-1, 1]. Output is [3, F, R, R].
inline Tensor<float> preprocess_video(const RawVideo& raw, int64_t resolution) {
    const CropWindow crop = center_square(raw.height, raw.width);
    Tensor<float> out({3, raw.frames, resolution, resolution});
    Tensor<float> frame({3, crop.size, crop.size});
    const int64_t plane = resolution * resolution;
    for (int64_t f = 0; f < raw.frames; ++f) {
        const uint8_t* src = raw.rgb.data() + f * raw.height * raw.width * 3;
        for (int64_t y = 0; y < crop.size; ++y) {
            for (int64_t x = 0; x < crop.size; ++x) {
                const uint8_t* px = src + ((crop.top + y) * raw.width + crop.left + x) * 3;
                for (int64_t c = 0; c < 3; ++c) frame[(c * crop.size + y) * crop.size + x] = px[c] / 127.5f - 1.0f;
            }
        }
        Tensor<float> resized = resize_bilinear(frame, resolution, resolution);
        for (int64_t c = 0; c < 3; ++c) {
            float* dst = out.data() + (c * raw.frames + f) * plane;
            const float* s = resized.data() + c * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] = std::clamp(s[i], -1.0f, 1.0f);
        }
    }
    return out;
}

/// Maps [-1, 1] back to 8-bit with rounding.
inline uint8_t to_byte(float v) {
    const float s = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f;
    return static_cast<uint8_t>(std::lround(s));
}

}  // namespace pvdm::data
