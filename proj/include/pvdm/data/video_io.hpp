#pragma once

// Container decoding and frame export. Link against pvdm_video to get the
// OpenCV-backed decoder and PNG output; without it frames are written as PPM.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pvdm/data/dataset.hpp"
#include "pvdm/data/preprocess.hpp"
#include "pvdm/data/video_clip.hpp"
#include "pvdm/errors.hpp"

#if defined(PVDM_HAVE_OPENCV)
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#endif

namespace pvdm::data {

inline constexpr bool have_video_decoder() {
#if defined(PVDM_HAVE_OPENCV)
    return true;
#else
    return false;
#endif
}

/// Decodes every frame of a container file to interleaved RGB.
inline std::optional<RawVideo> decode_video_file(const std::filesystem::path& path) {
#if defined(PVDM_HAVE_OPENCV)
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) return std::nullopt;
    RawVideo raw;
    raw.frame_rate = cap.get(cv::CAP_PROP_FPS);
    cv::Mat bgr, rgb;
    while (cap.read(bgr)) {
        if (bgr.empty()) break;
        if (raw.frames == 0) {
            raw.height = bgr.rows;
            raw.width = bgr.cols;
        } else if (bgr.rows != raw.height || bgr.cols != raw.width) {
            return std::nullopt;
        }
        if (bgr.channels() == 1) cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
        else cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        if (rgb.depth() != CV_8U) return std::nullopt;
        for (int y = 0; y < rgb.rows; ++y) {
            const uint8_t* row = rgb.ptr<uint8_t>(y);
            raw.rgb.insert(raw.rgb.end(), row, row + rgb.cols * 3);
        }
        ++raw.frames;
    }
    if (raw.frames == 0) return std::nullopt;
    return raw;
#else
    (void)path;
    return std::nullopt;
#endif
}

inline DatasetHandle load_video_dataset(const std::filesystem::path& root, Split split, int64_t clip_length,
                                        int64_t resolution, uint64_t seed = 0) {
    if (!have_video_decoder()) throw DataError("built without a video decoder; use the synthetic source");
    return load_video_dataset(root, split, clip_length, resolution, VideoDecoder(decode_video_file), seed);
}

inline std::string frame_file_name(int64_t index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06lld.%s", static_cast<long long>(index), ext);
    return buf;
}

/// Writes frames [3, F, H, W] in [-1, 1] losslessly, one file per frame.
/// Returns the written paths in frame order.
inline std::vector<std::filesystem::path> write_frames(const Tensor<float>& frames, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (frames.rank() != 4 || frames.dim(0) != 3) throw DataError("frames must be [3,F,H,W]");
    fs::create_directories(dir);
    const int64_t F = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    std::vector<fs::path> paths;
    for (int64_t f = 0; f < F; ++f) {
        std::vector<uint8_t> rgb(static_cast<size_t>(H * W * 3));
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    rgb[static_cast<size_t>((y * W + x) * 3 + c)] = to_byte(frames.at({c, f, y, x}));
#if defined(PVDM_HAVE_OPENCV)
        const fs::path p = dir / frame_file_name(f, "png");
        cv::Mat rgb_mat(static_cast<int>(H), static_cast<int>(W), CV_8UC3, rgb.data()), bgr;
        cv::cvtColor(rgb_mat, bgr, cv::COLOR_RGB2BGR);
        if (!cv::imwrite(p.string(), bgr)) throw DataError("failed to write " + p.string());
#else
        const fs::path p = dir / frame_file_name(f, "ppm");
        std::ofstream os(p, std::ios::binary);
        os << "P6\n" << W << " " << H << "\n255\n";
        os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        if (!os) throw DataError("failed to write " + p.string());
#endif
        paths.push_back(p);
    }
    return paths;
}

/// Reads back frames written by write_frames (PNG builds only).
inline Tensor<float> read_frames(const std::vector<std::filesystem::path>& paths) {
#if defined(PVDM_HAVE_OPENCV)
    if (paths.empty()) throw DataError("no frames to read");
    RawVideo raw;
    for (const auto& p : paths) {
        cv::Mat bgr = cv::imread(p.string(), cv::IMREAD_COLOR), rgb;
        if (bgr.empty()) throw DataError("cannot read " + p.string());
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        raw.height = rgb.rows;
        raw.width = rgb.cols;
        for (int y = 0; y < rgb.rows; ++y) raw.rgb.insert(raw.rgb.end(), rgb.ptr<uint8_t>(y), rgb.ptr<uint8_t>(y) + rgb.cols * 3);
        ++raw.frames;
    }
    Tensor<float> out({3, raw.frames, raw.height, raw.width});
    for (int64_t f = 0; f < raw.frames; ++f)
        for (int64_t y = 0; y < raw.height; ++y)
            for (int64_t x = 0; x < raw.width; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    out.at({c, f, y, x}) =
                        raw.rgb[static_cast<size_t>(((f * raw.height + y) * raw.width + x) * 3 + c)] / 127.5f - 1.0f;
    return out;
#else
    (void)paths;
    throw DataError("reading frames requires the OpenCV build");
#endif
}

/// Encodes frames [3, F, H, W] into a container (MJPG .avi). Used to build
/// fixtures; lossy, so not for sample export.
inline void write_video_file(const Tensor<float>& frames, const std::filesystem::path& path, double fps = 8.0) {
#if defined(PVDM_HAVE_OPENCV)
    const int64_t F = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), fps,
                           cv::Size(static_cast<int>(W), static_cast<int>(H)));
    if (!writer.isOpened()) throw DataError("cannot open video writer for " + path.string());
    for (int64_t f = 0; f < F; ++f) {
        cv::Mat bgr(static_cast<int>(H), static_cast<int>(W), CV_8UC3);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    bgr.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x))[static_cast<int>(2 - c)] =
                        to_byte(frames.at({c, f, y, x}));
        writer.write(bgr);
    }
#else
    (void)frames;
    (void)path;
    (void)fps;
    throw DataError("writing video requires the OpenCV build");
#endif
}

}  // namespace pvdm::data
