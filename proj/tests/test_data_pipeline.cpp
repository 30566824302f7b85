#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "pvdm/data/dataset.hpp"

using namespace pvdm;
using namespace pvdm::data;

namespace {

SourceVideo ramp_video(const std::string& name, int64_t frames, int64_t res = 4) {
    SourceVideo v;
    v.name = name;
    v.frames = Tensor<float>({3, frames, res, res});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t f = 0; f < frames; ++f)
            for (int64_t i = 0; i < res * res; ++i)
                v.frames[(c * frames + f) * res * res + i] = static_cast<float>(f) / static_cast<float>(frames);
    return v;
}

// Frame index encoded in the first pixel of a ramp clip.
int64_t frame_of(const VideoClip& clip, int64_t s, int64_t video_frames) {
    return std::lround(clip.pixels.at({0, s, 0, 0}) * static_cast<float>(video_frames));
}

RawVideo solid_raw(int64_t frames, int64_t h, int64_t w, uint8_t value) {
    RawVideo r;
    r.frames = frames;
    r.height = h;
    r.width = w;
    r.rgb.assign(static_cast<size_t>(frames * h * w * 3), value);
    return r;
}

}  // namespace

TEST(PreprocessTest, CenterCropOfLandscapeFrame) {
    auto crop = center_square(240, 320);
    EXPECT_EQ(crop.size, 240);
    EXPECT_EQ(crop.top, 0);
    EXPECT_EQ(crop.left, 40);
}

TEST(PreprocessTest, CropDiscardsSideBandsThenResizes) {
    // 320x240 source: the 40-pixel side bands are white, the centered 240x240 square black.
    RawVideo raw = solid_raw(1, 240, 320, 0);
    for (int64_t y = 0; y < 240; ++y)
        for (int64_t x = 0; x < 320; ++x)
            if (x < 40 || x >= 280)
                for (int c = 0; c < 3; ++c) raw.rgb[static_cast<size_t>((y * 320 + x) * 3 + c)] = 255;
    auto out = preprocess_video(raw, 256);
    ASSERT_EQ(out.shape(), (Shape{3, 1, 256, 256}));
    EXPECT_FLOAT_EQ(out.max(), -1.0f);
    EXPECT_FLOAT_EQ(out.min(), -1.0f);
}

TEST(PreprocessTest, SquareAtTargetResolutionOnlyRescales) {
    RawVideo raw = solid_raw(2, 8, 8, 0);
    for (size_t i = 0; i < raw.rgb.size(); ++i) raw.rgb[i] = static_cast<uint8_t>(i % 251);
    auto out = preprocess_video(raw, 8);
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x)
                for (int64_t c = 0; c < 3; ++c) {
                    const uint8_t v = raw.rgb[static_cast<size_t>(((f * 8 + y) * 8 + x) * 3 + c)];
                    EXPECT_FLOAT_EQ(out.at({c, f, y, x}), v / 127.5f - 1.0f);
                }
}

TEST(PreprocessTest, DownscaleAveragesConstantRegions) {
    Tensor<float> img({1, 8, 8}, 0.25f);
    auto out = resize_bilinear(img, 3, 5);
    for (float v : out.values()) EXPECT_NEAR(v, 0.25f, 1e-6);
}

TEST(DatasetTest, NonOverlappingWindows) {
    std::vector<SourceVideo> videos{ramp_video("a", 40)};
    DatasetHandle ds("mem", Split::train, 16, 4, 0, std::move(videos));
    ASSERT_EQ(ds.num_clips(), 2u);
    EXPECT_EQ(ds.clip_refs()[0].start, 0);
    EXPECT_EQ(ds.clip_refs()[1].start, 16);
    EXPECT_EQ(frame_of(ds.clip(1), 0, 40), 16);
}

TEST(DatasetTest, ZeroUsableClipsIsHardError) {
    std::vector<SourceVideo> videos{ramp_video("short", 5)};
    EXPECT_THROW(DatasetHandle("mem", Split::train, 8, 4, 0, std::move(videos)), DataError);
}

TEST(DatasetTest, LoaderSkipsUnreadableFilesAndRecordsThem) {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "pvdm_loader_test";
    fs::remove_all(root);
    fs::create_directories(root / "train");
    std::ofstream(root / "train" / "a.vid") << "ok";
    std::ofstream(root / "train" / "b.vid") << "broken";
    VideoDecoder decoder = [](const fs::path& p) -> std::optional<RawVideo> {
        if (p.filename() == "b.vid") return std::nullopt;
        return solid_raw(20, 12, 16, 128);
    };
    std::ostringstream warnings;
    auto ds = load_video_dataset(root, Split::train, 8, 8, decoder, 0, &warnings);
    EXPECT_EQ(ds.videos().size(), 1u);
    EXPECT_EQ(ds.num_clips(), 2u);
    ASSERT_EQ(ds.skipped().size(), 1u);
    EXPECT_NE(warnings.str().find("b.vid"), std::string::npos);
    EXPECT_EQ(ds.clip(0).pixels.shape(), (Shape{3, 8, 8, 8}));

    VideoDecoder none = [](const fs::path&) -> std::optional<RawVideo> { return std::nullopt; };
    EXPECT_THROW(load_video_dataset(root, Split::train, 8, 8, none, 0, nullptr), DataError);
    fs::remove_all(root);
}

TEST(ClipPairTest, ExactlyOnePairFor2SFrames) {
    DatasetHandle ds("mem", Split::train, 16, 4, 3, {ramp_video("v", 32)});
    for (uint64_t epoch = 0; epoch < 5; ++epoch) {
        auto pair = sample_clip_pair(ds, 0, epoch);
        EXPECT_EQ(frame_of(pair.first, 0, 32), 0);
        EXPECT_EQ(frame_of(pair.second, 0, 32), 16);
    }
}

TEST(ClipPairTest, AlignedOffsetsForLongerVideo) {
    DatasetHandle ds("mem", Split::train, 16, 4, 11, {ramp_video("v", 48)});
    std::map<int64_t, int> seen;
    for (uint64_t epoch = 0; epoch < 200; ++epoch) {
        auto pair = sample_clip_pair(ds, 0, epoch);
        const int64_t a = frame_of(pair.first, 0, 48);
        EXPECT_EQ(frame_of(pair.second, 0, 48), a + 16);
        // Pair adjacency: the 2S frames are contiguous.
        for (int64_t s = 0; s < 16; ++s) {
            EXPECT_EQ(frame_of(pair.first, s, 48), a + s);
            EXPECT_EQ(frame_of(pair.second, s, 48), a + 16 + s);
        }
        seen[a]++;
    }
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_GT(seen[0], 60);
    EXPECT_GT(seen[16], 60);
    // Same (seed, epoch, index) gives the same pair.
    EXPECT_EQ(sample_clip_pair(ds, 0, 7).first.pixels, sample_clip_pair(ds, 0, 7).first.pixels);
}

TEST(ClipPairTest, ShortVideoIsIneligible) {
    DatasetHandle ds("mem", Split::train, 16, 4, 0, {ramp_video("v", 20)});
    EXPECT_TRUE(ds.pair_eligible().empty());
    EXPECT_THROW(sample_clip_pair(ds, 0), DataError);
    EXPECT_THROW(ds.require_pairs(), DataError);
}

TEST(SyntheticTest, DeterministicAcrossCalls) {
    SyntheticSpec spec;
    spec.count = 64;
    spec.clip_length = 8;
    spec.resolution = 64;
    spec.seed = 0;
    auto a = generate_synthetic_dataset(spec);
    auto b = generate_synthetic_dataset(spec);
    ASSERT_EQ(a.videos().size(), 64u);
    for (size_t i = 0; i < a.videos().size(); ++i) EXPECT_EQ(a.videos()[i].frames, b.videos()[i].frames);
    for (size_t i = 0; i < a.num_clips(); ++i) {
        const auto clip = a.clip(i);
        EXPECT_GE(clip.pixels.min(), -1.0f);
        EXPECT_LE(clip.pixels.max(), 1.0f);
    }
    EXPECT_EQ(a.epoch_order(3), b.epoch_order(3));
    EXPECT_NE(a.epoch_order(3), a.epoch_order(4));
}

TEST(SyntheticTest, StaticShapeRejectedByMotionFloor) {
    SyntheticSpec spec;
    spec.count = 2;
    spec.velocity = std::array<double, 2>{0.0, 0.0};
    EXPECT_THROW(generate_synthetic_dataset(spec), ConfigError);
    const auto video = synthesize_video(spec, 0).first;
    EXPECT_EQ(motion_energy(video.frames), 0.0);
}

TEST(SyntheticTest, BounceTrajectoryMatchesHandReflection) {
    // Square of side 20 in a 64 frame: walls at x, y in [0, 44].
    // x: 40 42 44 | 46 -> 2*44-46 = 42 (vx flips) | 40 38 36 34
    // y: 5..12, no wall contact.
    auto traj = bounce_trajectory({40, 5}, 2, 1, 20, 64, 8);
    const double xs[] = {40, 42, 44, 42, 40, 38, 36, 34};
    for (int f = 0; f < 8; ++f) {
        EXPECT_DOUBLE_EQ(traj[f].x, xs[f]) << "frame " << f;
        EXPECT_DOUBLE_EQ(traj[f].y, 5 + f) << "frame " << f;
    }
    // Reflection off the lower wall: 1 -> -2 -> 2 with v flipping to +3.
    auto low = bounce_trajectory({1, 10}, -3, 0, 20, 64, 3);
    EXPECT_DOUBLE_EQ(low[1].x, 2);
    EXPECT_DOUBLE_EQ(low[2].x, 5);

    SyntheticSpec spec;
    spec.count = 1;
    spec.clip_length = 8;
    spec.frames_per_video = 8;
    spec.velocity = std::array<double, 2>{2.0, 1.0};
    spec.start = std::array<double, 2>{40.0, 5.0};
    spec.size = 20.0;
    spec.shape = ShapeKind::square;
    auto [video, tracks] = synthesize_video(spec, 0);
    ASSERT_EQ(tracks.size(), 1u);
    for (int f = 0; f < 8; ++f) {
        EXPECT_DOUBLE_EQ(tracks[0].positions[f].x, xs[f]);
        // Shape centre pixel carries the shape colour exactly.
        const auto cx = static_cast<int64_t>(xs[f] + 10), cy = static_cast<int64_t>(5 + f + 10);
        EXPECT_FLOAT_EQ(video.frames.at({0, f, cy, cx}), tracks[0].color[0]);
    }
}

TEST(SyntheticTest, SpecTextRoundTrips) {
    SyntheticSpec spec;
    spec.count = 5;
    spec.seed = 42;
    spec.velocity = std::array<double, 2>{2.0, 1.0};
    spec.shape = ShapeKind::disk;
    auto parsed = parse_synthetic_spec(describe(spec));
    EXPECT_EQ(describe(parsed), describe(spec));
    EXPECT_THROW(parse_synthetic_spec("bogus = 1\n"), ConfigError);
}

TEST(EvalProtocolTest, SingleClipIsContiguous) {
    DatasetHandle ds("mem", Split::test, 4, 4, 0, {ramp_video("v", 100)});
    auto refs = eval_clip_protocol_refs(ds, 1, 16, 5);
    auto clips = eval_clip_protocol(ds, 1, 16, 5);
    ASSERT_EQ(clips.size(), 1u);
    for (int64_t s = 0; s < 16; ++s) EXPECT_EQ(frame_of(clips[0], s, 100), refs[0].start + s);
}

TEST(EvalProtocolTest, CapLimitsToDatasetSize) {
    std::vector<SourceVideo> videos;
    for (int i = 0; i < 3; ++i) videos.push_back(ramp_video("v" + std::to_string(i), 16));
    DatasetHandle ds("mem", Split::test, 16, 4, 0, std::move(videos));
    EXPECT_EQ(eval_clip_protocol(ds, 2048, 16, 1, true).size(), 3u);
    EXPECT_EQ(eval_clip_protocol(ds, 10, 16, 1, false).size(), 10u);
    EXPECT_THROW(eval_clip_protocol(ds, 10, 17, 1), DataError);
}

TEST(EvalProtocolTest, UniformVideoSelection) {
    std::vector<SourceVideo> videos;
    for (int i = 0; i < 10; ++i) videos.push_back(ramp_video("v" + std::to_string(i), 32, 2));
    DatasetHandle ds("mem", Split::test, 16, 2, 0, std::move(videos));
    auto refs = eval_clip_protocol_refs(ds, 2048, 16, 123);
    std::vector<double> counts(10, 0);
    for (const auto& r : refs) counts[r.video] += 1;
    const double expected = 204.8;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square critical value, 9 degrees of freedom, alpha = 0.01
    EXPECT_LT(chi2, 21.666);
}

TEST(EvalProtocolTest, LongVideoNotOverRepresented) {
    std::vector<SourceVideo> videos{ramp_video("long", 1000, 2)};
    for (int i = 0; i < 9; ++i) videos.push_back(ramp_video("s" + std::to_string(i), 16, 2));
    DatasetHandle ds("mem", Split::test, 16, 2, 0, std::move(videos));
    // Window pooling would pick the long video 62 of 71 times (87%).
    size_t pooled_long = 0;
    for (const auto& r : ds.clip_refs()) pooled_long += r.video == 0 ? 1 : 0;
    EXPECT_EQ(pooled_long, 62u);
    EXPECT_EQ(ds.num_clips(), 71u);

    const size_t n = 2048;
    auto refs = eval_clip_protocol_refs(ds, n, 16, 99);
    double long_hits = 0;
    for (const auto& r : refs) long_hits += r.video == 0 ? 1 : 0;
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    EXPECT_NEAR(long_hits, n * 0.1, 3 * sigma);
}
