#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "pvdm/app/commands.hpp"

using namespace pvdm;
using namespace pvdm::app;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pvdm_test_app_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// A very small run that trains in seconds.
RunConfig micro_config(const std::string& name) {
    RunConfig c = preset("desk-tiny");
    c.name = name;
    c.output_root = scratch(name).string();
    c.autoencoder.S = 4;
    c.autoencoder.H = c.autoencoder.W = 16;
    c.autoencoder.patch = 2;
    c.autoencoder.width = 16;
    c.autoencoder.heads = 2;
    c.autoencoder.mlp_hidden = 32;
    c.autoencoder.depth = 1;
    c.autoencoder.dec_depth = 1;
    c.autoencoder.proj_width = 8;
    c.autoencoder.proj_mlp = 16;
    c.data.count = 4;
    c.data.frames_per_video = 8;
    c.data.min_size = 3;
    c.data.max_size = 6;
    c.ae_train.batch = 2;
    c.ae_train.steps = 6;
    c.ae_train.warmup = 2;
    c.ae_train.eval_every = 3;
    c.ae_train.eval_clips = 4;
    c.ae_train.checkpoint_every = 3;
    c.ae_train.log_every = 1;
    c.losses.perceptual_channels = {4, 8};
    c.losses.disc_channels = {4, 8};
    c.losses.gan_start_step = 3;
    c.diffusion.model.base_channels = 8;
    c.diffusion.model.heads = 2;
    c.diffusion.schedule.T = 50;
    c.diffusion.train.batch = 2;
    c.diffusion.train.steps = 6;
    c.diffusion.train.warmup = 2;
    c.diffusion.train.log_every = 1;
    c.diffusion.train.checkpoint_every = 3;
    c.sampler.N = 5;
    c.sampler.M = 3;
    c.sampler.L = 2;
    c.evaluation.clips = 4;
    c.evaluation.extractor_channels = {4, 8};
    c.evaluation.profile_repeats = 1;
    c.validate();
    return c;
}

}  // namespace

TEST(ConfigTest, PresetsRoundTripThroughJson) {
    for (const auto& name : preset_names()) {
        const RunConfig c = preset(name);
        c.validate();
        EXPECT_EQ(to_json(resolve_config(to_json(c))), to_json(c)) << name;
    }
}

TEST(ConfigTest, FullScalePresetsEchoOptimizerSettings) {
    for (const auto& [name, base] : std::vector<std::pair<std::string, int64_t>>{{"pvdm-s-paper", 128}, {"pvdm-l-paper", 256}}) {
        const auto j = to_json(preset(name));
        EXPECT_DOUBLE_EQ(j["ae_train"]["lr"].get<double>(), 1e-4) << name;
        EXPECT_EQ(j["ae_train"]["batch"].get<int64_t>(), 24) << name;
        EXPECT_DOUBLE_EQ(j["diffusion"]["train"]["lr"].get<double>(), 1e-4) << name;
        EXPECT_EQ(j["diffusion"]["train"]["batch"].get<int64_t>(), 64) << name;
        EXPECT_EQ(j["diffusion"]["model"]["base_channels"].get<int64_t>(), base) << name;
        EXPECT_EQ(j["autoencoder"]["S"].get<int64_t>(), 16) << name;
        EXPECT_EQ(j["autoencoder"]["H"].get<int64_t>(), 256) << name;
    }
}

TEST(ConfigTest, OverridesMergeOntoPreset) {
    const RunConfig c = resolve_config(nlohmann::json::parse(R"({"preset":"desk-tiny","seed":7,"ae_train":{"lr":0.5}})"));
    EXPECT_EQ(c.seed, 7u);
    EXPECT_DOUBLE_EQ(c.ae_train.lr, 0.5);
    EXPECT_EQ(c.ae_train.batch, preset("desk-tiny").ae_train.batch);
}

TEST(ConfigTest, UnknownKeysAreRejectedWithTheirPath) {
    try {
        resolve_config(nlohmann::json::parse(R"({"ae_train":{"lr":1e-3,"lrr":2}})"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("ae_train.lrr"), std::string::npos) << e.what();
    }
    EXPECT_THROW(resolve_config(nlohmann::json::parse(R"({"bogus":1})")), ConfigError);
    EXPECT_THROW(resolve_config(nlohmann::json::parse(R"({"preset":"nope"})")), ConfigError);
}

TEST(ConfigTest, InvalidValuesAreRejected) {
    EXPECT_THROW(resolve_config(nlohmann::json::parse(R"({"diffusion":{"lambda":1.0}})")), ConfigError);
    EXPECT_THROW(resolve_config(nlohmann::json::parse(R"({"sampler":{"mode":"plms"}})")), ConfigError);
    EXPECT_THROW(resolve_config(nlohmann::json::parse(R"({"autoencoder":{"H":60}})")), ConfigError);
    EXPECT_THROW(parse_config_text("{not json", "inline"), ConfigError);
}

TEST(ConfigTest, OutputRootPriority) {
    RunConfig c = preset("desk-tiny");
    c.output_root = "from_config";
    ::unsetenv("PVDM_OUTPUT_ROOT");
    EXPECT_EQ(output_root(c), fs::path("from_config"));
    ::setenv("PVDM_OUTPUT_ROOT", "from_env", 1);
    EXPECT_EQ(output_root(c), fs::path("from_env"));
    EXPECT_EQ(output_root(c, "from_flag"), fs::path("from_flag"));
    ::unsetenv("PVDM_OUTPUT_ROOT");
}

TEST(CheckpointTest, RoundTripIsByteIdentical) {
    Checkpoint ck;
    ck.kind = "autoencoder";
    ck.config = to_json(preset("desk-tiny"));
    ck.step = 42;
    ck.state["x"] = 1.5;
    Rng rng = derive_rng(3, {1});
    ck.arrays["a/w"] = Tensor<float>::randn({3, 4}, rng);
    ck.arrays["b"] = Tensor<float>::randn({5}, rng);
    const std::string bytes = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.step, 42);
    EXPECT_TRUE(std::ranges::equal(back.arrays.at("a/w").values(), ck.arrays.at("a/w").values()));
}

TEST(CheckpointTest, CorruptionAndVersionAreDetected) {
    Checkpoint ck;
    ck.kind = "diffusion";
    ck.arrays["w"] = Tensor<float>({8});
    std::string bytes = serialize_checkpoint(ck);
    std::string flipped = bytes;
    flipped[flipped.size() - 12] ^= 0x5A;
    EXPECT_THROW(deserialize_checkpoint(flipped), CheckpointError);
    std::string versioned = bytes;
    versioned[8] = 9;
    try {
        deserialize_checkpoint(versioned);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    }
    EXPECT_THROW(deserialize_checkpoint("PVDMCK"), CheckpointError);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST(CheckpointTest, ParameterNamesAndShapesMustMatch) {
    ParamStore<float> a, b;
    a.add("w", Tensor<float>({2, 2}), true);
    b.add("w", Tensor<float>({2, 3}), true);
    Checkpoint ck;
    put_params(ck, "m/", a);
    EXPECT_THROW(get_params(ck, "m/", b), CheckpointError);
    ParamStore<float> c;
    c.add("v", Tensor<float>({2, 2}), true);
    EXPECT_THROW(get_params(ck, "m/", c), CheckpointError);
}

TEST(TrainerTest, BatchIndicesCoverEveryClipEachEpoch) {
    std::vector<int> seen(10, 0);
    for (int64_t s = 0; s < 5; ++s)
        for (int64_t i : batch_indices(1, 10, 2, s)) ++seen[static_cast<size_t>(i)];
    for (int v : seen) EXPECT_EQ(v, 1);
    EXPECT_EQ(batch_indices(1, 10, 4, 3), batch_indices(1, 10, 4, 3));
}

TEST(TrainerTest, AutoencoderTrainsCheckpointsAndResumes) {
    RunConfig c = micro_config("ae_resume");
    AeTrainResult full;
    {
        AeTrainer t(c);
        full = t.run();
    }
    EXPECT_EQ(full.steps, 6);
    EXPECT_TRUE(fs::exists(full.last_checkpoint));
    EXPECT_TRUE(fs::exists(full.best_checkpoint));
    EXPECT_TRUE(fs::exists(full.run_dir / "config.json"));
    ASSERT_EQ(full.history.size(), 2u);
    const auto final_full = load_checkpoint(full.last_checkpoint);
    EXPECT_FALSE(final_full.state.at("gan_fired_at").is_null());


    // Same run interrupted after the step-3 checkpoint, then resumed.
    RunConfig again = c;
    again.output_root = scratch("ae_resume_again").string();
    AeTrainOptions stop;
    stop.on_eval = [](const AeEvalRecord& r) {
        if (r.step == 6) throw std::runtime_error("interrupt");
    };
    {
        AeTrainer t(again, stop);
        EXPECT_THROW(t.run(), std::runtime_error);
    }
    AeTrainOptions resume;
    resume.resume = true;
    AeTrainResult resumed;
    {
        AeTrainer t(again, resume);
        resumed = t.run();
    }
    EXPECT_EQ(resumed.steps, 6);
    ASSERT_EQ(resumed.history.size(), 2u);
    EXPECT_EQ(resumed.history[1].psnr, full.history[1].psnr);
    const auto final_resumed = load_checkpoint(resumed.last_checkpoint);
    for (const auto& [name, t] : final_full.arrays)
        EXPECT_TRUE(std::ranges::equal(t.values(), final_resumed.arrays.at(name).values())) << name;
}

TEST(TrainerTest, DiffusionResumeReproducesTheNextLoss) {
    RunConfig c = micro_config("diff_resume");
    {
        AeTrainer t(c);
        t.run();
    }
    std::vector<double> straight;
    {
        DiffusionTrainer t(c);
        straight = t.run().losses;
    }
    ASSERT_EQ(straight.size(), 6u);
    // Interrupt after the step-3 checkpoint, then resume to 6.
    DiffusionTrainOptions stop;
    stop.on_step = [](int64_t step, double) {
        if (step == 3) throw std::runtime_error("interrupt");
    };
    {
        DiffusionTrainer t(c, stop);
        EXPECT_THROW(t.run(), std::runtime_error);
    }
    DiffusionTrainOptions resume;
    resume.resume = true;
    std::vector<double> tail;
    {
        DiffusionTrainer t(c, resume);
        tail = t.run().losses;
    }
    ASSERT_EQ(tail.size(), 3u);
    for (size_t i = 0; i < 3; ++i) EXPECT_EQ(tail[i], straight[3 + i]) << i;
}

TEST(TrainerTest, MismatchedAutoencoderIsRejectedNamingBothConfigs) {
    RunConfig c = micro_config("ae_mismatch");
    {
        AeTrainer t(c);
        t.run();
    }
    RunConfig other = c;
    other.autoencoder.C = 2;
    DiffusionTrainer t(other);
    try {
        t.run();
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("\"C\":4"), std::string::npos) << m;
        EXPECT_NE(m.find("\"C\":2"), std::string::npos) << m;
    }
}

TEST(CommandTest, SampleAndEvaluateEndToEnd) {
    RunConfig c = micro_config("commands");
    {
        AeTrainer t(c);
        t.run();
    }
    {
        DiffusionTrainer t(c);
        t.run();
    }
    const auto s = run_sample(c);
    EXPECT_EQ(s.video.frames.dim(1), c.sampler.L * c.autoencoder.S);
    EXPECT_EQ(static_cast<int64_t>(s.frame_files.size()), c.sampler.L * c.autoencoder.S);
    for (const auto& f : s.frame_files) EXPECT_TRUE(fs::exists(f));

    const auto recon = run_eval_recon(c);
    ASSERT_EQ(recon.size(), 2u);
    EXPECT_EQ(recon[0]["metric"], "psnr");
    EXPECT_EQ(recon[0]["config_hash"], config_hash(c));
    EXPECT_TRUE(std::isfinite(recon[1]["value"].get<double>()));

    const auto gen = run_eval_gen(c);
    EXPECT_EQ(gen[0]["metric"], "fvd");
    EXPECT_GE(gen[0]["value"].get<double>(), 0.0);

    const auto prof = run_eval_profile(c, "", false);
    EXPECT_TRUE(fs::exists(output_root(c) / c.name / "profile.json"));
    EXPECT_TRUE(prof.contains("token_ratio"));
}
