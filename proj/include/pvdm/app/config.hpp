#pragma once

// Run configuration: JSON documents layered over a named preset with
// RFC 7386 merge-patch. Keys absent from the preset are rejected.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pvdm/autoencoder/config.hpp"
#include "pvdm/data/dataset.hpp"
#include "pvdm/diffusion/denoiser.hpp"
#include "pvdm/diffusion/objective.hpp"
#include "pvdm/errors.hpp"
#include "pvdm/losses/objective.hpp"
#include "pvdm/sampler/sampler.hpp"

namespace pvdm::app {

using nlohmann::json;

struct DataConfig {
    std::string source = "synthetic";  // synthetic | directory
    std::string root;                  // directory source only
    std::string split = "train";
    // synthetic source; clip length and resolution follow the autoencoder geometry
    int64_t count = 32;
    int64_t frames_per_video = 16;
    uint64_t synthetic_seed = 0;
    int shapes_per_video = 1;
    double min_size = 12.0, max_size = 22.0;
    double min_speed = 1.0, max_speed = 3.0;
    double edge_softness = 1.5;
    double motion_floor = 1e-4;
};

struct AeTrainConfig {
    int64_t batch = 4;
    double lr = 1e-3;
    int64_t warmup = 50;
    int64_t steps = 4000;
    double grad_clip = 1.0;
    int64_t log_every = 50;
    int64_t eval_every = 500;
    int64_t eval_clips = 64;
    int64_t checkpoint_every = 500;
    int patience = 3;
};

struct ScheduleConfig {
    int64_t T = 1000;
    double start = 0.0015;
    double end = 0.0195;
};

struct DiffusionTrainConfig {
    int64_t batch = 8;
    double lr = 1e-3;
    int64_t warmup = 100;
    int64_t steps = 4000;
    double grad_clip = 1.0;
    int64_t log_every = 50;
    int64_t checkpoint_every = 1000;
};

struct DiffusionConfig {
    diffusion::DenoiserConfig model;
    ScheduleConfig schedule;
    double lambda = 0.5;
    diffusion::JointMode joint_mode = diffusion::JointMode::both_branches;
    DiffusionTrainConfig train;
};

struct EvalConfig {
    int64_t clips = 256;
    uint64_t extractor_seed = 0;
    std::vector<int64_t> extractor_channels = {16, 32, 64};
    int profile_repeats = 5;
    int64_t profile_batch = 1;
};

struct RunConfig {
    std::string preset = "desk-tiny";
    std::string name = "run";
    uint64_t seed = 0;
    std::string output_root = "runs";
    DataConfig data;
    ae::AutoencoderConfig autoencoder;
    AeTrainConfig ae_train;
    losses::LossConfig losses;
    DiffusionConfig diffusion;
    sampler::SamplerConfig sampler;
    EvalConfig evaluation;

    void validate() const;
    data::SyntheticSpec synthetic_spec() const;
    diffusion::NoiseSchedule schedule() const {
        return diffusion::make_linear_schedule(diffusion.schedule.T, diffusion.schedule.start, diffusion.schedule.end);
    }
};

// ---- JSON mapping ---------------------------------------------------------

namespace detail {

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

template <typename E, typename Parse>
void get_enum(const json& j, const char* key, E& out, Parse parse) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    out = parse(j.at(key).template get<std::string>());
}

}  // namespace detail

inline json to_json(const DataConfig& c) {
    return {{"source", c.source},
            {"root", c.root},
            {"split", c.split},
            {"count", c.count},
            {"frames_per_video", c.frames_per_video},
            {"synthetic_seed", c.synthetic_seed},
            {"shapes_per_video", c.shapes_per_video},
            {"min_size", c.min_size},
            {"max_size", c.max_size},
            {"min_speed", c.min_speed},
            {"max_speed", c.max_speed},
            {"edge_softness", c.edge_softness},
            {"motion_floor", c.motion_floor}};
}

inline void from_json(const json& j, DataConfig& c) {
    using detail::get_to;
    get_to(j, "source", c.source);
    get_to(j, "root", c.root);
    get_to(j, "split", c.split);
    get_to(j, "count", c.count);
    get_to(j, "frames_per_video", c.frames_per_video);
    get_to(j, "synthetic_seed", c.synthetic_seed);
    get_to(j, "shapes_per_video", c.shapes_per_video);
    get_to(j, "min_size", c.min_size);
    get_to(j, "max_size", c.max_size);
    get_to(j, "min_speed", c.min_speed);
    get_to(j, "max_speed", c.max_speed);
    get_to(j, "edge_softness", c.edge_softness);
    get_to(j, "motion_floor", c.motion_floor);
}

inline json to_json(const ae::AutoencoderConfig& c) {
    return {{"S", c.S},
            {"H", c.H},
            {"W", c.W},
            {"patch", c.patch},
            {"pool", c.pool},
            {"C", c.C},
            {"width", c.width},
            {"heads", c.heads},
            {"mlp_hidden", c.mlp_hidden},
            {"depth_hi", c.depth_hi},
            {"depth", c.depth},
            {"dec_depth", c.dec_depth},
            {"dec_depth_hi", c.dec_depth_hi},
            {"projection", ae::to_string(c.projection)},
            {"proj_depth", c.proj_depth},
            {"proj_width", c.proj_width},
            {"proj_heads", c.proj_heads},
            {"proj_mlp", c.proj_mlp}};
}

inline void from_json(const json& j, ae::AutoencoderConfig& c) {
    using detail::get_to;
    get_to(j, "S", c.S);
    get_to(j, "H", c.H);
    get_to(j, "W", c.W);
    get_to(j, "patch", c.patch);
    get_to(j, "pool", c.pool);
    get_to(j, "C", c.C);
    get_to(j, "width", c.width);
    get_to(j, "heads", c.heads);
    get_to(j, "mlp_hidden", c.mlp_hidden);
    get_to(j, "depth_hi", c.depth_hi);
    get_to(j, "depth", c.depth);
    get_to(j, "dec_depth", c.dec_depth);
    get_to(j, "dec_depth_hi", c.dec_depth_hi);
    detail::get_enum(j, "projection", c.projection, ae::parse_projection);
    get_to(j, "proj_depth", c.proj_depth);
    get_to(j, "proj_width", c.proj_width);
    get_to(j, "proj_heads", c.proj_heads);
    get_to(j, "proj_mlp", c.proj_mlp);
}

inline json to_json(const AeTrainConfig& c) {
    return {{"batch", c.batch},         {"lr", c.lr},
            {"warmup", c.warmup},       {"steps", c.steps},
            {"grad_clip", c.grad_clip}, {"log_every", c.log_every},
            {"eval_every", c.eval_every}, {"eval_clips", c.eval_clips},
            {"checkpoint_every", c.checkpoint_every}, {"patience", c.patience}};
}

inline void from_json(const json& j, AeTrainConfig& c) {
    using detail::get_to;
    get_to(j, "batch", c.batch);
    get_to(j, "lr", c.lr);
    get_to(j, "warmup", c.warmup);
    get_to(j, "steps", c.steps);
    get_to(j, "grad_clip", c.grad_clip);
    get_to(j, "log_every", c.log_every);
    get_to(j, "eval_every", c.eval_every);
    get_to(j, "eval_clips", c.eval_clips);
    get_to(j, "checkpoint_every", c.checkpoint_every);
    get_to(j, "patience", c.patience);
}

inline json to_json(const losses::LossConfig& c) {
    return {{"lambda1", c.lambda1},
            {"lambda2_before", c.lambda2_before},
            {"lambda2_after", c.lambda2_after},
            {"gan_start_rule", losses::to_string(c.gan_start_rule)},
            {"gan_start_step", c.gan_start_step},
            {"plateau_window", c.plateau_window},
            {"plateau_tol", c.plateau_tol},
            {"perceptual_channels", c.perceptual_channels},
            {"disc_channels", c.disc_channels}};
}

inline void from_json(const json& j, losses::LossConfig& c) {
    using detail::get_to;
    get_to(j, "lambda1", c.lambda1);
    get_to(j, "lambda2_before", c.lambda2_before);
    get_to(j, "lambda2_after", c.lambda2_after);
    detail::get_enum(j, "gan_start_rule", c.gan_start_rule, losses::parse_gan_start_rule);
    get_to(j, "gan_start_step", c.gan_start_step);
    get_to(j, "plateau_window", c.plateau_window);
    get_to(j, "plateau_tol", c.plateau_tol);
    get_to(j, "perceptual_channels", c.perceptual_channels);
    get_to(j, "disc_channels", c.disc_channels);
}

inline json to_json(const diffusion::DenoiserConfig& c) {
    return {{"base_channels", c.base_channels},
            {"channel_mult", c.channel_mult},
            {"res_blocks", c.res_blocks},
            {"attention_stages", c.attention_stages},
            {"middle_attention", c.middle_attention},
            {"heads", c.heads},
            {"time_embed_dim", c.time_embed_dim}};
}

inline void from_json(const json& j, diffusion::DenoiserConfig& c) {
    using detail::get_to;
    get_to(j, "base_channels", c.base_channels);
    get_to(j, "channel_mult", c.channel_mult);
    get_to(j, "res_blocks", c.res_blocks);
    get_to(j, "attention_stages", c.attention_stages);
    get_to(j, "middle_attention", c.middle_attention);
    get_to(j, "heads", c.heads);
    get_to(j, "time_embed_dim", c.time_embed_dim);
}

inline json to_json(const DiffusionConfig& c) {
    return {{"model", to_json(c.model)},
            {"schedule", {{"T", c.schedule.T}, {"start", c.schedule.start}, {"end", c.schedule.end}}},
            {"lambda", c.lambda},
            {"joint_mode", diffusion::to_string(c.joint_mode)},
            {"train",
             {{"batch", c.train.batch},
              {"lr", c.train.lr},
              {"warmup", c.train.warmup},
              {"steps", c.train.steps},
              {"grad_clip", c.train.grad_clip},
              {"log_every", c.train.log_every},
              {"checkpoint_every", c.train.checkpoint_every}}}};
}

inline void from_json(const json& j, DiffusionConfig& c) {
    using detail::get_to;
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        get_to(s, "T", c.schedule.T);
        get_to(s, "start", c.schedule.start);
        get_to(s, "end", c.schedule.end);
    }
    get_to(j, "lambda", c.lambda);
    detail::get_enum(j, "joint_mode", c.joint_mode, diffusion::parse_joint_mode);
    if (j.contains("train")) {
        const json& t = j.at("train");
        get_to(t, "batch", c.train.batch);
        get_to(t, "lr", c.train.lr);
        get_to(t, "warmup", c.train.warmup);
        get_to(t, "steps", c.train.steps);
        get_to(t, "grad_clip", c.train.grad_clip);
        get_to(t, "log_every", c.train.log_every);
        get_to(t, "checkpoint_every", c.train.checkpoint_every);
    }
}

inline json to_json(const sampler::SamplerConfig& c) {
    return {{"mode", sampler::to_string(c.mode)}, {"steps_init", c.N}, {"steps_cond", c.M},
            {"eta", c.eta},                       {"clips", c.L},      {"seed", c.seed}};
}

inline void from_json(const json& j, sampler::SamplerConfig& c) {
    using detail::get_to;
    detail::get_enum(j, "mode", c.mode, sampler::parse_mode);
    get_to(j, "steps_init", c.N);
    get_to(j, "steps_cond", c.M);
    get_to(j, "eta", c.eta);
    get_to(j, "clips", c.L);
    get_to(j, "seed", c.seed);
}

inline json to_json(const EvalConfig& c) {
    return {{"clips", c.clips},
            {"extractor_seed", c.extractor_seed},
            {"extractor_channels", c.extractor_channels},
            {"profile_repeats", c.profile_repeats},
            {"profile_batch", c.profile_batch}};
}

inline void from_json(const json& j, EvalConfig& c) {
    using detail::get_to;
    get_to(j, "clips", c.clips);
    get_to(j, "extractor_seed", c.extractor_seed);
    get_to(j, "extractor_channels", c.extractor_channels);
    get_to(j, "profile_repeats", c.profile_repeats);
    get_to(j, "profile_batch", c.profile_batch);
}

inline json to_json(const RunConfig& c) {
    return {{"preset", c.preset},
            {"name", c.name},
            {"seed", c.seed},
            {"output_root", c.output_root},
            {"data", to_json(c.data)},
            {"autoencoder", to_json(c.autoencoder)},
            {"ae_train", to_json(c.ae_train)},
            {"losses", to_json(c.losses)},
            {"diffusion", to_json(c.diffusion)},
            {"sampler", to_json(c.sampler)},
            {"evaluation", to_json(c.evaluation)}};
}

inline void from_json(const json& j, RunConfig& c) {
    using detail::get_to;
    get_to(j, "preset", c.preset);
    get_to(j, "name", c.name);
    get_to(j, "seed", c.seed);
    get_to(j, "output_root", c.output_root);
    if (j.contains("data")) from_json(j.at("data"), c.data);
    if (j.contains("autoencoder")) from_json(j.at("autoencoder"), c.autoencoder);
    if (j.contains("ae_train")) from_json(j.at("ae_train"), c.ae_train);
    if (j.contains("losses")) from_json(j.at("losses"), c.losses);
    if (j.contains("diffusion")) from_json(j.at("diffusion"), c.diffusion);
    if (j.contains("sampler")) from_json(j.at("sampler"), c.sampler);
    if (j.contains("evaluation")) from_json(j.at("evaluation"), c.evaluation);
}

// ---- validation -----------------------------------------------------------

inline data::SyntheticSpec RunConfig::synthetic_spec() const {
    data::SyntheticSpec s;
    s.count = data.count;
    s.clip_length = autoencoder.S;
    s.frames_per_video = data.frames_per_video;
    s.resolution = autoencoder.H;
    s.seed = data.synthetic_seed;
    s.shapes_per_video = data.shapes_per_video;
    s.min_size = data.min_size;
    s.max_size = data.max_size;
    s.min_speed = data.min_speed;
    s.max_speed = data.max_speed;
    s.edge_softness = data.edge_softness;
    s.motion_floor = data.motion_floor;
    return s;
}

inline void RunConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
        fail("run name must be a plain, non-empty directory name");
    if (data.source != "synthetic" && data.source != "directory") fail("data.source must be 'synthetic' or 'directory'");
    if (data.source == "directory" && data.root.empty()) fail("data.root is required for a directory source");
    data::parse_split(data.split);
    autoencoder.validate();
    if (autoencoder.H != autoencoder.W) fail("frames are square: autoencoder.H must equal autoencoder.W");
    if (data.source == "synthetic") synthetic_spec().validate();
    if (ae_train.batch <= 0 || ae_train.steps < 0 || ae_train.lr <= 0 || ae_train.warmup < 0 || ae_train.grad_clip < 0)
        fail("ae_train: batch and lr must be positive; steps, warmup and grad_clip non-negative");
    if (ae_train.log_every <= 0 || ae_train.eval_every <= 0 || ae_train.checkpoint_every <= 0 || ae_train.eval_clips < 2)
        fail("ae_train: intervals must be positive and eval_clips >= 2");
    if (ae_train.patience <= 0) fail("ae_train.patience must be positive");
    losses.validate();
    diffusion.model.validate();
    diffusion.model.validate_geometry(autoencoder.S, autoencoder.Hp(), autoencoder.Wp());
    const auto sched = schedule();
    if (!(diffusion.lambda > 0 && diffusion.lambda < 1)) fail("diffusion.lambda must lie in (0, 1)");
    const auto& t = diffusion.train;
    if (t.batch <= 0 || t.steps < 0 || t.lr <= 0 || t.warmup < 0 || t.grad_clip < 0 || t.log_every <= 0 || t.checkpoint_every <= 0)
        fail("diffusion.train: invalid batch, lr, steps or interval");
    sampler.validate(sched.T);
    if (evaluation.clips < 2) fail("evaluation.clips must be >= 2");
    if (evaluation.extractor_channels.empty()) fail("evaluation.extractor_channels must be non-empty");
    if (evaluation.profile_repeats <= 0 || evaluation.profile_batch <= 0) fail("evaluation profile settings must be positive");
}

// ---- presets --------------------------------------------------------------

inline std::vector<std::string> preset_names() { return {"desk-tiny", "pvdm-s-paper", "pvdm-l-paper"}; }

/// Desk-scale defaults: 64x64x8 clips, d = 8, C = 4. Small enough for one CPU core.
inline RunConfig desk_tiny_preset() {
    RunConfig c;
    c.preset = "desk-tiny";
    c.autoencoder = ae::AutoencoderConfig{};
    c.losses.gan_start_step = 3000;
    c.diffusion.model.base_channels = 32;
    c.diffusion.model.channel_mult = {1, 2};
    c.diffusion.model.res_blocks = 1;
    c.diffusion.model.attention_stages = {1};
    c.diffusion.model.heads = 4;
    c.evaluation.clips = 256;
    return c;
}

/// Full-scale settings for the 256x256x16 models; `base` is 128 (S) or 256 (L).
inline RunConfig full_scale_preset(const std::string& name, int64_t base, int64_t steps) {
    RunConfig c;
    c.preset = name;
    c.autoencoder = ae::reference_autoencoder_config();
    c.data.frames_per_video = 32;
    c.data.min_size = 48;
    c.data.max_size = 88;
    c.data.min_speed = 4;
    c.data.max_speed = 12;
    c.ae_train.batch = 24;
    c.ae_train.lr = 1e-4;
    c.ae_train.warmup = 0;
    c.ae_train.steps = 100000;
    c.ae_train.eval_every = 5000;
    c.ae_train.eval_clips = 2048;
    c.ae_train.checkpoint_every = 5000;
    c.losses.gan_start_step = 50000;
    c.diffusion.model.base_channels = base;
    c.diffusion.model.channel_mult = {1, 2, 4};
    c.diffusion.model.res_blocks = 2;
    c.diffusion.model.attention_stages = {0, 1, 2};
    c.diffusion.model.heads = 8;
    c.diffusion.schedule = {1000, 0.0015, 0.0195};
    c.diffusion.train.batch = 64;
    c.diffusion.train.lr = 1e-4;
    c.diffusion.train.warmup = 0;
    c.diffusion.train.steps = steps;
    c.diffusion.train.checkpoint_every = 10000;
    c.sampler.N = 100;
    c.sampler.M = 20;
    c.evaluation.clips = 2048;
    return c;
}

inline RunConfig preset(const std::string& name) {
    if (name == "desk-tiny") return desk_tiny_preset();
    if (name == "pvdm-s-paper") return full_scale_preset(name, 128, 400000);
    if (name == "pvdm-l-paper") return full_scale_preset(name, 256, 850000);
    throw ConfigError("unknown preset '" + name + "'");
}

namespace detail {

inline void reject_unknown_keys(const json& user, const json& known, const std::string& path) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string where = path.empty() ? it.key() : path + "." + it.key();
        if (!known.is_object() || !known.contains(it.key())) throw ConfigError("unknown config key '" + where + "'");
        if (it.value().is_object()) reject_unknown_keys(it.value(), known.at(it.key()), where);
    }
}

}  // namespace detail

/// Applies a user document over its preset (default desk-tiny) and validates.
inline RunConfig resolve_config(const json& user) {
    if (!user.is_object()) throw ConfigError("config document must be a JSON object");
    std::string name = "desk-tiny";
    if (user.contains("preset")) {
        if (!user.at("preset").is_string()) throw ConfigError("config key 'preset' must be a string");
        name = user.at("preset").get<std::string>();
    }
    json doc = to_json(preset(name));
    detail::reject_unknown_keys(user, doc, "");
    doc.merge_patch(user);
    RunConfig c;
    from_json(doc, c);
    c.validate();
    return c;
}

inline json parse_config_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse " + origin + ": " + e.what());
    }
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return resolve_config(parse_config_text(text, path.string()));
}

/// Output root: explicit override, then PVDM_OUTPUT_ROOT, then the config.
inline std::filesystem::path output_root(const RunConfig& c, const std::string& override_root = "") {
    if (!override_root.empty()) return override_root;
    if (const char* env = std::getenv("PVDM_OUTPUT_ROOT"); env && *env) return env;
    return c.output_root;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace pvdm::app
