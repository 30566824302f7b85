#pragma once

#include "pvdm/app/train_diffusion.hpp"
#include "pvdm/eval/profiler.hpp"

namespace pvdm::app {

/// One evaluation record as written to metrics.jsonl.
inline nlohmann::json metric_record(const RunConfig& c, const std::string& metric, double value, nlohmann::json extra = {}) {
    nlohmann::json r = {{"metric", metric}, {"config_hash", config_hash(c)}, {"seed", c.seed}, {"value", value}};
    if (extra.is_object()) r.update(extra);
    return r;
}

struct SampleResult {
    fs::path out_dir;
    sampler::LongVideo video;
    std::vector<fs::path> frame_files;
};

/// Generates `cfg.sampler.L` chained clips and writes them as frames under
/// <run>/samples/<mode>_<N>_<M>_seed<seed>/.
inline SampleResult run_sample(const RunConfig& cfg, const std::string& root_override = "") {
    const fs::path run = run_dir(cfg, root_override);
    const Generator g = load_generator(cfg, run / "diffusion_last.ckpt", default_ae_checkpoint(run));
    SampleResult r;
    r.video = sampler::generate_long_video(g.eps_fn(), g.decode_fn(), g.schedule, cfg.sampler, g.like());
    const auto& s = cfg.sampler;
    r.out_dir = run / "samples" /
                (std::string(sampler::to_string(s.mode)) + "_" + std::to_string(s.N) + "_" + std::to_string(s.M) + "_seed" +
                 std::to_string(s.seed));
    r.frame_files = data::write_frames(r.video.frames, r.out_dir);
    write_text(r.out_dir / "sample.json", nlohmann::json{{"config_hash", config_hash(cfg)},
                                                         {"mode", sampler::to_string(s.mode)},
                                                         {"steps_init", s.N},
                                                         {"steps_cond", s.M},
                                                         {"eta", s.eta},
                                                         {"clips", s.L},
                                                         {"seed", s.seed},
                                                         {"frames", r.video.frames.dim(1)}}
                                                  .dump(2) + "\n");
    return r;
}

inline void append_metrics(const fs::path& run, const std::vector<nlohmann::json>& records) {
    JsonlLog log(run / "metrics.jsonl", true);
    for (const auto& r : records) log.write(r);
}

/// Reconstruction PSNR and R-FVD of the trained autoencoder on the test split.
inline std::vector<nlohmann::json> run_eval_recon(const RunConfig& cfg, const std::string& root_override = "") {
    const fs::path run = run_dir(cfg, root_override);
    const fs::path ck = default_ae_checkpoint(run);
    const Checkpoint ack = load_checkpoint(ck);
    require_autoencoder(ack, cfg, ck.string());
    const auto model = load_autoencoder(ack);
    const auto ds = open_dataset(cfg, data::Split::test);
    const auto clips = data::stack_clips(data::eval_clip_protocol(ds, static_cast<size_t>(cfg.evaluation.clips),
                                                                  cfg.autoencoder.S, cfg.seed, true));
    const eval::ToyVideoExtractor ex(cfg.evaluation.extractor_seed, cfg.evaluation.extractor_channels);
    const auto recon = [&](const Tensor<float>& x) { return model.decode_tensor(model.encode_tensor(x)); };
    const nlohmann::json extra = {{"split", "test"}, {"clips", clips.dim(0)}, {"checkpoint", ck.string()}};
    std::vector<nlohmann::json> out = {
        metric_record(cfg, "psnr", eval::psnr(recon(clips), clips), extra),
        metric_record(cfg, "r_fvd", eval::r_fvd(clips, recon, std::cref(ex)), extra)};
    append_metrics(run, out);
    return out;
}

/// FVD between generated single clips and real test clips.
inline std::vector<nlohmann::json> run_eval_gen(const RunConfig& cfg, const std::string& root_override = "") {
    const fs::path run = run_dir(cfg, root_override);
    const Generator g = load_generator(cfg, run / "diffusion_last.ckpt", default_ae_checkpoint(run));
    const auto ds = open_dataset(cfg, data::Split::test);
    const auto real = data::stack_clips(data::eval_clip_protocol(ds, static_cast<size_t>(cfg.evaluation.clips),
                                                                 cfg.autoencoder.S, cfg.seed, true));
    const int64_t n = std::max<int64_t>(2, real.dim(0));
    std::vector<Tensor<float>> fake;
    const auto eps = g.eps_fn();
    for (int64_t i = 0; i < n; ++i) {
        Rng rng = derive_rng(cfg.sampler.seed, {0x6E4, static_cast<uint64_t>(i)});
        const Planes z = sampler::sample_clip(eps, g.schedule, nullptr, cfg.sampler.N, cfg.sampler.mode, cfg.sampler.eta, rng, g.like());
        Tensor<float> x = g.autoencoder.decode_tensor(z);
        for (float& v : x.values()) v = std::clamp(v, -1.0f, 1.0f);
        fake.push_back(std::move(x));
    }
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& f : fake) ptrs.push_back(&f);
    const eval::ToyVideoExtractor ex(cfg.evaluation.extractor_seed, cfg.evaluation.extractor_channels);
    const double fvd = eval::frechet_distance(eval::feature_stats(real, std::cref(ex)), eval::feature_stats(concat(ptrs, 0), std::cref(ex)));
    std::vector<nlohmann::json> out = {metric_record(
        cfg, "fvd", fvd,
        {{"split", "test"}, {"clips", n}, {"mode", sampler::to_string(cfg.sampler.mode)}, {"steps", cfg.sampler.N}, {"sampler_seed", cfg.sampler.seed}})};
    append_metrics(run, out);
    return out;
}

/// Token counts and measured attention cost, triplane vs cubic latent.
inline nlohmann::json run_eval_profile(const RunConfig& cfg, const std::string& root_override = "", bool measure = true) {
    const fs::path run = run_dir(cfg, root_override);
    eval::ProfileOptions opt;
    opt.measure = measure;
    opt.batch = cfg.evaluation.profile_batch;
    opt.repeats = cfg.evaluation.profile_repeats;
    opt.seed = cfg.seed;
    const auto report = eval::profile_token_costs(cfg.autoencoder, cfg.diffusion.model, opt);
    nlohmann::json j = eval::to_json(report);
    j["config_hash"] = config_hash(cfg);
    write_text(run / "profile.json", j.dump(2) + "\n");
    append_metrics(run, {metric_record(cfg, "token_ratio", report.token_ratio),
                         metric_record(cfg, "speedup", report.speedup, {{"measured", report.measured}})});
    return j;
}

}  // namespace pvdm::app
