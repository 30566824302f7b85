#pragma once

#include "pvdm/app/train_ae.hpp"
#include "pvdm/diffusion/denoiser.hpp"
#include "pvdm/diffusion/objective.hpp"
#include "pvdm/sampler/sampler.hpp"

namespace pvdm::app {

using diffusion::Planes;

/// Consecutive aligned windows (i, j) of one video: clip j starts where clip i ends.
inline std::vector<std::pair<int64_t, int64_t>> consecutive_pairs(const data::DatasetHandle& ds) {
    const auto& refs = ds.clip_refs();
    std::vector<std::pair<int64_t, int64_t>> out;
    for (size_t i = 0; i + 1 < refs.size(); ++i) {
        if (refs[i + 1].video == refs[i].video && refs[i + 1].start == refs[i].start + ds.clip_length())
            out.emplace_back(static_cast<int64_t>(i), static_cast<int64_t>(i + 1));
    }
    return out;
}

inline Planes gather_planes(const Planes& all, const std::vector<int64_t>& idx) {
    return {gather_rows(all.s, idx), gather_rows(all.h, idx), gather_rows(all.w, idx)};
}

inline Planes slice_planes(const Planes& all, int64_t i, int64_t n = 1) {
    return {slice(all.s, 0, i, n), slice(all.h, 0, i, n), slice(all.w, 0, i, n)};
}

inline diffusion::TriplaneDenoiser<float> make_denoiser(const RunConfig& c) {
    const auto& a = c.autoencoder;
    return diffusion::TriplaneDenoiser<float>(c.diffusion.model, a.S, a.Hp(), a.Wp(), c.seed);
}

inline nlohmann::json to_json_schedule(const diffusion::NoiseSchedule& s) {
    return {{"T", s.T}, {"start", s.start}, {"end", s.end}};
}

/// Rejects a diffusion checkpoint whose schedule is not bit-identical to `sched`.
inline void require_schedule(const Checkpoint& ck, const diffusion::NoiseSchedule& sched, const std::string& origin) {
    const auto it = ck.arrays.find("schedule/beta");
    if (it == ck.arrays.end()) throw CheckpointError(origin + " carries no noise schedule");
    const auto& b = it->second;
    bool same = b.numel() == sched.T;
    for (int64_t i = 0; same && i < sched.T; ++i) same = b[i] == static_cast<float>(sched.beta[static_cast<size_t>(i + 1)]);
    if (!same || ck.state.value("schedule", nlohmann::json()) != to_json_schedule(sched))
        throw CheckpointError("noise schedule in " + origin + " differs from the configured schedule");
}

struct DiffusionTrainOptions {
    bool resume = false;
    std::string output_root;
    std::string ae_checkpoint;  // default: <run>/ae_best.ckpt, falling back to ae_last.ckpt
    double time_budget_s = 0;
    std::function<void(int64_t step, double loss)> on_step;
};

struct DiffusionTrainResult {
    fs::path run_dir, checkpoint;
    int64_t steps = 0;
    std::vector<double> losses;  // one per step run in this invocation
};

inline fs::path default_ae_checkpoint(const fs::path& run_dir) {
    const fs::path best = run_dir / "ae_best.ckpt";
    return fs::exists(best) ? best : run_dir / "ae_last.ckpt";
}

class DiffusionTrainer {
public:
    DiffusionTrainer(RunConfig cfg, DiffusionTrainOptions opt = {})
        : cfg_(std::move(cfg)), opt_(std::move(opt)), sched_(cfg_.schedule()), model_(make_denoiser(cfg_)) {
        cfg_.validate();
        adam_.emplace(model_.params(), nn::AdamConfig{.lr = cfg_.diffusion.train.lr, .grad_clip = cfg_.diffusion.train.grad_clip});
    }

    const diffusion::TriplaneDenoiser<float>& model() const { return model_; }

    DiffusionTrainResult run() {
        DiffusionTrainResult res;
        res.run_dir = prepare_run_dir(cfg_, opt_.output_root);
        res.checkpoint = res.run_dir / "diffusion_last.ckpt";
        const fs::path ae_path = opt_.ae_checkpoint.empty() ? default_ae_checkpoint(res.run_dir) : fs::path(opt_.ae_checkpoint);
        const Checkpoint ae_ck = load_checkpoint(ae_path);
        require_autoencoder(ae_ck, cfg_, ae_path.string());
        const auto ae_model = load_autoencoder(ae_ck);

        const auto ds = open_dataset(cfg_);
        ds.require_pairs();
        const auto pairs = consecutive_pairs(ds);
        const auto latents = ae_model.encode_tensor(all_clips(ds));

        int64_t step = 0;
        if (opt_.resume) step = restore(load_checkpoint(res.checkpoint));
        JsonlLog log(res.run_dir / "diffusion_train.jsonl", opt_.resume);
        const auto& t = cfg_.diffusion.train;
        const auto t0 = std::chrono::steady_clock::now();
        for (; step < t.steps; ++step) {
            if (opt_.time_budget_s > 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > opt_.time_budget_s)
                break;
            const double loss = train_step(step, latents, pairs);
            res.losses.push_back(loss);
            if (opt_.on_step) opt_.on_step(step, loss);
            if (step % t.log_every == 0)
                log.write({{"step", step}, {"loss", loss}, {"lr", adam_->lr()}});
            if ((step + 1) % t.checkpoint_every == 0) save_checkpoint(res.checkpoint, snapshot(step + 1, ae_path));
        }
        save_checkpoint(res.checkpoint, snapshot(step, ae_path));
        res.steps = step;
        return res;
    }

    /// One optimisation step; everything random is keyed by (seed, step).
    double train_step(int64_t step, const Planes& latents, const std::vector<std::pair<int64_t, int64_t>>& pairs) {
        const auto& t = cfg_.diffusion.train;
        Rng rng = derive_rng(cfg_.seed, {0xD1FF, static_cast<uint64_t>(step)});
        std::uniform_int_distribution<size_t> pick(0, pairs.size() - 1);
        std::uniform_int_distribution<int64_t> pick_t(1, sched_.T);
        std::vector<int64_t> prev, next, ts;
        for (int64_t b = 0; b < t.batch; ++b) {
            const auto& p = pairs[pick(rng)];
            prev.push_back(p.first);
            next.push_back(p.second);
            ts.push_back(pick_t(rng));
        }
        const Planes z1 = gather_planes(latents, prev), z2 = gather_planes(latents, next);
        const Planes eps = diffusion::randn_like_planes(z2, rng);
        auto out = diffusion::diffusion_loss(model_, z1, z2, ts, eps, sched_, cfg_.diffusion.lambda, cfg_.diffusion.joint_mode,
                                             &rng);
        backward(out.loss);
        adam_->set_lr(warmup_lr(t.lr, t.warmup, step));
        adam_->step();
        return out.loss.item();
    }

private:
    Checkpoint snapshot(int64_t step, const fs::path& ae_path) const {
        Checkpoint ck;
        ck.kind = "diffusion";
        ck.config = to_json(cfg_);
        ck.step = step;
        put_params(ck, "denoiser/", model_.params());
        put_adam(ck, "adam/", *adam_);
        Tensor<float> beta({sched_.T});
        for (int64_t i = 0; i < sched_.T; ++i) beta[i] = static_cast<float>(sched_.beta[static_cast<size_t>(i + 1)]);
        ck.arrays["schedule/beta"] = beta;
        ck.state["schedule"] = to_json_schedule(sched_);
        ck.state["rng"] = {{"seed", cfg_.seed}, {"counter", step}};
        ck.state["autoencoder_checkpoint"] = ae_path.string();
        return ck;
    }

    int64_t restore(const Checkpoint& ck) {
        if (ck.kind != "diffusion") throw CheckpointError("expected a diffusion checkpoint, found '" + ck.kind + "'");
        if (ck.config != to_json(cfg_))
            throw CheckpointError("resume config differs from the checkpoint's config; rerun from the persisted config.json");
        require_schedule(ck, sched_, "diffusion checkpoint");
        get_params(ck, "denoiser/", model_.params());
        get_adam(ck, "adam/", *adam_);
        return ck.step;
    }

    RunConfig cfg_;
    DiffusionTrainOptions opt_;
    diffusion::NoiseSchedule sched_;
    diffusion::TriplaneDenoiser<float> model_;
    std::optional<nn::Adam<float>> adam_;
};

/// Everything needed to sample: the trained denoiser and its autoencoder.
struct Generator {
    RunConfig cfg;
    diffusion::NoiseSchedule schedule;
    ae::TriplaneAutoencoder<float> autoencoder;
    diffusion::TriplaneDenoiser<float> denoiser;

    sampler::EpsFn eps_fn() const {
        return [this](const Planes& zt, const Planes* cond, int64_t t) {
            return denoiser.predict(zt, cond, std::vector<int64_t>(static_cast<size_t>(zt.s.dim(0)), t));
        };
    }
    sampler::DecodeFn decode_fn() const {
        return [this](const Planes& z) { return autoencoder.decode_tensor(z); };
    }
    /// Zero planes with the latent shapes of one clip.
    Planes like(int64_t batch = 1) const {
        const auto& a = cfg.autoencoder;
        const int64_t C = a.C, Hp = a.Hp(), Wp = a.Wp();
        return {Tensor<float>({batch, C, Hp, Wp}), Tensor<float>({batch, C, a.S, Wp}), Tensor<float>({batch, C, a.S, Hp})};
    }
};

inline Generator load_generator(const RunConfig& cfg, const fs::path& diffusion_ckpt, const fs::path& ae_ckpt) {
    const Checkpoint dck = load_checkpoint(diffusion_ckpt);
    if (dck.kind != "diffusion") throw CheckpointError(diffusion_ckpt.string() + " is not a diffusion checkpoint");
    const auto sched = cfg.schedule();
    require_schedule(dck, sched, diffusion_ckpt.string());
    if (dck.config.at("diffusion").at("model") != to_json(cfg.diffusion.model))
        throw CheckpointError("denoiser in " + diffusion_ckpt.string() + " (" + dck.config.at("diffusion").at("model").dump() +
                              ") does not match the run config (" + to_json(cfg.diffusion.model).dump() + ")");
    const Checkpoint ack = load_checkpoint(ae_ckpt);
    require_autoencoder(ack, cfg, ae_ckpt.string());
    Generator g{cfg, sched, load_autoencoder(ack), make_denoiser(cfg)};
    get_params(dck, "denoiser/", g.denoiser.params());
    return g;
}

}  // namespace pvdm::app
