#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "pvdm/app/checkpoint.hpp"
#include "pvdm/app/datasets.hpp"
#include "pvdm/app/run_dir.hpp"
#include "pvdm/autoencoder/model.hpp"
#include "pvdm/eval/fvd.hpp"
#include "pvdm/losses/objective.hpp"
#include "pvdm/nn/adam.hpp"

namespace pvdm::app {

struct AeEvalRecord {
    int64_t step = 0;
    double psnr = 0;   // over every training clip
    double r_fvd = 0;  // over the evaluation protocol clips
};

struct AeTrainOptions {
    bool resume = false;
    std::string output_root;      // overrides config / environment
    double time_budget_s = 0;     // stop (and checkpoint) after this much training time; 0 = none
    std::function<void(const AeEvalRecord&)> on_eval;
};

struct AeTrainResult {
    fs::path run_dir, last_checkpoint, best_checkpoint;
    int64_t steps = 0;
    double final_loss = 0;
    bool stopped_early = false;
    bool out_of_time = false;
    std::vector<AeEvalRecord> history;
};

/// Learning rate with linear warmup.
inline double warmup_lr(double lr, int64_t warmup, int64_t step) {
    return warmup > 0 ? lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup)) : lr;
}

/// Sample indices of training step `step`: consecutive slices of per-epoch
/// permutations keyed by (seed, epoch), so resuming needs only the step.
inline std::vector<int64_t> batch_indices(uint64_t seed, int64_t n, int64_t batch, int64_t step) {
    std::vector<int64_t> out;
    std::vector<int64_t> order;
    int64_t cached_epoch = -1;
    for (int64_t k = step * batch; k < (step + 1) * batch; ++k) {
        const int64_t epoch = k / n;
        if (epoch != cached_epoch) {
            order.resize(static_cast<size_t>(n));
            std::iota(order.begin(), order.end(), int64_t{0});
            Rng rng = derive_rng(seed, {0xBA7C, static_cast<uint64_t>(epoch)});
            std::shuffle(order.begin(), order.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(order[static_cast<size_t>(k % n)]);
    }
    return out;
}

/// Mean-squared-error PSNR of reconstructions over a clip tensor.
inline double reconstruction_psnr(const ae::TriplaneAutoencoder<float>& model, const Tensor<float>& clips) {
    return eval::psnr(model.decode_tensor(model.encode_tensor(clips)), clips);
}

class AeTrainer {
public:
    AeTrainer(RunConfig cfg, AeTrainOptions opt = {})
        : cfg_(std::move(cfg)),
          opt_(std::move(opt)),
          model_(cfg_.autoencoder, cfg_.seed),
          perceptual_(cfg_.seed, cfg_.losses.perceptual_channels),
          disc_({cfg_.losses.disc_channels, 0.2}, cfg_.seed),
          extractor_(cfg_.evaluation.extractor_seed, cfg_.evaluation.extractor_channels),
          gan_(cfg_.losses),
          stopper_(cfg_.ae_train.patience) {
        cfg_.validate();
        nn::AdamConfig ac{.lr = cfg_.ae_train.lr, .grad_clip = cfg_.ae_train.grad_clip};
        opt_ae_.emplace(model_.params(), ac);
        // Low-momentum betas keep the hinge critic from oscillating.
        nn::AdamConfig dc = ac;
        dc.beta1 = 0.5;
        dc.beta2 = 0.9;
        opt_disc_.emplace(disc_.params(), dc);
    }

    const ae::TriplaneAutoencoder<float>& model() const { return model_; }

    AeTrainResult run() {
        AeTrainResult res;
        res.run_dir = prepare_run_dir(cfg_, opt_.output_root);
        res.last_checkpoint = res.run_dir / "ae_last.ckpt";
        res.best_checkpoint = res.run_dir / "ae_best.ckpt";
        const auto ds = open_dataset(cfg_);
        write_text(res.run_dir / "dataset_manifest.txt", data::dataset_manifest(ds));
        const Tensor<float> train = all_clips(ds);
        const auto eval_refs = data::eval_clip_protocol(ds, static_cast<size_t>(cfg_.ae_train.eval_clips), cfg_.autoencoder.S,
                                                        cfg_.seed, true);
        const Tensor<float> eval_clips = data::stack_clips(eval_refs);

        int64_t step = 0;
        if (opt_.resume) {
            step = restore(load_checkpoint(res.last_checkpoint), res);
        }
        JsonlLog log(res.run_dir / "ae_train.jsonl", opt_.resume);
        const auto& t = cfg_.ae_train;
        const auto t0 = std::chrono::steady_clock::now();
        double last_loss = 0;
        bool stop = stopper_.state().stop;
        for (; step < t.steps && !stop; ++step) {
            if (opt_.time_budget_s > 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > opt_.time_budget_s) {
                res.out_of_time = true;
                break;
            }
            const auto idx = batch_indices(cfg_.seed, train.dim(0), t.batch, step);
            Var<float> x = Var<float>::constant(gather_rows(train, idx));
            Var<float> recon = model_.reconstruct(x);
            const double lambda2 = gan_.lambda2();
            auto terms = losses::ae_total_loss(x, recon, cfg_.losses.lambda1, lambda2, perceptual_,
                                               lambda2 > 0 ? &disc_ : nullptr);
            backward(terms.total);
            const double lr = warmup_lr(t.lr, t.warmup, step);
            opt_ae_->set_lr(lr);
            const double gnorm = opt_ae_->step();
            double d_loss = 0;
            if (gan_.active()) {
                Var<float> dl = losses::discriminator_loss(disc_, x, recon);
                d_loss = dl.item();
                backward(dl);
                opt_disc_->set_lr(lr);
                opt_disc_->step();
            }
            gan_.observe(step, terms.pixel + cfg_.losses.lambda1 * terms.perceptual);
            last_loss = terms.total.item();
            if (step % t.log_every == 0) {
                log.write({{"step", step},
                           {"loss", last_loss},
                           {"pixel", terms.pixel},
                           {"perceptual", terms.perceptual},
                           {"generator", terms.generator},
                           {"lambda2", terms.lambda2},
                           {"d_loss", d_loss},
                           {"lr", lr},
                           {"grad_norm", gnorm}});
            }
            const int64_t done = step + 1;
            if (done % t.eval_every == 0 || done == t.steps) {
                AeEvalRecord rec = evaluate(done, train, eval_clips);
                res.history.push_back(rec);
                const auto d = stopper_.observe(done, rec.r_fvd);
                log.write({{"step", done},
                           {"kind", "eval"},
                           {"psnr", rec.psnr},
                           {"r_fvd", rec.r_fvd},
                           {"best_step", d.best_step},
                           {"improved", d.improved}});
                if (d.improved) save_checkpoint(res.best_checkpoint, snapshot(done, res.history));
                if (opt_.on_eval) opt_.on_eval(rec);
                stop = d.stop;
                res.stopped_early = d.stop;
            }
            if (done % t.checkpoint_every == 0) save_checkpoint(res.last_checkpoint, snapshot(done, res.history));
        }
        save_checkpoint(res.last_checkpoint, snapshot(step, res.history));
        res.steps = step;
        res.final_loss = last_loss;
        return res;
    }

    AeEvalRecord evaluate(int64_t step, const Tensor<float>& train, const Tensor<float>& eval_clips) const {
        AeEvalRecord r;
        r.step = step;
        r.psnr = reconstruction_psnr(model_, train);
        r.r_fvd = eval::r_fvd(eval_clips, [&](const Tensor<float>& x) { return model_.decode_tensor(model_.encode_tensor(x)); },
                              extractor_);
        return r;
    }

private:
    Checkpoint snapshot(int64_t step, const std::vector<AeEvalRecord>& history) const {
        Checkpoint ck;
        ck.kind = "autoencoder";
        ck.config = to_json(cfg_);
        ck.step = step;
        put_params(ck, "ae/", model_.params());
        put_params(ck, "disc/", disc_.params());
        put_params(ck, "perceptual/", perceptual_.params());
        put_adam(ck, "adam.ae/", *opt_ae_);
        put_adam(ck, "adam.disc/", *opt_disc_);
        ck.state["rng"] = {{"seed", cfg_.seed}, {"counter", step}};
        ck.state["gan_fired_at"] = gan_.fired_at() ? nlohmann::json(*gan_.fired_at()) : nlohmann::json(nullptr);
        const auto& es = stopper_.state();
        ck.state["early_stop"] = {{"best_step", es.best_step},
                                  {"best_value", es.best_step >= 0 ? es.best_value : -1.0},
                                  {"non_improving", es.non_improving},
                                  {"stop", es.stop}};
        nlohmann::json h = nlohmann::json::array();
        for (const auto& r : history) h.push_back({{"step", r.step}, {"psnr", r.psnr}, {"r_fvd", r.r_fvd}});
        ck.state["history"] = h;
        return ck;
    }

    int64_t restore(const Checkpoint& ck, AeTrainResult& res) {
        if (ck.kind != "autoencoder") throw CheckpointError("expected an autoencoder checkpoint, found '" + ck.kind + "'");
        if (ck.config != to_json(cfg_))
            throw CheckpointError("resume config differs from the checkpoint's config; rerun from the persisted config.json");
        get_params(ck, "ae/", model_.params());
        get_params(ck, "disc/", disc_.params());
        get_adam(ck, "adam.ae/", *opt_ae_);
        get_adam(ck, "adam.disc/", *opt_disc_);
        if (!ck.state.at("gan_fired_at").is_null()) gan_.force(ck.state.at("gan_fired_at").get<int64_t>());
        const auto& es = ck.state.at("early_stop");
        losses::EarlyStopDecision d;
        d.best_step = es.at("best_step").get<int64_t>();
        if (d.best_step >= 0) d.best_value = es.at("best_value").get<double>();
        d.non_improving = es.at("non_improving").get<int>();
        d.stop = es.at("stop").get<bool>();
        stopper_.restore(d);
        for (const auto& r : ck.state.at("history"))
            res.history.push_back({r.at("step").get<int64_t>(), r.at("psnr").get<double>(), r.at("r_fvd").get<double>()});
        return ck.step;
    }

    RunConfig cfg_;
    AeTrainOptions opt_;
    ae::TriplaneAutoencoder<float> model_;
    losses::PerceptualExtractor<float> perceptual_;
    losses::Discriminator<float> disc_;
    eval::ToyVideoExtractor extractor_;
    losses::GanSwitch gan_;
    losses::EarlyStopMonitor stopper_;
    std::optional<nn::Adam<float>> opt_ae_, opt_disc_;
};

/// Compatibility gate: the checkpoint must carry exactly `cfg`'s autoencoder.
inline void require_autoencoder(const Checkpoint& ck, const RunConfig& cfg, const std::string& origin) {
    if (ck.kind != "autoencoder") throw CheckpointError(origin + " is a '" + ck.kind + "' checkpoint, not an autoencoder");
    const auto have = ck.config.at("autoencoder"), want = to_json(cfg.autoencoder);
    if (have != want)
        throw CheckpointError("autoencoder in " + origin + " (" + have.dump() + ") does not match the run config (" +
                              want.dump() + ")");
}

inline ae::TriplaneAutoencoder<float> load_autoencoder(const Checkpoint& ck) {
    RunConfig c;
    from_json(ck.config.at("autoencoder"), c.autoencoder);
    ae::TriplaneAutoencoder<float> m(c.autoencoder, 0);
    get_params(ck, "ae/", m.params());
    return m;
}

}  // namespace pvdm::app
