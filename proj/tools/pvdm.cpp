#include <CLI11.hpp>

#include <iostream>

#include "pvdm/app/commands.hpp"

using namespace pvdm;
using namespace pvdm::app;

namespace {

struct Common {
    std::string config, preset, output_root;
    std::vector<std::string> sets;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "JSON config file (merged over its preset)");
    cmd->add_option("-p,--preset", c.preset, "Start from a named preset");
    cmd->add_option("--set", c.sets, "Override a config key, e.g. --set ae_train.lr=1e-4");
    cmd->add_option("-o,--output-root", c.output_root, "Directory holding run directories");
    cmd->add_option("--run-seed", c.seed, "Override the run seed");
}

// "a.b.c=value" -> {"a":{"b":{"c":value}}}; the value is parsed as JSON when possible.
nlohmann::json set_patch(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    nlohmann::json value;
    const std::string raw = kv.substr(eq + 1);
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    std::vector<std::string> keys;
    std::stringstream ss(kv.substr(0, eq));
    for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) value = nlohmann::json{{*it, value}};
    return value;
}

RunConfig resolve(const Common& c) {
    nlohmann::json doc = nlohmann::json::object();
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw ConfigError("cannot open config file " + c.config);
        doc = parse_config_text(std::string(std::istreambuf_iterator<char>(in), {}), c.config);
    }
    if (!c.preset.empty()) doc["preset"] = c.preset;
    for (const auto& s : c.sets) doc.merge_patch(set_patch(s));
    if (c.seed >= 0) doc["seed"] = c.seed;
    return resolve_config(doc);
}

void print(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Projected latent video diffusion: train, sample and evaluate"};
    app.require_subcommand(1);

    Common common;
    bool resume = false;
    double budget = 0;
    std::string ae_ckpt;

    auto* show = app.add_subcommand("config", "Print the resolved config");
    add_common(show, common);

    auto* train_ae = app.add_subcommand("train-ae", "Train the triplane autoencoder");
    add_common(train_ae, common);
    train_ae->add_flag("--resume", resume, "Continue from the run's last checkpoint");
    train_ae->add_option("--time-budget", budget, "Stop after this many seconds of training");

    auto* train_diff = app.add_subcommand("train-diffusion", "Train the latent denoiser");
    add_common(train_diff, common);
    train_diff->add_flag("--resume", resume, "Continue from the run's last checkpoint");
    train_diff->add_option("--time-budget", budget, "Stop after this many seconds of training");
    train_diff->add_option("--ae-checkpoint", ae_ckpt, "Autoencoder checkpoint (default: the run's best)");

    std::string mode;
    int64_t steps_init = -1, steps_cond = -1, clips = -1;
    int64_t sample_seed = -1;
    double eta = -1;
    std::string sampler_preset;
    auto add_sampler = [&](CLI::App* cmd) {
        cmd->add_option("--mode", mode, "ddpm or ddim")->check(CLI::IsMember({"ddpm", "ddim"}));
        cmd->add_option("--steps-init", steps_init, "Denoising steps for the first clip");
        cmd->add_option("--steps-cond", steps_cond, "Denoising steps for each conditioned clip");
        cmd->add_option("--eta", eta, "DDIM stochasticity");
        cmd->add_option("--seed", sample_seed, "Sampling seed");
        cmd->add_option("--sampler-preset", sampler_preset, "Named step pair, e.g. 100/20-s");
    };
    auto* sample = app.add_subcommand("sample", "Generate a long video clip by clip");
    add_common(sample, common);
    add_sampler(sample);
    sample->add_option("--clips", clips, "Number of chained clips");

    auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
    eval->require_subcommand(1);
    auto* recon = eval->add_subcommand("recon", "Autoencoder PSNR and R-FVD");
    add_common(recon, common);
    auto* gen = eval->add_subcommand("gen", "FVD of generated clips");
    add_common(gen, common);
    add_sampler(gen);
    bool no_timing = false;
    auto* profile = eval->add_subcommand("profile", "Triplane vs cubic token cost");
    add_common(profile, common);
    profile->add_flag("--no-timing", no_timing, "Report token counts only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = resolve(common);
        auto apply_sampler = [&] {
            if (!sampler_preset.empty()) {
                const auto p = sampler::find_preset(sampler_preset);
                cfg.sampler.N = p.N;
                cfg.sampler.M = p.M;
                cfg.sampler.mode = sampler::Mode::ddim;
            }
            if (!mode.empty()) cfg.sampler.mode = sampler::parse_mode(mode);
            if (steps_init > 0) cfg.sampler.N = steps_init;
            if (steps_cond > 0) cfg.sampler.M = steps_cond;
            if (clips > 0) cfg.sampler.L = clips;
            if (eta >= 0) cfg.sampler.eta = eta;
            if (sample_seed >= 0) cfg.sampler.seed = static_cast<uint64_t>(sample_seed);
            cfg.sampler.validate(cfg.diffusion.schedule.T);
        };
        if (*show) {
            std::cout << dump_config(cfg);
        } else if (*train_ae) {
            AeTrainOptions opt;
            opt.resume = resume;
            opt.output_root = common.output_root;
            opt.time_budget_s = budget;
            opt.on_eval = [](const AeEvalRecord& r) {
                print({{"step", r.step}, {"psnr", r.psnr}, {"r_fvd", r.r_fvd}});
            };
            AeTrainer t(cfg, opt);
            const auto r = t.run();
            print({{"run_dir", r.run_dir.string()}, {"steps", r.steps}, {"stopped_early", r.stopped_early},
                   {"checkpoint", r.last_checkpoint.string()}});
        } else if (*train_diff) {
            DiffusionTrainOptions opt;
            opt.resume = resume;
            opt.output_root = common.output_root;
            opt.ae_checkpoint = ae_ckpt;
            opt.time_budget_s = budget;
            const int64_t every = cfg.diffusion.train.log_every;
            opt.on_step = [every](int64_t step, double loss) {
                if (step % every == 0) print({{"step", step}, {"loss", loss}});
            };
            DiffusionTrainer t(cfg, opt);
            const auto r = t.run();
            print({{"run_dir", r.run_dir.string()}, {"steps", r.steps}, {"checkpoint", r.checkpoint.string()}});
        } else if (*sample) {
            apply_sampler();
            const auto r = run_sample(cfg, common.output_root);
            print({{"frames", r.video.frames.dim(1)}, {"dir", r.out_dir.string()}});
        } else if (*recon) {
            for (const auto& rec : run_eval_recon(cfg, common.output_root)) print(rec);
        } else if (*gen) {
            apply_sampler();
            for (const auto& rec : run_eval_gen(cfg, common.output_root)) print(rec);
        } else if (*profile) {
            std::cout << run_eval_profile(cfg, common.output_root, !no_timing).dump(2) << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
