#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pvdm/diffusion/schedule.hpp"
#include "pvdm/errors.hpp"
#include "pvdm/rng.hpp"

namespace pvdm::sampler {

using diffusion::NoiseSchedule;
using Planes = ae::Triplane<Tensor<float>>;

enum class Mode { ddpm, ddim };

inline const char* to_string(Mode m) { return m == Mode::ddpm ? "ddpm" : "ddim"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "ddpm") return Mode::ddpm;
    if (s == "ddim") return Mode::ddim;
    throw ConfigError("unknown sampler mode '" + s + "'");
}

struct SamplerConfig {
    Mode mode = Mode::ddim;
    int64_t N = 100;  // steps for the first, unconditional clip
    int64_t M = 20;   // steps for every later clip
    double eta = 0.0;
    int64_t L = 1;
    uint64_t seed = 0;

    void validate(int64_t T) const {
        if (N < 1 || N > T || M < 1 || M > T)
            throw ConfigError("sampler steps must lie in [1, " + std::to_string(T) + "]");
        if (L < 1) throw ConfigError("clip count L must be >= 1");
        if (eta < 0 || eta > 1) throw ConfigError("eta must lie in [0, 1]");
    }
};

struct SamplerPreset {
    const char* name;
    int64_t N, M;
};

/// Reference (N, M) DDIM step pairs.
inline constexpr SamplerPreset kSamplerPresets[] = {{"100/20-s", 100, 20}, {"200/200-s", 200, 200}, {"400/400-s", 400, 400}};

inline SamplerPreset find_preset(const std::string& name) {
    for (const auto& p : kSamplerPresets)
        if (name == p.name) return p;
    throw ConfigError("unknown sampler preset '" + name + "'");
}

/// Scalar Algorithm-1 update: (z - beta / sqrt(1 - abar) * eps) / sqrt(1 - beta) + sigma * noise.
inline double ddpm_update(double z, double eps, double beta, double abar, double sigma, double noise) {
    return (z - beta / std::sqrt(1.0 - abar) * eps) / std::sqrt(1.0 - beta) + sigma * noise;
}

/// Ancestral step t -> t-1 with sigma_t = sqrt(beta_t). Noise must be zero at t = 1.
template <typename T>
ae::Triplane<Tensor<T>> ddpm_step(const ae::Triplane<Tensor<T>>& zt, const ae::Triplane<Tensor<T>>& eps, int64_t t,
                                  const NoiseSchedule& sched, const ae::Triplane<Tensor<T>>& noise) {
    sched.check_step(t);
    diffusion::require_same_planes(zt, eps, "ddpm_step");
    diffusion::require_same_planes(zt, noise, "ddpm_step");
    const double beta = sched.b(t), abar = sched.abar(t), sigma = sched.sigma[static_cast<size_t>(t)];
    if (t == 1) {
        for (int p = 0; p < 3; ++p)
            if (noise[p].abs_max() != T(0)) throw std::invalid_argument("ddpm_step: noise must be zero at t = 1");
    }
    auto out = diffusion::zeros_like_planes(zt);
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < zt[p].numel(); ++i)
            out[p][i] = static_cast<T>(ddpm_update(zt[p][i], eps[p][i], beta, abar, sigma, noise[p][i]));
    return out;
}

/// Standard eta-parameterized DDIM variance for the jump t -> t_prev.
inline double ddim_sigma(double abar_t, double abar_prev, double eta) {
    return eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * std::sqrt(1.0 - abar_t / abar_prev);
}

inline double ddim_update(double z, double eps, double abar_t, double abar_prev, double eta, double noise) {
    const double x0 = (z - std::sqrt(1.0 - abar_t) * eps) / std::sqrt(abar_t);
    const double s = ddim_sigma(abar_t, abar_prev, eta);
    const double dir = std::max(0.0, 1.0 - abar_prev - s * s);
    return std::sqrt(abar_prev) * x0 + std::sqrt(dir) * eps + s * noise;
}

/// DDIM jump t -> t_prev (t_prev = 0 returns the x0 prediction).
template <typename T>
ae::Triplane<Tensor<T>> ddim_step(const ae::Triplane<Tensor<T>>& zt, const ae::Triplane<Tensor<T>>& eps, int64_t t,
                                  int64_t t_prev, const NoiseSchedule& sched, double eta,
                                  const ae::Triplane<Tensor<T>>* noise = nullptr) {
    sched.check_step(t);
    if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddim_step: need 0 <= t_prev < t");
    if (eta < 0 || eta > 1) throw std::invalid_argument("ddim_step: eta outside [0, 1]");
    diffusion::require_same_planes(zt, eps, "ddim_step");
    if (noise) diffusion::require_same_planes(zt, *noise, "ddim_step");
    const double at = sched.abar(t), ap = sched.abar(t_prev);
    auto out = diffusion::zeros_like_planes(zt);
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < zt[p].numel(); ++i)
            out[p][i] = static_cast<T>(ddim_update(zt[p][i], eps[p][i], at, ap, eta, noise ? (*noise)[p][i] : 0.0));
    return out;
}

/// n evenly spaced steps from 1 to T inclusive, ascending.
inline std::vector<int64_t> step_sequence(int64_t T, int64_t n) {
    if (n < 1 || n > T) throw ConfigError("step count " + std::to_string(n) + " outside [1, " + std::to_string(T) + "]");
    if (n == 1) return {T};
    std::vector<int64_t> seq;
    for (int64_t i = 0; i < n; ++i)
        seq.push_back(1 + std::llround(static_cast<double>(T - 1) * static_cast<double>(i) / static_cast<double>(n - 1)));
    return seq;
}

/// Schedule over a step subsequence: beta'_k = 1 - abar(seq_k) / abar(seq_{k-1}).
inline NoiseSchedule respaced_schedule(const NoiseSchedule& sched, const std::vector<int64_t>& seq) {
    std::vector<double> betas;
    double prev = 1.0;
    for (int64_t t : seq) {
        betas.push_back(1.0 - sched.abar(t) / prev);
        prev = sched.abar(t);
    }
    return diffusion::make_schedule_from_betas(betas);
}

/// eps prediction for z_t at step t given a condition (nullptr = null).
using EpsFn = std::function<Planes(const Planes& zt, const Planes* cond, int64_t t)>;

/// Reverse process from z_T ~ N(0, I) to z_0 with `steps` denoiser calls.
/// `like` fixes the plane shapes.
inline Planes sample_clip(const EpsFn& eps_fn, const NoiseSchedule& sched, const Planes* cond, int64_t steps, Mode mode,
                          double eta, Rng& rng, const Planes& like) {
    Planes z = diffusion::randn_like_planes(like, rng);
    const auto seq = step_sequence(sched.T, steps);
    if (mode == Mode::ddim) {
        for (size_t k = seq.size(); k-- > 0;) {
            const int64_t t = seq[k], t_prev = k == 0 ? 0 : seq[k - 1];
            Planes eps = eps_fn(z, cond, t);
            if (eta > 0 && t_prev > 0) {
                Planes noise = diffusion::randn_like_planes(like, rng);
                z = ddim_step(z, eps, t, t_prev, sched, eta, &noise);
            } else {
                z = ddim_step(z, eps, t, t_prev, sched, eta);
            }
        }
        return z;
    }
    // Ancestral sampling; fewer than T steps runs on the respaced schedule.
    const NoiseSchedule local = steps == sched.T ? sched : respaced_schedule(sched, seq);
    for (size_t k = seq.size(); k-- > 0;) {
        const int64_t t_model = seq[k], t_local = static_cast<int64_t>(k) + 1;
        Planes eps = eps_fn(z, cond, t_model);
        Planes noise = t_local > 1 ? diffusion::randn_like_planes(like, rng) : diffusion::zeros_like_planes(like);
        z = ddpm_step(z, eps, t_local, local, noise);
    }
    return z;
}

using DecodeFn = std::function<Tensor<float>(const Planes&)>;

struct LongVideo {
    Tensor<float> frames;                   // [3, L*S, H, W]
    std::vector<Planes> latents;            // z_0 of every clip
    std::vector<std::optional<Planes>> conditions;  // condition handed to each clip
    std::vector<std::pair<int64_t, int64_t>> reads;  // (clip, clip whose latent it read)
};

/// Clip 1 unconditionally with N steps, each later clip conditioned on its
/// predecessor's z_0 with M steps. Clip l draws noise from (seed, l) only.
inline LongVideo generate_long_video(const EpsFn& eps_fn, const DecodeFn& decode, const NoiseSchedule& sched,
                                     const SamplerConfig& cfg, const Planes& like) {
    cfg.validate(sched.T);
    LongVideo out;
    std::vector<Tensor<float>> clips;
    for (int64_t l = 0; l < cfg.L; ++l) {
        Rng rng = derive_rng(cfg.seed, {static_cast<uint64_t>(l)});
        const Planes* cond = nullptr;
        if (l > 0) {
            cond = &out.latents[static_cast<size_t>(l - 1)];
            out.reads.emplace_back(l, l - 1);
        }
        out.conditions.push_back(cond ? std::optional<Planes>(*cond) : std::nullopt);
        Planes z = sample_clip(eps_fn, sched, cond, l == 0 ? cfg.N : cfg.M, cfg.mode, cfg.eta, rng, like);
        out.latents.push_back(std::move(z));
        Tensor<float> x = decode(out.latents.back());  // [1, 3, S, H, W]
        for (float& v : x.values()) v = std::clamp(v, -1.0f, 1.0f);
        clips.push_back(x.reshaped({x.dim(1), x.dim(2), x.dim(3), x.dim(4)}));
    }
    std::vector<const Tensor<float>*> parts;
    for (const auto& c : clips) parts.push_back(&c);
    out.frames = concat(parts, 1);
    return out;
}

}  // namespace pvdm::sampler
