#pragma once

#include <algorithm>
#include <chrono>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "pvdm/autoencoder/config.hpp"
#include "pvdm/diffusion/denoiser.hpp"

namespace pvdm::eval {

struct StageTokens {
    int stage = 0;
    int64_t factor = 1;
    int64_t triplane = 0;
    int64_t cubic = 0;
};

struct TokenReport {
    int64_t S = 0, Hp = 0, Wp = 0;
    std::vector<StageTokens> stages;
    double token_ratio = 0;           // cubic / triplane at full latent resolution
    double attention_cost_ratio = 0;  // square of token_ratio
    bool measured = false;
    int64_t batch = 0;
    int repeats = 0;
    double triplane_ms = 0, cubic_ms = 0;
    double speedup = 0;  // cubic_ms / triplane_ms
};

/// Tokens entering joint attention at downsampling factor f.
inline int64_t triplane_tokens(int64_t S, int64_t Hp, int64_t Wp, int64_t f) {
    return (Hp / f) * (Wp / f) + (S / f) * (Wp / f) + (S / f) * (Hp / f);
}

/// A cubic latent keeps every frame and downsamples space only.
inline int64_t cubic_tokens(int64_t S, int64_t Hp, int64_t Wp, int64_t f) { return S * (Hp / f) * (Wp / f); }

struct ProfileOptions {
    bool measure = true;
    int64_t batch = 1;
    int repeats = 5;
    uint64_t seed = 0;
};

namespace detail {

template <typename F>
double median_ms(F&& f, int repeats) {
    f();  // warm-up
    std::vector<double> ms;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
}

}  // namespace detail

/// Token accounting per U-Net stage and, optionally, forward latency of the
/// triplane denoiser against a matched-width cubic-token reference.
inline TokenReport profile_token_costs(const ae::AutoencoderConfig& ae_cfg, const diffusion::DenoiserConfig& den_cfg,
                                       const ProfileOptions& opt = {}) {
    ae_cfg.validate();
    den_cfg.validate();
    TokenReport r;
    r.S = ae_cfg.S;
    r.Hp = ae_cfg.Hp();
    r.Wp = ae_cfg.Wp();
    for (int i = 0; i < den_cfg.stages(); ++i) {
        const int64_t f = int64_t{1} << i;
        r.stages.push_back({i, f, triplane_tokens(r.S, r.Hp, r.Wp, f), cubic_tokens(r.S, r.Hp, r.Wp, f)});
    }
    r.token_ratio = static_cast<double>(r.stages[0].cubic) / static_cast<double>(r.stages[0].triplane);
    r.attention_cost_ratio = r.token_ratio * r.token_ratio;
    if (!opt.measure) return r;

    diffusion::DenoiserConfig dc = den_cfg;
    dc.latent_channels = ae_cfg.C;
    diffusion::TriplaneDenoiser<float> tri(dc, r.S, r.Hp, r.Wp, opt.seed);
    diffusion::CubicDenoiser<float> cub(dc, r.S, r.Hp, r.Wp, opt.seed);
    Rng rng = derive_rng(opt.seed, {0x9F});
    const int64_t B = opt.batch, C = ae_cfg.C;
    ae::Triplane<Tensor<float>> z{Tensor<float>::randn({B, C, r.Hp, r.Wp}, rng), Tensor<float>::randn({B, C, r.S, r.Wp}, rng),
                                  Tensor<float>::randn({B, C, r.S, r.Hp}, rng)};
    Tensor<float> cube = Tensor<float>::randn({B, C, r.S, r.Hp, r.Wp}, rng);
    const std::vector<int64_t> t(static_cast<size_t>(B), 500);
    r.measured = true;
    r.batch = B;
    r.repeats = opt.repeats;
    r.triplane_ms = detail::median_ms([&] { tri.predict(z, nullptr, t); }, opt.repeats);
    r.cubic_ms = detail::median_ms(
        [&] {
            NoGradGuard ng;
            cub(Var<float>::constant(cube), t);
        },
        opt.repeats);
    r.speedup = r.cubic_ms / r.triplane_ms;
    return r;
}

inline nlohmann::json to_json(const TokenReport& r) {
    nlohmann::json j;
    j["geometry"] = {{"S", r.S}, {"H_latent", r.Hp}, {"W_latent", r.Wp}};
    for (const auto& s : r.stages)
        j["stages"].push_back({{"stage", s.stage},
                               {"factor", s.factor},
                               {"triplane_tokens", s.triplane},
                               {"cubic_tokens", s.cubic}});
    j["token_ratio"] = r.token_ratio;
    j["attention_cost_ratio"] = r.attention_cost_ratio;
    if (r.measured) {
        j["latency"] = {{"batch", r.batch},
                        {"repeats", r.repeats},
                        {"triplane_ms", r.triplane_ms},
                        {"cubic_ms", r.cubic_ms},
                        {"speedup", r.speedup}};
    }
    j["machine"] = {{"hardware_threads", std::thread::hardware_concurrency()},
#if defined(__VERSION__)
                    {"compiler", __VERSION__},
#endif
                    {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)}};
    return j;
}

}  // namespace pvdm::eval
