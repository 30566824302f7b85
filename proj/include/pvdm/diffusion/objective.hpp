#pragma once

#include <random>
#include <string>
#include <vector>

#include "pvdm/diffusion/denoiser.hpp"
#include "pvdm/diffusion/schedule.hpp"

namespace pvdm::diffusion {

enum class JointMode { both_branches, bernoulli };

inline const char* to_string(JointMode m) { return m == JointMode::both_branches ? "both_branches" : "bernoulli"; }

inline JointMode parse_joint_mode(const std::string& s) {
    if (s == "both_branches") return JointMode::both_branches;
    if (s == "bernoulli") return JointMode::bernoulli;
    throw ConfigError("unknown joint_mode '" + s + "'");
}

template <typename T>
ae::Triplane<Var<T>> constant_planes(const ae::Triplane<Tensor<T>>& z) {
    return {Var<T>::constant(z.s), Var<T>::constant(z.h), Var<T>::constant(z.w)};
}

/// Mean squared error over every scalar of the three planes.
template <typename T>
Var<T> planes_mse(const ae::Triplane<Var<T>>& a, const ae::Triplane<Var<T>>& b) {
    const int64_t total = a.s.numel() + a.h.numel() + a.w.numel();
    Var<T> out;
    for (int p = 0; p < 3; ++p) {
        Var<T> term = scale(mean_sq_diff(a[p], b[p]), static_cast<T>(a[p].numel()) / static_cast<T>(total));
        out = p == 0 ? term : add(out, term);
    }
    return out;
}

template <typename T>
struct DiffusionLoss {
    Var<T> loss;
    std::vector<bool> conditional;  // bernoulli mode: branch drawn per sample
};

/// Joint objective on a clip pair: z_t is the noised second latent; the
/// conditional branch sees the first latent, the null branch sees zeros.
/// both_branches returns lambda * L_cond + (1 - lambda) * L_null; bernoulli
/// draws the conditional branch per sample with probability lambda.
template <typename T, typename Denoiser>
DiffusionLoss<T> diffusion_loss(const Denoiser& model, const ae::Triplane<Tensor<T>>& z_prev,
                                const ae::Triplane<Tensor<T>>& z_next, const std::vector<int64_t>& t,
                                const ae::Triplane<Tensor<T>>& eps, const NoiseSchedule& sched, double lambda,
                                JointMode mode = JointMode::both_branches, Rng* rng = nullptr) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("joint weight lambda must lie in (0, 1)");
    require_same_planes(z_prev, z_next, "diffusion_loss");
    auto zt = constant_planes(q_sample(z_next, t, eps, sched));
    auto target = constant_planes(eps);
    DiffusionLoss<T> out;
    if (mode == JointMode::both_branches) {
        auto cond = constant_planes(z_prev);
        Var<T> lc = planes_mse(model(zt, &cond, t), target);
        Var<T> ln = planes_mse(model(zt, nullptr, t), target);
        out.loss = add(scale(lc, static_cast<T>(lambda)), scale(ln, static_cast<T>(1.0 - lambda)));
        return out;
    }
    if (!rng) throw std::invalid_argument("bernoulli joint mode needs an RNG");
    const int64_t B = z_next.s.dim(0);
    std::bernoulli_distribution coin(lambda);
    ae::Triplane<Tensor<T>> mixed = z_prev;
    for (int64_t b = 0; b < B; ++b) {
        const bool c = coin(*rng);
        out.conditional.push_back(c);
        if (c) continue;
        for (int p = 0; p < 3; ++p) {
            const int64_t n = mixed[p].numel() / B;
            std::fill(mixed[p].data() + b * n, mixed[p].data() + (b + 1) * n, T(0));
        }
    }
    auto cond = constant_planes(mixed);
    out.loss = planes_mse(model(zt, &cond, t), target);
    return out;
}

}  // namespace pvdm::diffusion
