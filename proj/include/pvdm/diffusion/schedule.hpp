#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "pvdm/autoencoder/latent.hpp"
#include "pvdm/errors.hpp"

namespace pvdm::diffusion {

/// beta, alpha_bar and sigma tables, 1-indexed by timestep (index 0 holds
/// the t = 0 convention alpha_bar_0 = 1, beta_0 = 0).
struct NoiseSchedule {
    int64_t T = 0;
    double start = 0, end = 0;
    std::vector<double> beta, alpha_bar, sigma;

    double b(int64_t t) const { return beta.at(static_cast<size_t>(t)); }
    double abar(int64_t t) const { return alpha_bar.at(static_cast<size_t>(t)); }

    void check_step(int64_t t) const {
        if (t < 1 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }

    bool operator==(const NoiseSchedule& o) const { return T == o.T && start == o.start && end == o.end && beta == o.beta; }
};

inline NoiseSchedule make_linear_schedule(int64_t T, double start, double end) {
    if (T < 1) throw ConfigError("schedule needs T >= 1");
    if (!(start > 0 && start <= end && end < 1)) throw ConfigError("schedule needs 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = T;
    s.start = start;
    s.end = end;
    s.beta.assign(static_cast<size_t>(T + 1), 0.0);
    s.alpha_bar.assign(static_cast<size_t>(T + 1), 1.0);
    s.sigma.assign(static_cast<size_t>(T + 1), 0.0);
    for (int64_t t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const double beta = t == T ? end : start + (end - start) * frac;
        s.beta[static_cast<size_t>(t)] = beta;
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - beta);
        s.sigma[static_cast<size_t>(t)] = std::sqrt(beta);
    }
    return s;
}

/// Schedule with explicit betas (tests and respaced samplers).
inline NoiseSchedule make_schedule_from_betas(const std::vector<double>& betas) {
    NoiseSchedule s;
    s.T = static_cast<int64_t>(betas.size());
    if (s.T < 1) throw ConfigError("schedule needs at least one beta");
    s.start = betas.front();
    s.end = betas.back();
    s.beta.assign(1, 0.0);
    s.alpha_bar.assign(1, 1.0);
    s.sigma.assign(1, 0.0);
    for (double b : betas) {
        if (!(b > 0 && b < 1)) throw ConfigError("betas must lie in (0, 1)");
        s.beta.push_back(b);
        s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - b));
        s.sigma.push_back(std::sqrt(b));
    }
    return s;
}

using Planes = ae::Triplane<Tensor<float>>;

template <typename T>
void require_same_planes(const ae::Triplane<Tensor<T>>& a, const ae::Triplane<Tensor<T>>& b, const char* what) {
    for (int p = 0; p < 3; ++p)
        if (a[p].shape() != b[p].shape()) throw std::invalid_argument(std::string(what) + ": plane shapes differ");
}

template <typename T>
ae::Triplane<Tensor<T>> zeros_like_planes(const ae::Triplane<Tensor<T>>& z) {
    return {Tensor<T>(z.s.shape()), Tensor<T>(z.h.shape()), Tensor<T>(z.w.shape())};
}

template <typename T, typename R>
ae::Triplane<Tensor<T>> randn_like_planes(const ae::Triplane<Tensor<T>>& z, R& rng) {
    return {Tensor<T>::randn(z.s.shape(), rng), Tensor<T>::randn(z.h.shape(), rng), Tensor<T>::randn(z.w.shape(), rng)};
}

/// out = a * x + b * y, plane-wise; computed in double per element.
template <typename T>
ae::Triplane<Tensor<T>> affine_planes(double a, const ae::Triplane<Tensor<T>>& x, double b, const ae::Triplane<Tensor<T>>& y) {
    require_same_planes(x, y, "affine_planes");
    ae::Triplane<Tensor<T>> out = zeros_like_planes(x);
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < x[p].numel(); ++i)
            out[p][i] = static_cast<T>(a * static_cast<double>(x[p][i]) + b * static_cast<double>(y[p][i]));
    return out;
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. `t` holds one step per batch element.
template <typename T>
ae::Triplane<Tensor<T>> q_sample(const ae::Triplane<Tensor<T>>& z0, const std::vector<int64_t>& t,
                                 const ae::Triplane<Tensor<T>>& eps, const NoiseSchedule& sched) {
    require_same_planes(z0, eps, "q_sample");
    const int64_t B = z0.s.dim(0);
    if (static_cast<int64_t>(t.size()) != B) throw std::invalid_argument("q_sample: one timestep per batch element");
    ae::Triplane<Tensor<T>> out = zeros_like_planes(z0);
    for (int64_t b = 0; b < B; ++b) {
        sched.check_step(t[static_cast<size_t>(b)]);
        const double ab = sched.abar(t[static_cast<size_t>(b)]);
        const double ca = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
        for (int p = 0; p < 3; ++p) {
            const int64_t n = z0[p].numel() / B;
            for (int64_t i = b * n; i < (b + 1) * n; ++i)
                out[p][i] = static_cast<T>(ca * static_cast<double>(z0[p][i]) + cn * static_cast<double>(eps[p][i]));
        }
    }
    return out;
}

template <typename T>
ae::Triplane<Tensor<T>> q_sample(const ae::Triplane<Tensor<T>>& z0, int64_t t, const ae::Triplane<Tensor<T>>& eps,
                                 const NoiseSchedule& sched) {
    return q_sample(z0, std::vector<int64_t>(static_cast<size_t>(z0.s.dim(0)), t), eps, sched);
}

/// x0 = (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
template <typename T>
ae::Triplane<Tensor<T>> predict_x0(const ae::Triplane<Tensor<T>>& zt, const ae::Triplane<Tensor<T>>& eps, int64_t t,
                                   const NoiseSchedule& sched) {
    sched.check_step(t);
    const double ab = sched.abar(t);
    return affine_planes(1.0 / std::sqrt(ab), zt, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps);
}

}  // namespace pvdm::diffusion
