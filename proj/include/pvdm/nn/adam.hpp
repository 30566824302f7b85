#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pvdm/nn/params.hpp"

namespace pvdm::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
};

/// Adam over every trainable parameter of a store. Moments are keyed by
/// parameter name so they serialize alongside the weights.
template <typename T>
class Adam {
public:
    Adam(ParamStore<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
        for (const auto& [name, v] : params.all()) {
            if (!v.requires_grad()) continue;
            m_.emplace(name, Tensor<T>(v.shape()));
            v_.emplace(name, Tensor<T>(v.shape()));
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int64_t steps() const { return step_; }

    /// Returns the pre-clip global gradient norm.
    double step() {
        ++step_;
        double sq = 0;
        for (auto& [name, v] : params_->all()) {
            if (!v.requires_grad() || !v.has_grad()) continue;
            for (T g : v.grad().values()) sq += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(sq);
        const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& [name, v] : params_->all()) {
            if (!v.requires_grad() || !v.has_grad()) continue;
            Tensor<T>& m = m_.at(name);
            Tensor<T>& s = v_.at(name);
            Tensor<T>& w = v.mutable_value();
            const Tensor<T>& g = v.grad();
            for (int64_t i = 0; i < w.numel(); ++i) {
                const double gi = static_cast<double>(g[i]) * clip;
                m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
                s[i] = static_cast<T>(cfg_.beta2 * s[i] + (1 - cfg_.beta2) * gi * gi);
                const double mhat = m[i] / bc1;
                const double vhat = s[i] / bc2;
                double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
                if (cfg_.weight_decay > 0) upd += cfg_.weight_decay * w[i];
                w[i] = static_cast<T>(w[i] - cfg_.lr * upd);
            }
        }
        params_->zero_grad();
        return norm;
    }

    std::map<std::string, Tensor<T>>& first_moments() { return m_; }
    std::map<std::string, Tensor<T>>& second_moments() { return v_; }
    const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
    const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }
    void set_steps(int64_t s) { step_ = s; }

private:
    ParamStore<T>* params_;
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace pvdm::nn
