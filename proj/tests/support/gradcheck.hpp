#pragma once

// Finite-difference oracle for reverse-mode gradients. Test-only: it never
// calls into backward() for the numeric side.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pvdm/nn/params.hpp"
#include "pvdm/tensor/autograd.hpp"

namespace pvdm::testing {

struct GradCheckReport {
    int probed = 0;
    int passed = 0;
    double worst = 0.0;

    double pass_rate() const { return probed ? static_cast<double>(passed) / probed : 0.0; }
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Samples `coords` parameter coordinates uniformly across `params`, compares
/// the analytic gradient of `loss` with a central difference.
inline GradCheckReport gradcheck(const std::function<Var<double>()>& loss, std::vector<Var<double>> params, int coords,
                                 uint64_t seed, double tol = 1e-3, double h = 1e-6) {
    for (auto& p : params) p.zero_grad();
    Var<double> l = loss();
    backward(l);
    std::vector<Tensor<double>> analytic;
    int64_t total = 0;
    for (auto& p : params) {
        analytic.push_back(p.has_grad() ? p.grad() : Tensor<double>(p.shape()));
        total += p.numel();
    }
    for (auto& p : params) p.zero_grad();

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    GradCheckReport rep;
    for (int c = 0; c < coords; ++c) {
        int64_t flat = pick(rng);
        size_t which = 0;
        while (flat >= params[which].numel()) flat -= params[which++].numel();
        double& w = params[which].mutable_value()[flat];
        const double saved = w;
        double lp, lm;
        {
            NoGradGuard ng;
            w = saved + h;
            lp = loss().item();
            w = saved - h;
            lm = loss().item();
            w = saved;
        }
        const double numeric = (lp - lm) / (2 * h);
        const double err = relative_error(analytic[which][flat], numeric);
        rep.probed++;
        rep.passed += err <= tol ? 1 : 0;
        rep.worst = std::max(rep.worst, err);
    }
    return rep;
}

template <typename T>
std::vector<Var<T>> trainable(const ParamStore<T>& store) {
    std::vector<Var<T>> out;
    for (const auto& [_, v] : store.all())
        if (v.requires_grad()) out.push_back(v);
    return out;
}

}  // namespace pvdm::testing
