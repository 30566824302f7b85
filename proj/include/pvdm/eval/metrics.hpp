#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pvdm/tensor/tensor.hpp"

namespace pvdm::eval {

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB for signals in [-1, 1] (peak-to-peak 2), capped for identical inputs.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y) {
    if (x.shape() != y.shape()) throw std::invalid_argument("psnr: shape mismatch");
    double se = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.numel());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

struct FeatureStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    int64_t n = 0;
};

/// Mean and unbiased covariance of the rows of `f` ([N, D]).
inline FeatureStats feature_stats(const Eigen::MatrixXd& f) {
    if (f.rows() < 2) throw std::invalid_argument("feature_stats: need at least two samples");
    if (!f.allFinite()) throw std::invalid_argument("feature_stats: non-finite features");
    FeatureStats s;
    s.n = f.rows();
    s.mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd c = f.rowwise() - s.mu.transpose();
    s.sigma = (c.transpose() * c) / static_cast<double>(f.rows() - 1);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
    return s;
}

struct FrechetOptions {
    double shrinkage = 1e-6;  // added to both covariance diagonals
};

namespace detail {

// Negative eigenvalues are rounding noise and clamp to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().unaryExpr([](double v) { return std::sqrt(std::max(v, 0.0)); });
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)). The trace term uses the
/// symmetric form sqrt(sqrt(Sa) Sb sqrt(Sa)), which has the same spectrum.
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b, const FrechetOptions& opt = {}) {
    const auto D = a.mu.size();
    if (b.mu.size() != D || a.sigma.rows() != D || a.sigma.cols() != D || b.sigma.rows() != D || b.sigma.cols() != D)
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (!a.mu.allFinite() || !b.mu.allFinite() || !a.sigma.allFinite() || !b.sigma.allFinite())
        throw std::invalid_argument("frechet_distance: non-finite statistics");
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(D, D);
    const Eigen::MatrixXd sa = 0.5 * (a.sigma + a.sigma.transpose()) + opt.shrinkage * I;
    const Eigen::MatrixXd sb = 0.5 * (b.sigma + b.sigma.transpose()) + opt.shrinkage * I;
    const Eigen::MatrixXd ra = detail::psd_sqrt(sa);
    const Eigen::MatrixXd cross = detail::psd_sqrt(ra * sb * ra);
    const double d = (a.mu - b.mu).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
    return std::max(0.0, d);
}

/// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < idx.size();) {
        size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

/// Spearman rank correlation (Pearson on average ranks).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// exp(E_x KL(p(y|x) || p(y))) over rows of class probabilities [N, K].
inline double inception_score(const Eigen::MatrixXd& probs) {
    if (probs.rows() < 1) throw std::invalid_argument("inception_score: no samples");
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        if ((probs.row(i).array() < 0).any() || std::abs(probs.row(i).sum() - 1.0) > 1e-6)
            throw std::invalid_argument("inception_score: rows must be probability vectors");
    const Eigen::RowVectorXd marginal = probs.colwise().mean();
    double kl = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
            const double p = probs(i, k);
            if (p > 0) kl += p * (std::log(p) - std::log(marginal(k)));
        }
    return std::exp(kl / static_cast<double>(probs.rows()));
}

}  // namespace pvdm::eval
