#include <gtest/gtest.h>

#include <cmath>

#include "pvdm/diffusion/objective.hpp"
#include "support/gradcheck.hpp"

using namespace pvdm;
using namespace pvdm::diffusion;

namespace {

template <typename T>
using TP = ae::Triplane<Tensor<T>>;

template <typename T>
TP<T> random_planes(int64_t B, int64_t C, int64_t S, int64_t Hp, int64_t Wp, uint64_t seed) {
    Rng rng(seed);
    return {Tensor<T>::randn({B, C, Hp, Wp}, rng), Tensor<T>::randn({B, C, S, Wp}, rng), Tensor<T>::randn({B, C, S, Hp}, rng)};
}

DenoiserConfig tiny_denoiser(int64_t C = 2) {
    DenoiserConfig c;
    c.latent_channels = C;
    c.base_channels = 4;
    c.channel_mult = {1, 2};
    c.res_blocks = 1;
    c.attention_stages = {0, 1};
    c.heads = 2;
    return c;
}

template <typename T>
TP<T> slice_sample(const TP<T>& z, int64_t b) {
    return {slice(z.s, 0, b, 1), slice(z.h, 0, b, 1), slice(z.w, 0, b, 1)};
}

template <typename T>
double max_plane_diff(const TP<T>& a, const TP<T>& b) {
    double m = 0;
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < a[p].numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[p][i] - b[p][i])));
    return m;
}

}  // namespace

TEST(ScheduleTest, ReferenceEndpointsAreExact) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    EXPECT_EQ(s.T, 1000);
    EXPECT_EQ(s.b(1), 0.0015);
    EXPECT_EQ(s.b(1000), 0.0195);
    EXPECT_EQ(s.abar(0), 1.0);
    EXPECT_NEAR(s.abar(1), 0.9985, 1e-15);
    EXPECT_LT(s.abar(1000), 0.01);
    for (int64_t t = 2; t <= 1000; ++t) EXPECT_GT(s.b(t), s.b(t - 1));
}

TEST(ScheduleTest, AlphaBarMatchesLongDoubleProduct) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        const long double beta = 0.0015L + (0.0195L - 0.0015L) * static_cast<long double>(t - 1) / 999.0L;
        prod *= 1.0L - beta;
        ASSERT_NEAR(s.abar(t), static_cast<double>(prod), 1e-12) << "t=" << t;
    }
}

TEST(ScheduleTest, RejectsBadRanges) {
    EXPECT_THROW(make_linear_schedule(0, 0.001, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.03, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.01, 1.0), ConfigError);
    auto s = make_linear_schedule(10, 0.01, 0.02);
    EXPECT_THROW(s.check_step(0), std::out_of_range);
    EXPECT_THROW(s.check_step(11), std::out_of_range);
}

TEST(ForwardProcessTest, ZeroNoiseScalesSignal) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    auto z0 = random_planes<double>(2, 3, 4, 4, 4, 1);
    auto out = q_sample(z0, 500, zeros_like_planes(z0), s);
    const double a = std::sqrt(s.abar(500));
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < z0[p].numel(); ++i) EXPECT_DOUBLE_EQ(out[p][i], a * z0[p][i]);
}

TEST(ForwardProcessTest, MomentsMatchClosedForm) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    const int64_t n = 100000;
    TP<double> z0{Tensor<double>({1, 1, 1, n}), Tensor<double>({1, 1, 1, 1}), Tensor<double>({1, 1, 1, 1})};
    for (int64_t i = 0; i < n; ++i) z0.s[i] = 0.7;
    Rng rng(3);
    for (int64_t t : {1, 250, 1000}) {
        auto zt = q_sample(z0, t, randn_like_planes(z0, rng), s);
        double m = 0, v = 0;
        for (int64_t i = 0; i < n; ++i) m += zt.s[i];
        m /= n;
        for (int64_t i = 0; i < n; ++i) v += (zt.s[i] - m) * (zt.s[i] - m);
        v /= n - 1;
        const double var = 1 - s.abar(t);
        EXPECT_NEAR(m, 0.7 * std::sqrt(s.abar(t)), 5 * std::sqrt(var / n)) << t;
        EXPECT_NEAR(v, var, 5 * var * std::sqrt(2.0 / n)) << t;
    }
}

TEST(ForwardProcessTest, StepwiseChainComposesToMarginal) {
    auto s = make_linear_schedule(10, 0.05, 0.2);
    const int n = 100000;
    Rng rng(4);
    std::normal_distribution<double> g;
    double m = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double x = 1.5;
        for (int t = 1; t <= 10; ++t) x = std::sqrt(1 - s.b(t)) * x + std::sqrt(s.b(t)) * g(rng);
        m += x;
        sq += x * x;
    }
    m /= n;
    const double v = sq / n - m * m, var = 1 - s.abar(10);
    EXPECT_NEAR(m, 1.5 * std::sqrt(s.abar(10)), 5 * std::sqrt(var / n));
    EXPECT_NEAR(v, var, 5 * var * std::sqrt(2.0 / n));
}

TEST(ForwardProcessTest, PredictX0InvertsForwardNoising) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    auto z0 = random_planes<double>(2, 4, 8, 8, 8, 5);
    auto eps = random_planes<double>(2, 4, 8, 8, 8, 6);
    for (int64_t t : {1, 10, 500, 999, 1000}) {
        auto back = predict_x0(q_sample(z0, t, eps, s), eps, t, s);
        EXPECT_LT(max_plane_diff(back, z0), 1e-10) << t;
    }
}

TEST(DenoiserTest, ShapesForStackedAndSeparateGeometry) {
    auto cfg = tiny_denoiser();
    TriplaneDenoiser<float> stacked(cfg, 4, 4, 4, 1);
    auto z = random_planes<float>(2, 2, 4, 4, 4, 7);
    auto y = stacked.predict(z, nullptr, {3, 9});
    for (int p = 0; p < 3; ++p) EXPECT_EQ(y[p].shape(), z[p].shape());

    TriplaneDenoiser<float> separate(cfg, 4, 8, 4, 1);
    auto z2 = random_planes<float>(1, 2, 4, 8, 4, 8);
    auto y2 = separate.predict(z2, &z2, {5});
    for (int p = 0; p < 3; ++p) EXPECT_EQ(y2[p].shape(), z2[p].shape());

    EXPECT_THROW(stacked.predict(z2, nullptr, {5}), std::invalid_argument);
    EXPECT_THROW(TriplaneDenoiser<float>(cfg, 3, 4, 4), ConfigError);
}

TEST(DenoiserTest, OneTrunkServesAllPlanes) {
    auto cfg = tiny_denoiser();
    TriplaneDenoiser<double> m(cfg, 4, 4, 4, 2);
    auto z = random_planes<double>(1, 2, 4, 4, 4, 9);
    auto base = m.predict(z, nullptr, {10});
    // Every plane's output moves when one shared convolution weight moves.
    Var<double> w = m.params().get("unet.conv_in.weight");
    w.mutable_value()[0] += 0.5;
    auto moved = m.predict(z, nullptr, {10});
    for (int p = 0; p < 3; ++p) {
        double d = 0;
        for (int64_t i = 0; i < z[p].numel(); ++i) d = std::max(d, std::abs(moved[p][i] - base[p][i]));
        EXPECT_GT(d, 1e-6) << "plane " << p;
    }
    // And each plane's loss alone sends gradient into that same weight.
    w.mutable_value()[0] -= 0.5;
    for (int p = 0; p < 3; ++p) {
        m.params().zero_grad();
        auto out = m(constant_planes(z), nullptr, {10});
        backward(sum(out[p]));
        EXPECT_GT(w.grad().abs_max(), 0.0) << "plane " << p;
    }
}

TEST(DenoiserTest, AttentionMixesPlanesButNotSamples) {
    auto cfg = tiny_denoiser();
    TriplaneDenoiser<double> m(cfg, 4, 4, 4, 3);
    auto z = random_planes<double>(2, 2, 4, 4, 4, 10);
    auto cond = random_planes<double>(2, 2, 4, 4, 4, 11);
    auto both = m.predict(z, &cond, {7, 300});

    // Each sample alone gives the same answer as inside the batch.
    for (int64_t b = 0; b < 2; ++b) {
        auto zb = slice_sample(z, b), cb = slice_sample(cond, b);
        auto alone = m.predict(zb, &cb, {b == 0 ? 7 : 300});
        EXPECT_LT(max_plane_diff(alone, slice_sample(both, b)), 1e-12);
    }

    // Perturbing the h plane of sample 1 moves sample 1's s plane only.
    auto z2 = z;
    for (int64_t i = z2.h.numel() / 2; i < z2.h.numel(); ++i) z2.h[i] += 1.0;
    auto moved = m.predict(z2, &cond, {7, 300});
    EXPECT_EQ(max_plane_diff(slice_sample(moved, 0), slice_sample(both, 0)), 0.0);
    double ds = 0;
    for (int64_t i = moved.s.numel() / 2; i < moved.s.numel(); ++i) ds = std::max(ds, std::abs(moved.s[i] - both.s[i]));
    EXPECT_GT(ds, 1e-6);
}

TEST(DenoiserTest, NullConditionEqualsExplicitZeros) {
    TriplaneDenoiser<float> m(tiny_denoiser(), 4, 8, 4, 4);
    auto z = random_planes<float>(2, 2, 4, 8, 4, 12);
    auto zeros = zeros_like_planes(z);
    auto a = m.predict(z, nullptr, {1, 1000});
    auto b = m.predict(z, &zeros, {1, 1000});
    EXPECT_EQ(max_plane_diff(a, b), 0.0);
}

TEST(DiffusionLossTest, PerfectPredictorGivesZero) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    auto z1 = random_planes<double>(2, 2, 4, 4, 4, 13), z2 = random_planes<double>(2, 2, 4, 4, 4, 14);
    auto eps = random_planes<double>(2, 2, 4, 4, 4, 15);
    auto oracle = [&](const ae::Triplane<Var<double>>&, const ae::Triplane<Var<double>>*, const std::vector<int64_t>&) {
        return constant_planes(eps);
    };
    EXPECT_EQ(diffusion_loss(oracle, z1, z2, {3, 40}, eps, s, 0.5).loss.item(), 0.0);
}

TEST(DiffusionLossTest, BranchesMixLinearly) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    auto z1 = random_planes<double>(1, 2, 4, 4, 4, 16), z2 = random_planes<double>(1, 2, 4, 4, 4, 17);
    auto eps = random_planes<double>(1, 2, 4, 4, 4, 18);
    // Stub returns 1 with a condition and 0 without, so L_cond and L_null
    // are plain moments of eps.
    auto stub = [&](const ae::Triplane<Var<double>>& zt, const ae::Triplane<Var<double>>* c, const std::vector<int64_t>&) {
        ae::Triplane<Var<double>> out;
        for (int p = 0; p < 3; ++p) {
            Tensor<double> v(zt[p].shape());
            if (c) v.fill(1.0);
            out[p] = Var<double>::constant(v);
        }
        return out;
    };
    double n = 0, lc = 0, ln = 0;
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < eps[p].numel(); ++i, ++n) {
            lc += (1 - eps[p][i]) * (1 - eps[p][i]);
            ln += eps[p][i] * eps[p][i];
        }
    lc /= n;
    ln /= n;
    for (double lam : {0.1, 0.5, 0.999999}) {
        const double got = diffusion_loss(stub, z1, z2, {5}, eps, s, lam).loss.item();
        EXPECT_NEAR(got, lam * lc + (1 - lam) * ln, 1e-12) << lam;
    }
    EXPECT_NEAR(diffusion_loss(stub, z1, z2, {5}, eps, s, 0.999999).loss.item(), lc, 1e-5);
    EXPECT_THROW(diffusion_loss(stub, z1, z2, {5}, eps, s, 1.0), ConfigError);
    EXPECT_THROW(diffusion_loss(stub, z1, z2, {5}, eps, s, 0.0), ConfigError);
}

TEST(DiffusionLossTest, BernoulliBranchFrequency) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    const int64_t B = 10000;
    TP<float> z1{Tensor<float>({B, 1, 1, 1}), Tensor<float>({B, 1, 1, 1}), Tensor<float>({B, 1, 1, 1})};
    z1.s.fill(1.0f);
    z1.h.fill(1.0f);
    z1.w.fill(1.0f);
    auto z2 = zeros_like_planes(z1), eps = zeros_like_planes(z1);
    std::vector<float> seen;
    auto probe = [&](const ae::Triplane<Var<float>>& zt, const ae::Triplane<Var<float>>* c, const std::vector<int64_t>&) {
        seen.assign(c->s.value().values().begin(), c->s.value().values().end());
        return zt;
    };
    Rng rng(19);
    const double lam = 0.3;
    auto out = diffusion_loss(probe, z1, z2, std::vector<int64_t>(B, 1), eps, s, lam, JointMode::bernoulli, &rng);
    ASSERT_EQ(out.conditional.size(), static_cast<size_t>(B));
    int64_t k = 0;
    for (int64_t b = 0; b < B; ++b) {
        k += out.conditional[static_cast<size_t>(b)];
        EXPECT_EQ(seen[static_cast<size_t>(b)], out.conditional[static_cast<size_t>(b)] ? 1.0f : 0.0f);
    }
    EXPECT_NEAR(static_cast<double>(k) / B, lam, 3 * std::sqrt(lam * (1 - lam) / B));
    EXPECT_THROW(diffusion_loss(probe, z1, z2, std::vector<int64_t>(B, 1), eps, s, lam, JointMode::bernoulli), std::invalid_argument);
}

TEST(DiffusionLossTest, NearOneWeightGradientIsConditionalGradient) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    TriplaneDenoiser<double> m(tiny_denoiser(), 4, 4, 4, 6);
    auto z1 = random_planes<double>(1, 2, 4, 4, 4, 24), z2 = random_planes<double>(1, 2, 4, 4, 4, 25);
    auto eps = random_planes<double>(1, 2, 4, 4, 4, 26);
    auto grads = [&](auto&& loss_fn) {
        m.params().zero_grad();
        backward(loss_fn());
        std::vector<Tensor<double>> g;
        for (auto& [_, v] : m.params().all()) g.push_back(v.grad());
        return g;
    };
    auto mixed = grads([&] { return diffusion_loss(m, z1, z2, {30}, eps, s, 1 - 1e-9).loss; });
    auto cond_only = grads([&] {
        auto cond = constant_planes(z1);
        return planes_mse(m(constant_planes(q_sample(z2, 30, eps, s)), &cond, {30}), constant_planes(eps));
    });
    double num = 0, den = 0;
    for (size_t i = 0; i < mixed.size(); ++i)
        for (int64_t k = 0; k < mixed[i].numel(); ++k) {
            num += std::pow(mixed[i][k] - cond_only[i][k], 2);
            den += std::pow(cond_only[i][k], 2);
        }
    EXPECT_LT(std::sqrt(num / den), 1e-6);
}

TEST(DiffusionLossTest, GradientMatchesFiniteDifferences) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    TriplaneDenoiser<double> m(tiny_denoiser(), 4, 4, 4, 5);
    auto z1 = random_planes<double>(2, 2, 4, 4, 4, 20), z2 = random_planes<double>(2, 2, 4, 4, 4, 21);
    auto eps = random_planes<double>(2, 2, 4, 4, 4, 22);
    auto rep = pvdm::testing::gradcheck([&] { return diffusion_loss(m, z1, z2, {17, 80}, eps, s, 0.5).loss; },
                                  pvdm::testing::trainable(m.params()), 200, 23);
    EXPECT_GE(rep.pass_rate(), 0.95) << "worst " << rep.worst;
}
