#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "pvdm/sampler/sampler.hpp"

using namespace pvdm;
using namespace pvdm::sampler;
using diffusion::make_linear_schedule;

namespace {

template <typename T>
ae::Triplane<Tensor<T>> scalar_planes(T v) {
    ae::Triplane<Tensor<T>> z{Tensor<T>({1, 1, 1, 1}), Tensor<T>({1, 1, 1, 1}), Tensor<T>({1, 1, 1, 1})};
    for (int p = 0; p < 3; ++p) z[p][0] = v;
    return z;
}

Planes random_planes(int64_t C, int64_t S, int64_t Hp, int64_t Wp, uint64_t seed) {
    Rng rng(seed);
    return {Tensor<float>::randn({1, C, Hp, Wp}, rng), Tensor<float>::randn({1, C, S, Wp}, rng),
            Tensor<float>::randn({1, C, S, Hp}, rng)};
}

template <typename T>
double max_diff(const ae::Triplane<Tensor<T>>& a, const ae::Triplane<Tensor<T>>& b) {
    double m = 0;
    for (int p = 0; p < 3; ++p)
        for (int64_t i = 0; i < a[p].numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[p][i]) - b[p][i]));
    return m;
}

// Exact noise predictor for a point-mass data distribution at z0.
EpsFn oracle_for(const Planes& z0, const diffusion::NoiseSchedule& s) {
    return [z0, s](const Planes& zt, const Planes*, int64_t t) {
        const double ab = s.abar(t);
        return diffusion::affine_planes(1.0 / std::sqrt(1 - ab), zt, -std::sqrt(ab) / std::sqrt(1 - ab), z0);
    };
}

}  // namespace

TEST(SamplerStepTest, DdpmScalarHandCase) {
    auto s = diffusion::make_schedule_from_betas({0.5});
    auto out = ddpm_step(scalar_planes(1.0), scalar_planes(1.0), 1, s, scalar_planes(0.0));
    for (int p = 0; p < 3; ++p) EXPECT_NEAR(out[p][0], std::sqrt(2.0) - 1.0, 1e-12);
    EXPECT_THROW(ddpm_step(scalar_planes(1.0), scalar_planes(1.0), 1, s, scalar_planes(0.1)), std::invalid_argument);
}

TEST(SamplerStepTest, DdpmAddsSigmaTimesNoise) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    auto a = ddpm_step(scalar_planes(0.3), scalar_planes(-0.2), 40, s, scalar_planes(0.0));
    auto b = ddpm_step(scalar_planes(0.3), scalar_planes(-0.2), 40, s, scalar_planes(2.0));
    EXPECT_NEAR(b.s[0] - a.s[0], 2.0 * std::sqrt(s.b(40)), 1e-12);
}

TEST(SamplerStepTest, DdimLastJumpReturnsX0Prediction) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    auto z = scalar_planes(0.8), e = scalar_planes(0.1);
    for (double eta : {0.0, 1.0}) {
        auto out = ddim_step(z, e, 37, 0, s, eta);
        const double x0 = (0.8 - std::sqrt(1 - s.abar(37)) * 0.1) / std::sqrt(s.abar(37));
        EXPECT_NEAR(out.s[0], x0, 1e-12);
    }
    EXPECT_THROW(ddim_step(z, e, 37, 37, s, 0.0), std::invalid_argument);
    EXPECT_THROW(ddim_step(z, e, 37, 1, s, 1.5), std::invalid_argument);
}

TEST(SamplerStepTest, DdimEtaOneMeanEqualsDdpmMean) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    Rng rng(1);
    ae::Triplane<Tensor<double>> z{Tensor<double>::randn({2, 3, 4, 4}, rng), Tensor<double>::randn({2, 3, 4, 4}, rng),
                                   Tensor<double>::randn({2, 3, 4, 4}, rng)};
    auto e = diffusion::randn_like_planes(z, rng);
    for (int64_t t : {1, 2, 500, 1000}) {
        auto dd = ddim_step(z, e, t, t - 1, s, 1.0);
        auto dp = ddpm_step(z, e, t, s, diffusion::zeros_like_planes(z));
        EXPECT_LT(max_diff(dd, dp), 1e-10) << t;
    }
    // Variance: the eta = 1 jump uses the posterior variance.
    const int64_t t = 300;
    const double expect = (1 - s.abar(t - 1)) / (1 - s.abar(t)) * s.b(t);
    EXPECT_NEAR(ddim_sigma(s.abar(t), s.abar(t - 1), 1.0), std::sqrt(expect), 1e-14);
    EXPECT_EQ(ddim_sigma(s.abar(t), s.abar(t - 1), 0.0), 0.0);
}

TEST(StepSequenceTest, EvenlySpacedAndInclusive) {
    auto q = step_sequence(1000, 20);
    ASSERT_EQ(q.size(), 20u);
    EXPECT_EQ(q.front(), 1);
    EXPECT_EQ(q.back(), 1000);
    for (size_t i = 1; i < q.size(); ++i) EXPECT_GT(q[i], q[i - 1]);
    EXPECT_EQ(q[1], 54);  // 1 + round(999 / 19)
    EXPECT_EQ(step_sequence(1000, 1), std::vector<int64_t>{1000});
    auto all = step_sequence(7, 7);
    EXPECT_EQ(all, (std::vector<int64_t>{1, 2, 3, 4, 5, 6, 7}));
    EXPECT_THROW(step_sequence(10, 11), ConfigError);
    EXPECT_THROW(step_sequence(10, 0), ConfigError);
}

TEST(StepSequenceTest, RespacedScheduleKeepsCumulativeProducts) {
    auto s = make_linear_schedule(1000, 0.0015, 0.0195);
    auto q = step_sequence(1000, 37);
    auto r = respaced_schedule(s, q);
    ASSERT_EQ(r.T, 37);
    for (size_t k = 0; k < q.size(); ++k) EXPECT_NEAR(r.abar(static_cast<int64_t>(k) + 1), s.abar(q[k]), 1e-14);
}

TEST(SampleClipTest, OracleRecoversPointMass) {
    auto s = make_linear_schedule(200, 0.0015, 0.0195);
    auto z0 = random_planes(2, 4, 4, 4, 2);
    auto eps = oracle_for(z0, s);
    struct Case {
        Mode mode;
        int64_t steps;
        double eta;
    };
    for (Case c : {Case{Mode::ddim, 10, 0.0}, Case{Mode::ddim, 200, 0.0}, Case{Mode::ddim, 25, 1.0},
                   Case{Mode::ddpm, 200, 1.0}, Case{Mode::ddpm, 13, 1.0}}) {
        Rng rng(3);
        auto out = sample_clip(eps, s, nullptr, c.steps, c.mode, c.eta, rng, z0);
        EXPECT_LT(max_diff(out, z0), 1e-3) << to_string(c.mode) << " " << c.steps;
    }
}

TEST(SampleClipTest, CallsDenoiserOncePerStepAtSubsequence) {
    auto s = make_linear_schedule(100, 0.001, 0.02);
    auto like = random_planes(1, 2, 2, 2, 4);
    std::vector<int64_t> seen;
    EpsFn probe = [&](const Planes& zt, const Planes*, int64_t t) {
        seen.push_back(t);
        return diffusion::zeros_like_planes(zt);
    };
    for (Mode m : {Mode::ddim, Mode::ddpm}) {
        seen.clear();
        Rng rng(5);
        sample_clip(probe, s, nullptr, 20, m, 0.0, rng, like);
        auto q = step_sequence(100, 20);
        std::reverse(q.begin(), q.end());
        EXPECT_EQ(seen, q);
    }
}

TEST(LongVideoTest, ChainsClipsThroughLatents) {
    auto s = make_linear_schedule(50, 0.001, 0.02);
    const int64_t S = 4, H = 8, W = 8;
    auto like = random_planes(2, S, 4, 4, 6);
    std::vector<const Planes*> conds;
    EpsFn eps = [&](const Planes& zt, const Planes* c, int64_t) {
        conds.push_back(c);
        auto out = diffusion::affine_planes(0.1, zt, 0.0, zt);
        if (c) out = diffusion::affine_planes(1.0, out, 0.05, *c);
        return out;
    };
    DecodeFn decode = [&](const Planes& z) {
        Tensor<float> x({1, 3, S, H, W});
        x.fill(z.s[0]);
        return x;
    };
    SamplerConfig cfg;
    cfg.N = 10;
    cfg.M = 5;
    cfg.L = 4;
    cfg.seed = 11;
    auto v = generate_long_video(eps, decode, s, cfg, like);
    EXPECT_EQ(v.frames.shape(), (Shape{3, 4 * S, H, W}));
    ASSERT_EQ(v.latents.size(), 4u);
    EXPECT_FALSE(v.conditions[0].has_value());
    for (size_t l = 1; l < 4; ++l) {
        ASSERT_TRUE(v.conditions[l].has_value());
        for (int p = 0; p < 3; ++p)
            EXPECT_EQ(0, std::memcmp((*v.conditions[l])[p].data(), v.latents[l - 1][p].data(),
                                     sizeof(float) * static_cast<size_t>(v.latents[l - 1][p].numel())));
    }
    EXPECT_EQ(v.reads, (std::vector<std::pair<int64_t, int64_t>>{{1, 0}, {2, 1}, {3, 2}}));
    // N calls for the first clip, M for each later one.
    EXPECT_EQ(conds.size(), 10u + 3 * 5u);
    for (size_t i = 0; i < conds.size(); ++i) EXPECT_EQ(conds[i] == nullptr, i < 10);

    auto again = generate_long_video(eps, decode, s, cfg, like);
    EXPECT_EQ(0, std::memcmp(again.frames.data(), v.frames.data(), sizeof(float) * static_cast<size_t>(v.frames.numel())));

    // Clip noise is keyed by clip index: a shorter run shares its prefix.
    cfg.L = 2;
    auto prefix = generate_long_video(eps, decode, s, cfg, like);
    EXPECT_EQ(max_diff(prefix.latents[1], v.latents[1]), 0.0);
}

TEST(SamplerConfigTest, PresetsAndValidation) {
    auto p = find_preset("100/20-s");
    EXPECT_EQ(p.N, 100);
    EXPECT_EQ(p.M, 20);
    EXPECT_EQ(find_preset("400/400-s").M, 400);
    EXPECT_THROW(find_preset("1/1"), ConfigError);
    SamplerConfig c;
    c.N = 2000;
    EXPECT_THROW(c.validate(1000), ConfigError);
    EXPECT_EQ(parse_mode("ddpm"), Mode::ddpm);
    EXPECT_THROW(parse_mode("euler"), ConfigError);
}
