#include <gtest/gtest.h>

#include "pvdm/autoencoder/model.hpp"
#include "pvdm/losses/objective.hpp"
#include "support/gradcheck.hpp"

using namespace pvdm;
using namespace pvdm::losses;

namespace {

Var<double> clip_var(Shape s, uint64_t seed, double lo = -1, double hi = 1) {
    Rng rng(seed);
    return Var<double>::constant(Tensor<double>::uniform(std::move(s), rng, lo, hi));
}

ae::AutoencoderConfig tiny_ae() {
    ae::AutoencoderConfig c;
    c.S = 2;
    c.H = c.W = 8;
    c.patch = 2;
    c.pool = 2;
    c.C = 2;
    c.width = 8;
    c.heads = 2;
    c.mlp_hidden = 8;
    c.depth = 1;
    c.dec_depth = 1;
    c.proj_width = 8;
    c.proj_heads = 2;
    c.proj_mlp = 8;
    return c;
}

// Straight-line LPIPS-style recomputation on raw arrays.
double naive_perceptual(const Tensor<double>& x, const Tensor<double>& y, const PerceptualExtractor<double>& ex) {
    const int64_t B = x.dim(0), S = x.dim(2), H0 = x.dim(3), W0 = x.dim(4);
    double total = 0;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t s = 0; s < S; ++s) {
            std::vector<double> fa, fb;
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t i = 0; i < H0; ++i)
                    for (int64_t j = 0; j < W0; ++j) {
                        fa.push_back(x.at({b, c, s, i, j}));
                        fb.push_back(y.at({b, c, s, i, j}));
                    }
            int64_t C = 3, H = H0, W = W0;
            double frame = 0;
            for (const auto& st : ex.stages()) {
                const auto& w = st.weight.value();
                const int64_t O = w.dim(0), st_ = st.stride;
                const int64_t OH = (H + 2 - 3) / st_ + 1, OW = (W + 2 - 3) / st_ + 1;
                auto conv = [&](const std::vector<double>& in) {
                    std::vector<double> out(static_cast<size_t>(O * OH * OW));
                    for (int64_t o = 0; o < O; ++o)
                        for (int64_t i = 0; i < OH; ++i)
                            for (int64_t j = 0; j < OW; ++j) {
                                double acc = st.bias.value()[o];
                                for (int64_t c = 0; c < C; ++c)
                                    for (int64_t ki = 0; ki < 3; ++ki)
                                        for (int64_t kj = 0; kj < 3; ++kj) {
                                            const int64_t yy = i * st_ + ki - 1, xx = j * st_ + kj - 1;
                                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                                            acc += w.at({o, c, ki, kj}) * in[static_cast<size_t>((c * H + yy) * W + xx)];
                                        }
                                out[static_cast<size_t>((o * OH + i) * OW + j)] = acc > 0 ? acc : 0.2 * acc;
                            }
                    return out;
                };
                fa = conv(fa);
                fb = conv(fb);
                C = O;
                H = OH;
                W = OW;
                double layer = 0;
                for (int64_t p = 0; p < H * W; ++p) {
                    double na = 0, nb = 0;
                    for (int64_t c = 0; c < C; ++c) {
                        na += fa[static_cast<size_t>(c * H * W + p)] * fa[static_cast<size_t>(c * H * W + p)];
                        nb += fb[static_cast<size_t>(c * H * W + p)] * fb[static_cast<size_t>(c * H * W + p)];
                    }
                    na = std::sqrt(na) + 1e-10;
                    nb = std::sqrt(nb) + 1e-10;
                    for (int64_t c = 0; c < C; ++c) {
                        const double d = fa[static_cast<size_t>(c * H * W + p)] / na - fb[static_cast<size_t>(c * H * W + p)] / nb;
                        layer += d * d;
                    }
                }
                frame += layer / static_cast<double>(H * W);
            }
            total += frame;
        }
    }
    return total / static_cast<double>(B * S);
}

void set_value(Discriminator<double>& d, const std::string& name, std::vector<std::pair<Shape, double>> entries) {
    auto& v = d.params().all().at(name).mutable_value();
    v.fill(0.0);
    for (const auto& [idx, val] : entries) {
        int64_t off = 0;
        for (size_t a = 0; a < idx.size(); ++a) off = off * v.dim(static_cast<int>(a)) + idx[a];
        v[off] = val;
    }
}

}  // namespace

TEST(PixelLossTest, HandValues) {
    auto x = clip_var({1, 3, 2, 2, 2}, 1, -0.5, 0.5);
    EXPECT_EQ(pixel_loss(x, x).item(), 0.0);
    Tensor<double> shifted = x.value();
    for (auto& v : shifted.values()) v += 0.5;
    EXPECT_NEAR(pixel_loss(x, Var<double>::constant(shifted)).item(), 0.5, 1e-15);
    // 24 differences 0.0, 0.1, ..., 2.3: total 27.6, mean 1.15
    Tensor<double> a({2, 2, 2, 3}), b({2, 2, 2, 3});
    for (int i = 0; i < 24; ++i) b[i] = 0.1 * i;
    EXPECT_NEAR(pixel_loss(Var<double>::constant(a), Var<double>::constant(b)).item(), 1.15, 1e-12);
    EXPECT_EQ(pixel_loss(Var<double>::constant(a), Var<double>::constant(b)).item(),
              pixel_loss(Var<double>::constant(b), Var<double>::constant(a)).item());
    EXPECT_THROW(pixel_loss(x, Var<double>::constant(a)), std::invalid_argument);
}

TEST(PerceptualLossTest, ZeroSymmetricAndMatchesOracle) {
    PerceptualExtractor<double> ex(5);
    auto x = clip_var({2, 3, 2, 8, 8}, 2);
    auto y = clip_var({2, 3, 2, 8, 8}, 3);
    EXPECT_NEAR(perceptual_loss(x, x, ex).item(), 0.0, 1e-12);
    EXPECT_NEAR(perceptual_loss(x, y, ex).item(), perceptual_loss(y, x, ex).item(), 1e-12);
    EXPECT_NEAR(perceptual_loss(x, y, ex).item(), naive_perceptual(x.value(), y.value(), ex), 1e-10);
    EXPECT_GT(perceptual_loss(x, y, ex).item(), 0.0);
    EXPECT_EQ(ex.params().trainable_count(), 0);
}

TEST(GanLossTest, ConstantZeroCriticGivesMarginHinge) {
    Discriminator<double> d({{4, 4}}, 1);
    d.params().all().at("disc.head.weight").mutable_value().fill(0.0);
    auto x = clip_var({2, 3, 2, 8, 8}, 4), y = clip_var({2, 3, 2, 8, 8}, 5);
    EXPECT_DOUBLE_EQ(discriminator_loss(d, x, y).item(), 2.0);
    auto g = generator_loss(d, x, x);
    EXPECT_DOUBLE_EQ(g.feature_matching.item(), 0.0);
}

TEST(GanLossTest, OneChannelCriticByHand) {
    Discriminator<double> d({{1, 1}, 0.2}, 1);
    set_value(d, "disc.conv0.weight", {{{0, 0, 1, 1, 1}, 1.0}});
    set_value(d, "disc.conv0.bias", {});
    set_value(d, "disc.conv1.weight", {{{0, 0, 1, 1, 1}, 1.0}, {{0, 0, 2, 1, 1}, 1.0}});
    set_value(d, "disc.conv1.bias", {});
    set_value(d, "disc.head.weight", {{{0, 0, 0, 0, 0}, 2.0}});
    set_value(d, "disc.head.bias", {{{0}, 0.5}});
    // Only channel 0 at pixel (0, 0) of each frame reaches the score.
    auto real = clip_var({1, 3, 2, 2, 2}, 6);
    auto fake = clip_var({1, 3, 2, 2, 2}, 7);
    real.mutable_value().at({0, 0, 0, 0, 0}) = 0.3;
    real.mutable_value().at({0, 0, 1, 0, 0}) = -0.5;
    fake.mutable_value().at({0, 0, 0, 0, 0}) = -0.4;
    fake.mutable_value().at({0, 0, 1, 0, 0}) = -0.6;
    // real: h0 = [0.3, -0.1], h1 = 0.2, D = 0.9
    // fake: h0 = [-0.08, -0.12], h1 = -0.04, D = 0.42
    EXPECT_NEAR(d(real).score.item(), 0.9, 1e-12);
    EXPECT_NEAR(d(fake).score.item(), 0.42, 1e-12);
    EXPECT_NEAR(discriminator_loss(d, real, fake).item(), 0.1 + 1.42, 1e-12);
    auto g = generator_loss(d, real, fake);
    EXPECT_NEAR(g.adversarial.item(), -0.42, 1e-12);
    // stage means: (0.38 + 0.02) / 2 = 0.2 and 0.24
    EXPECT_NEAR(g.feature_matching.item(), 0.22, 1e-12);
    EXPECT_NEAR(g.total.item(), -0.2, 1e-12);
}

TEST(GanLossTest, DetachmentKeepsGradientsOnTheirSide) {
    ae::TriplaneAutoencoder<double> model(tiny_ae(), 1);
    Discriminator<double> d({{4, 4}}, 2);
    auto x = clip_var({1, 3, 2, 8, 8}, 8);
    auto recon = model.reconstruct(x);
    backward(discriminator_loss(d, x, recon));
    for (const auto& [name, v] : model.params().all()) EXPECT_FALSE(v.has_grad() && v.grad().abs_max() > 0) << name;
    bool disc_touched = false;
    for (const auto& [name, v] : d.params().all()) disc_touched |= v.has_grad() && v.grad().abs_max() > 0;
    EXPECT_TRUE(disc_touched);

    d.params().zero_grad();
    recon = model.reconstruct(x);
    backward(generator_loss(d, x, recon).total);
    for (const auto& [name, v] : d.params().all()) EXPECT_FALSE(v.has_grad() && v.grad().abs_max() > 0) << name;
    bool ae_touched = false;
    for (const auto& [name, v] : model.params().all()) ae_touched |= v.has_grad() && v.grad().abs_max() > 0;
    EXPECT_TRUE(ae_touched);
}

TEST(AeObjectiveTest, WeightsCombineAsStated) {
    EXPECT_DOUBLE_EQ(weighted_objective(1, 1, 1, 1.0, 0.25), 2.25);
    PerceptualExtractor<double> ex(1);
    Discriminator<double> d({{4, 4}}, 1);
    auto x = clip_var({1, 3, 2, 8, 8}, 9), y = clip_var({1, 3, 2, 8, 8}, 10);
    auto before = ae_total_loss(x, y, 1.0, 0.0, ex, &d);
    EXPECT_DOUBLE_EQ(before.total.item(), pixel_loss(y, x).item() + perceptual_loss(x, y, ex).item());
    EXPECT_EQ(before.generator, 0.0);
    auto after = ae_total_loss(x, y, 1.0, 0.25, ex, &d);
    EXPECT_NEAR(after.total.item(), weighted_objective(after.pixel, after.perceptual, after.generator, 1.0, 0.25), 1e-12);
    EXPECT_NEAR(after.generator, generator_loss(d, x, y).total.item(), 1e-12);
}

TEST(AeObjectiveTest, ZeroWeightsReduceToL1) {
    ae::TriplaneAutoencoder<double> model(tiny_ae(), 3);
    PerceptualExtractor<double> ex(1);
    auto x = clip_var({1, 3, 2, 8, 8}, 11);
    backward(ae_total_loss(x, model.reconstruct(x), 0.0, 0.0, ex, static_cast<const Discriminator<double>*>(nullptr)).total);
    std::map<std::string, Tensor<double>> full;
    for (const auto& [name, v] : model.params().all()) full[name] = v.grad();
    model.params().zero_grad();
    backward(mean_abs_diff(model.reconstruct(x), x));
    for (const auto& [name, v] : model.params().all()) {
        ASSERT_TRUE(v.has_grad()) << name;
        EXPECT_EQ(v.grad(), full[name]) << name;
    }
}

TEST(AeObjectiveTest, GradientMatchesFiniteDifferences) {
    ae::TriplaneAutoencoder<double> model(tiny_ae(), 4);
    PerceptualExtractor<double> ex(2, {4, 4});
    Discriminator<double> d({{4, 4}}, 3);
    auto x = clip_var({1, 3, 2, 8, 8}, 12);
    for (double lambda2 : {0.0, 0.25}) {
        auto loss = [&] { return ae_total_loss(x, model.reconstruct(x), 1.0, lambda2, ex, &d).total; };
        auto rep = pvdm::testing::gradcheck(loss, pvdm::testing::trainable(model.params()), 200, 5);
        EXPECT_GE(rep.pass_rate(), 0.95) << "lambda2 " << lambda2 << " worst " << rep.worst;
    }
}

TEST(GanSwitchTest, StepAndPlateauRules) {
    LossConfig cfg;
    cfg.gan_start_step = 3;
    GanSwitch sw(cfg);
    EXPECT_EQ(sw.lambda2(), 0.0);
    EXPECT_FALSE(sw.observe(2, 1.0));
    EXPECT_TRUE(sw.observe(3, 1.0));
    EXPECT_EQ(sw.lambda2(), 0.25);
    EXPECT_FALSE(sw.observe(4, 1.0));

    cfg.gan_start_rule = GanStartRule::plateau;
    cfg.plateau_window = 2;
    GanSwitch pl(cfg);
    int64_t step = 0;
    for (double v : {10.0, 8.0, 6.0, 4.0}) EXPECT_FALSE(pl.observe(step++, v));
    for (double v : {4.0, 4.0, 4.0}) pl.observe(step++, v);
    EXPECT_TRUE(pl.active());
}

TEST(EarlyStopTest, RuleApplication) {
    auto d = early_stop_monitor({{1, 10}, {2, 8}, {3, 9}, {4, 9.5}, {5, 11}}, 3);
    EXPECT_TRUE(d.stop);
    EXPECT_EQ(d.best_step, 2);

    auto mono = early_stop_monitor({{1, 5}, {2, 4}, {3, 3}, {4, 2}}, 3);
    EXPECT_FALSE(mono.stop);
    EXPECT_EQ(mono.best_step, 4);

    auto tie = early_stop_monitor({{1, 5}, {2, 3}, {3, 3}}, 3);
    EXPECT_EQ(tie.best_step, 2);
    EXPECT_FALSE(tie.stop);

    EarlyStopMonitor m(3);
    m.observe(1, 10);
    m.observe(2, 8);
    m.observe(3, 9);
    m.observe(4, 9.5);
    EXPECT_FALSE(m.state().stop);
    EXPECT_TRUE(m.observe(5, 11).stop);
}
