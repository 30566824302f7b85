#pragma once

#include <array>
#include <string>
#include <vector>

#include "pvdm/nn/params.hpp"
#include "pvdm/tensor/nn_ops.hpp"
#include "pvdm/tensor/ops.hpp"

namespace pvdm::losses {

struct DiscriminatorConfig {
    std::vector<int64_t> channels = {16, 32, 64};
    double slope = 0.2;
};

/// 3D-convolutional video critic. Hidden stages are 3x3x3 convolutions with
/// leaky ReLU; the first halves space, later ones halve space and time. A
/// 1x1x1 head is averaged into one realness score per clip.
template <typename T>
class Discriminator {
public:
    struct Output {
        Var<T> score;                 // [B]
        std::vector<Var<T>> features;  // one per hidden stage
    };

    explicit Discriminator(DiscriminatorConfig cfg = {}, uint64_t seed = 0) : cfg_(std::move(cfg)) {
        if (cfg_.channels.size() < 2) throw std::invalid_argument("discriminator needs at least two hidden stages");
        Rng rng = derive_rng(seed, {0xD15C});
        int64_t in = 3;
        for (size_t i = 0; i < cfg_.channels.size(); ++i) {
            const std::string name = "disc.conv" + std::to_string(i);
            const int64_t out = cfg_.channels[i];
            params_.add_fan_in(name + ".weight", {out, in, 3, 3, 3}, in * 27, rng);
            params_.add_constant(name + ".bias", {out}, T(0));
            in = out;
        }
        params_.add_fan_in("disc.head.weight", {1, in, 1, 1, 1}, in, rng);
        params_.add_constant("disc.head.bias", {1}, T(0));
        bind();
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    /// Copy whose weights are graph constants: gradients through it reach
    /// only the input.
    Discriminator frozen() const {
        Discriminator d = *this;
        d.params_ = ParamStore<T>();
        for (const auto& [name, v] : params_.all()) d.params_.add(name, v.value(), false);
        d.bind();
        return d;
    }

    Output operator()(const Var<T>& x) const {
        Output o;
        Var<T> h = x;
        for (const auto& s : stages_) {
            h = leaky_relu(conv3d(h, s.weight, s.bias, s.stride, {1, 1, 1}), static_cast<T>(cfg_.slope));
            o.features.push_back(h);
        }
        Var<T> logits = conv3d(h, head_w_, head_b_, {1, 1, 1}, {0, 0, 0});
        const int64_t B = logits.dim(0);
        o.score = reshape(mean_middle(reshape(logits, {B, logits.numel() / B, 1})), {B});
        return o;
    }

private:
    void bind() {
        stages_.clear();
        for (size_t i = 0; i < cfg_.channels.size(); ++i) {
            const std::string name = "disc.conv" + std::to_string(i);
            Stage s;
            s.weight = params_.get(name + ".weight");
            s.bias = params_.get(name + ".bias");
            s.stride = i == 0 ? std::array<int64_t, 3>{1, 2, 2} : std::array<int64_t, 3>{2, 2, 2};
            stages_.push_back(s);
        }
        head_w_ = params_.get("disc.head.weight");
        head_b_ = params_.get("disc.head.bias");
    }

    struct Stage {
        Var<T> weight, bias;
        std::array<int64_t, 3> stride{};
    };
    DiscriminatorConfig cfg_;
    ParamStore<T> params_;
    std::vector<Stage> stages_;
    Var<T> head_w_, head_b_;
};

/// Critic side: mean relu(1 - D(x)) + mean relu(1 + D(x_fake)), with the
/// fake clip detached from the generator.
template <typename T>
Var<T> discriminator_loss(const Discriminator<T>& disc, const Var<T>& real, const Var<T>& fake) {
    Var<T> dr = disc(real.detach()).score;
    Var<T> df = disc(fake.detach()).score;
    return add(mean(relu(add_scalar(neg(dr), T(1)))), mean(relu(add_scalar(df, T(1)))));
}

template <typename T>
struct GeneratorTerms {
    Var<T> adversarial;       // -mean D(x_fake)
    Var<T> feature_matching;  // mean over stages of l1(features(fake), features(real))
    Var<T> total;
};

/// Generator side. The critic is evaluated as constants and real-clip
/// features are held fixed, so gradients reach only the generator.
template <typename T>
GeneratorTerms<T> generator_loss(const Discriminator<T>& disc, const Var<T>& real, const Var<T>& fake) {
    const Discriminator<T> critic = disc.frozen();
    std::vector<Var<T>> real_features;
    {
        NoGradGuard ng;
        real_features = critic(real).features;
    }
    auto out = critic(fake);
    GeneratorTerms<T> g;
    g.adversarial = neg(mean(out.score));
    for (size_t l = 0; l < out.features.size(); ++l) {
        Var<T> d = mean_abs_diff(out.features[l], real_features[l].detach());
        g.feature_matching = l == 0 ? d : add(g.feature_matching, d);
    }
    g.feature_matching = scale(g.feature_matching, T(1) / static_cast<T>(out.features.size()));
    g.total = add(g.adversarial, g.feature_matching);
    return g;
}

template <typename T>
struct GanLosses {
    Var<T> g_loss;
    Var<T> d_loss;
};

template <typename T>
GanLosses<T> gan_losses(const Discriminator<T>& disc, const Var<T>& real, const Var<T>& fake) {
    return {generator_loss(disc, real, fake).total, discriminator_loss(disc, real, fake)};
}

}  // namespace pvdm::losses
