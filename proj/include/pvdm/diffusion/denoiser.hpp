#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pvdm/autoencoder/latent.hpp"
#include "pvdm/errors.hpp"
#include "pvdm/nn/layers.hpp"
#include "pvdm/tensor/ops.hpp"

namespace pvdm::diffusion {

struct DenoiserConfig {
    int64_t latent_channels = 4;       // C per plane
    int64_t base_channels = 32;
    std::vector<int64_t> channel_mult = {1, 2};
    int res_blocks = 1;
    std::vector<int> attention_stages = {1};  // stage i works at 1/2^i resolution
    bool middle_attention = true;
    int heads = 4;
    int64_t time_embed_dim = 0;  // 0 means 4 * base_channels

    int stages() const { return static_cast<int>(channel_mult.size()); }
    int64_t temb_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
    int64_t stage_channels(int i) const { return base_channels * channel_mult.at(static_cast<size_t>(i)); }
    bool attends(int stage) const {
        for (int s : attention_stages)
            if (s == stage) return true;
        return false;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("denoiser: " + m); };
        if (latent_channels <= 0 || base_channels <= 0) fail("channel counts must be positive");
        if (channel_mult.empty()) fail("needs at least one stage");
        for (int64_t m : channel_mult)
            if (m <= 0) fail("channel multipliers must be positive");
        if (res_blocks <= 0) fail("res_blocks must be positive");
        if (heads <= 0) fail("heads must be positive");
        for (int s : attention_stages)
            if (s < 0 || s >= stages()) fail("attention stage " + std::to_string(s) + " out of range");
        for (int i = 0; i < stages(); ++i)
            if ((attends(i) || (middle_attention && i == stages() - 1)) && stage_channels(i) % heads != 0)
                fail("stage width must be divisible by heads");
    }

    /// Every stage halves both extents, so they must divide 2^(stages-1).
    void validate_geometry(int64_t S, int64_t Hp, int64_t Wp) const {
        const int64_t f = int64_t{1} << (stages() - 1);
        for (int64_t e : {S, Hp, Wp})
            if (e % f != 0)
                throw ConfigError("denoiser: plane extent " + std::to_string(e) + " not divisible by " + std::to_string(f) +
                                  " for " + std::to_string(stages()) + " stages");
    }
};

/// Sinusoidal timestep features [B, dim].
template <typename T>
Tensor<T> timestep_features(const std::vector<int64_t>& t, int64_t dim) {
    Tensor<T> out({static_cast<int64_t>(t.size()), dim});
    const int64_t half = dim / 2;
    for (size_t b = 0; b < t.size(); ++b) {
        for (int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double a = static_cast<double>(t[b]) * freq;
            out[static_cast<int64_t>(b) * dim + i] = static_cast<T>(std::cos(a));
            out[static_cast<int64_t>(b) * dim + half + i] = static_cast<T>(std::sin(a));
        }
    }
    return out;
}

template <typename T>
struct ResBlock {
    nn::GroupNorm<T> norm1, norm2;
    nn::Conv2d<T> conv1, conv2, skip;
    nn::Linear<T> temb;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t temb_dim, Rng& rng)
        : norm1(ps, name + ".norm1", in),
          norm2(ps, name + ".norm2", out),
          conv1(ps, name + ".conv1", in, out, 3, rng),
          conv2(ps, name + ".conv2", out, out, 3, rng),
          temb(ps, name + ".temb", temb_dim, out, rng),
          has_skip(in != out) {
        if (has_skip) skip = nn::Conv2d<T>(ps, name + ".skip", in, out, 1, rng);
    }

    // x [N, Cin, Y, X]; e [N, E] already passed through SiLU
    Var<T> operator()(const Var<T>& x, const Var<T>& e) const {
        Var<T> h = conv1(silu(norm1(x)));
        h = add_channel(h, temb(e));
        h = conv2(silu(norm2(h)));
        return add(has_skip ? skip(x) : x, h);
    }
};

/// Layout of one batch of same-shaped planes: G planes of Y x X per sample,
/// stored as [B*G, Ch, Y, X] in sample-major order.
struct PlaneGroup {
    int64_t G = 1, Y = 0, X = 0;
};

/// Joint self-attention over the tokens of every plane of a sample.
template <typename T>
struct JointAttention {
    std::vector<nn::GroupNorm<T>> norms;
    std::vector<Var<T>> pos;  // per group [Y*X, G, Ch]
    Var<T> identity;          // [planes, Ch]
    nn::SelfAttention<T> attn;

    JointAttention() = default;
    JointAttention(ParamStore<T>& ps, const std::string& name, int64_t ch, int heads, const std::vector<PlaneGroup>& groups,
                   int shrink, Rng& rng) {
        int64_t planes = 0;
        for (size_t g = 0; g < groups.size(); ++g) {
            const auto& pg = groups[g];
            const int64_t L = (pg.Y >> shrink) * (pg.X >> shrink);
            norms.emplace_back(ps, name + ".norm" + std::to_string(g), ch);
            pos.push_back(ps.add(name + ".pos" + std::to_string(g), Tensor<T>::randn({L, pg.G, ch}, rng, T(0.02))));
            planes += pg.G;
        }
        identity = ps.add(name + ".plane_id", Tensor<T>::randn({planes, ch}, rng, T(0.02)));
        attn = nn::SelfAttention<T>(ps, name + ".attn", ch, heads, rng);
    }

    std::vector<Var<T>> operator()(const std::vector<Var<T>>& xs, const std::vector<PlaneGroup>& groups, int64_t B) const {
        std::vector<Var<T>> tokens;
        std::vector<int64_t> lengths;
        int64_t plane0 = 0;
        for (size_t g = 0; g < xs.size(); ++g) {
            const auto& x = xs[g];
            const int64_t G = groups[g].G, Ch = x.dim(1), Y = x.dim(2), X = x.dim(3);
            Var<T> t = reshape(permute(norms[g](x), {0, 2, 3, 1}), {B, G * Y * X, Ch});
            Var<T> emb = add_trailing(pos[g], slice(identity, 0, plane0, G));
            emb = reshape(permute(emb, {1, 0, 2}), {G * Y * X, Ch});
            tokens.push_back(add_trailing(t, emb));
            lengths.push_back(G * Y * X);
            plane0 += G;
        }
        Var<T> joint = tokens.size() == 1 ? tokens[0] : concat(tokens, 1);
        Var<T> out = attn(joint);
        std::vector<Var<T>> res;
        int64_t start = 0;
        for (size_t g = 0; g < xs.size(); ++g) {
            const auto& x = xs[g];
            const int64_t Ch = x.dim(1), Y = x.dim(2), X = x.dim(3);
            Var<T> part = xs.size() == 1 ? out : slice(out, 1, start, lengths[g]);
            part = permute(reshape(part, {x.dim(0), Y, X, Ch}), {0, 3, 1, 2});
            res.push_back(add(x, part));
            start += lengths[g];
        }
        return res;
    }
};

/// 2D U-Net applied with one set of weights to every plane group, with
/// joint attention across all planes at the configured stages. Inputs are
/// [B*G, in, Y, X] per group; outputs [B*G, out, Y, X].
template <typename T>
class PlaneUNet {
public:
    PlaneUNet() = default;
    PlaneUNet(ParamStore<T>& ps, const std::string& name, const DenoiserConfig& cfg, int64_t in_ch, int64_t out_ch,
              std::vector<PlaneGroup> groups, Rng& rng)
        : cfg_(cfg), groups_(std::move(groups)) {
        cfg_.validate();
        const int64_t E = cfg.temb_dim(), base = cfg.base_channels;
        const int n = cfg.stages();
        temb1_ = nn::Linear<T>(ps, name + ".temb1", base, E, rng);
        temb2_ = nn::Linear<T>(ps, name + ".temb2", E, E, rng);
        conv_in_ = nn::Conv2d<T>(ps, name + ".conv_in", in_ch, base, 3, rng);

        std::vector<int64_t> skip_ch{base};
        int64_t ch = base;
        for (int i = 0; i < n; ++i) {
            const int64_t out = cfg.stage_channels(i);
            for (int r = 0; r < cfg.res_blocks; ++r) {
                const std::string bn = name + ".down" + std::to_string(i) + "." + std::to_string(r);
                Level lv;
                lv.block = ResBlock<T>(ps, bn, ch, out, E, rng);
                if (cfg.attends(i)) {
                    lv.attn = JointAttention<T>(ps, bn + ".xattn", out, cfg.heads, groups_, i, rng);
                    lv.has_attn = true;
                }
                down_.push_back(std::move(lv));
                ch = out;
                skip_ch.push_back(ch);
            }
            if (i + 1 < n) {
                downsample_.push_back(nn::Conv2d<T>(ps, name + ".downsample" + std::to_string(i), ch, ch, 3, rng, 2, 1));
                skip_ch.push_back(ch);
            }
        }
        mid1_ = ResBlock<T>(ps, name + ".mid1", ch, ch, E, rng);
        if (cfg.middle_attention) mid_attn_ = JointAttention<T>(ps, name + ".mid.xattn", ch, cfg.heads, groups_, n - 1, rng);
        mid2_ = ResBlock<T>(ps, name + ".mid2", ch, ch, E, rng);

        for (int i = n - 1; i >= 0; --i) {
            const int64_t out = cfg.stage_channels(i);
            for (int r = 0; r <= cfg.res_blocks; ++r) {
                const std::string bn = name + ".up" + std::to_string(i) + "." + std::to_string(r);
                const int64_t sc = skip_ch.back();
                skip_ch.pop_back();
                Level lv;
                lv.block = ResBlock<T>(ps, bn, ch + sc, out, E, rng);
                if (cfg.attends(i)) {
                    lv.attn = JointAttention<T>(ps, bn + ".xattn", out, cfg.heads, groups_, i, rng);
                    lv.has_attn = true;
                }
                up_.push_back(std::move(lv));
                ch = out;
            }
            if (i > 0) upsample_.push_back(nn::Conv2d<T>(ps, name + ".upsample" + std::to_string(i), ch, ch, 3, rng));
        }
        norm_out_ = nn::GroupNorm<T>(ps, name + ".norm_out", ch);
        conv_out_ = nn::Conv2d<T>(ps, name + ".conv_out", ch, out_ch, 3, rng);
    }

    const std::vector<PlaneGroup>& groups() const { return groups_; }

    std::vector<Var<T>> operator()(std::vector<Var<T>> xs, const std::vector<int64_t>& t) const {
        const int64_t B = static_cast<int64_t>(t.size());
        if (xs.size() != groups_.size()) throw std::invalid_argument("PlaneUNet: group count mismatch");
        for (size_t g = 0; g < xs.size(); ++g) {
            const auto& pg = groups_[g];
            if (xs[g].rank() != 4 || xs[g].dim(0) != B * pg.G || xs[g].dim(2) != pg.Y || xs[g].dim(3) != pg.X)
                throw std::invalid_argument("PlaneUNet: unexpected plane shape " + shape_str(xs[g].shape()));
        }
        // Timestep embedding, repeated for each plane of a sample.
        Var<T> e = Var<T>::constant(timestep_features<T>(t, cfg_.base_channels));
        e = silu(temb2_(silu(temb1_(e))));
        std::vector<Var<T>> eg;
        for (const auto& pg : groups_) eg.push_back(repeat_rows(e, pg.G));

        auto each = [&](auto&& f) {
            for (size_t g = 0; g < xs.size(); ++g) xs[g] = f(xs[g], g);
        };
        each([&](const Var<T>& x, size_t) { return conv_in_(x); });
        std::vector<std::vector<Var<T>>> skips{xs};
        size_t lvl = 0, ds = 0;
        const int n = cfg_.stages();
        for (int i = 0; i < n; ++i) {
            for (int r = 0; r < cfg_.res_blocks; ++r, ++lvl) {
                const Level& L = down_[lvl];
                each([&](const Var<T>& x, size_t g) { return L.block(x, eg[g]); });
                if (L.has_attn) xs = L.attn(xs, groups_, B);
                skips.push_back(xs);
            }
            if (i + 1 < n) {
                const auto& conv = downsample_[ds++];
                each([&](const Var<T>& x, size_t) { return conv(x); });
                skips.push_back(xs);
            }
        }
        each([&](const Var<T>& x, size_t g) { return mid1_(x, eg[g]); });
        if (cfg_.middle_attention) xs = mid_attn_(xs, groups_, B);
        each([&](const Var<T>& x, size_t g) { return mid2_(x, eg[g]); });
        lvl = 0;
        size_t us = 0;
        for (int i = n - 1; i >= 0; --i) {
            for (int r = 0; r <= cfg_.res_blocks; ++r, ++lvl) {
                const Level& L = up_[lvl];
                const std::vector<Var<T>> sk = skips.back();
                skips.pop_back();
                each([&](const Var<T>& x, size_t g) { return L.block(concat(std::vector<Var<T>>{x, sk[g]}, 1), eg[g]); });
                if (L.has_attn) xs = L.attn(xs, groups_, B);
            }
            if (i > 0) {
                const auto& conv = upsample_[us++];
                each([&](const Var<T>& x, size_t) { return conv(upsample2x(x)); });
            }
        }
        each([&](const Var<T>& x, size_t) { return conv_out_(silu(norm_out_(x))); });
        return xs;
    }

    /// Joint-attention tokens per sample at stage `stage`.
    int64_t attention_tokens(int stage) const {
        int64_t n = 0;
        for (const auto& g : groups_) n += g.G * (g.Y >> stage) * (g.X >> stage);
        return n;
    }

private:
    struct Level {
        ResBlock<T> block;
        JointAttention<T> attn;
        bool has_attn = false;
    };

    // [B, E] -> [B*G, E], each row repeated G times.
    static Var<T> repeat_rows(const Var<T>& e, int64_t G) {
        if (G == 1) return e;
        const int64_t B = e.dim(0), E = e.dim(1);
        Var<T> r = reshape(e, {B, 1, E});
        return reshape(concat(std::vector<Var<T>>(static_cast<size_t>(G), r), 1), {B * G, E});
    }

    DenoiserConfig cfg_;
    std::vector<PlaneGroup> groups_;
    nn::Linear<T> temb1_, temb2_;
    nn::Conv2d<T> conv_in_, conv_out_;
    std::vector<Level> down_, up_;
    std::vector<nn::Conv2d<T>> downsample_, upsample_;
    ResBlock<T> mid1_, mid2_;
    JointAttention<T> mid_attn_;
    nn::GroupNorm<T> norm_out_;
};

/// Noise predictor over triplane latents. Each plane is concatenated with
/// its conditioning plane (zeros for the null condition) and passed
/// through one shared U-Net; planes of identical shape share a batch.
template <typename T>
class TriplaneDenoiser {
public:
    using Planes = ae::Triplane<Var<T>>;

    TriplaneDenoiser(const DenoiserConfig& cfg, int64_t S, int64_t Hp, int64_t Wp, uint64_t seed = 0)
        : cfg_(cfg), S_(S), Hp_(Hp), Wp_(Wp) {
        cfg_.validate();
        cfg_.validate_geometry(S, Hp, Wp);
        Rng rng = derive_rng(seed, {0xD1FF});
        stacked_ = (S == Hp && S == Wp);
        std::vector<PlaneGroup> groups;
        if (stacked_) {
            groups.push_back({3, S, S});
        } else {
            groups = {{1, Hp, Wp}, {1, S, Wp}, {1, S, Hp}};
        }
        unet_ = PlaneUNet<T>(params_, "unet", cfg_, 2 * cfg_.latent_channels, cfg_.latent_channels, groups, rng);
    }

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const PlaneUNet<T>& unet() const { return unet_; }
    int64_t S() const { return S_; }
    int64_t Hp() const { return Hp_; }
    int64_t Wp() const { return Wp_; }

    /// `cond == nullptr` selects the null condition.
    Planes operator()(const Planes& zt, const Planes* cond, const std::vector<int64_t>& t) const {
        const int64_t B = zt.s.dim(0), C = cfg_.latent_channels;
        check(zt, B);
        if (static_cast<int64_t>(t.size()) != B) throw std::invalid_argument("denoiser: one timestep per sample");
        Planes c;
        if (cond) {
            check(*cond, B);
            c = *cond;
        } else {
            c = {Var<T>::constant(Tensor<T>(zt.s.shape())), Var<T>::constant(Tensor<T>(zt.h.shape())),
                 Var<T>::constant(Tensor<T>(zt.w.shape()))};
        }
        Planes out;
        if (stacked_) {
            const int64_t E = S_;
            std::vector<Var<T>> parts;
            for (int p = 0; p < 3; ++p) parts.push_back(reshape(concat(std::vector<Var<T>>{zt[p], c[p]}, 1), {B, 1, 2 * C, E, E}));
            Var<T> x = reshape(concat(parts, 1), {B * 3, 2 * C, E, E});
            Var<T> y = reshape(unet_({x}, t)[0], {B, 3, C, E, E});
            for (int p = 0; p < 3; ++p) out[p] = reshape(slice(y, 1, p, 1), {B, C, E, E});
        } else {
            std::vector<Var<T>> xs;
            for (int p = 0; p < 3; ++p) xs.push_back(concat(std::vector<Var<T>>{zt[p], c[p]}, 1));
            auto ys = unet_(xs, t);
            for (int p = 0; p < 3; ++p) out[p] = ys[static_cast<size_t>(p)];
        }
        return out;
    }

    /// Tensor-level convenience under no-grad.
    ae::Triplane<Tensor<T>> predict(const ae::Triplane<Tensor<T>>& zt, const ae::Triplane<Tensor<T>>* cond,
                                    const std::vector<int64_t>& t) const {
        NoGradGuard ng;
        Planes z{Var<T>::constant(zt.s), Var<T>::constant(zt.h), Var<T>::constant(zt.w)};
        Planes c;
        if (cond) c = {Var<T>::constant(cond->s), Var<T>::constant(cond->h), Var<T>::constant(cond->w)};
        auto out = (*this)(z, cond ? &c : nullptr, t);
        return {out.s.value(), out.h.value(), out.w.value()};
    }

private:
    void check(const Planes& z, int64_t B) const {
        const int64_t C = cfg_.latent_channels;
        const Shape es{B, C, Hp_, Wp_}, eh{B, C, S_, Wp_}, ew{B, C, S_, Hp_};
        if (z.s.shape() != es || z.h.shape() != eh || z.w.shape() != ew)
            throw std::invalid_argument("denoiser: plane shapes " + shape_str(z.s.shape()) + shape_str(z.h.shape()) +
                                        shape_str(z.w.shape()) + " do not match configured geometry");
    }

    DenoiserConfig cfg_;
    int64_t S_, Hp_, Wp_;
    bool stacked_ = false;
    ParamStore<T> params_;
    PlaneUNet<T> unet_;
};

/// Matched-width baseline over a cubic latent [B, C, S, H', W']: the same
/// U-Net run on every frame, with joint attention over all S*H'*W' tokens.
template <typename T>
class CubicDenoiser {
public:
    CubicDenoiser(const DenoiserConfig& cfg, int64_t S, int64_t Hp, int64_t Wp, uint64_t seed = 0)
        : cfg_(cfg), S_(S), Hp_(Hp), Wp_(Wp) {
        cfg_.validate();
        cfg_.validate_geometry(Hp, Hp, Wp);
        Rng rng = derive_rng(seed, {0xC0BE});
        unet_ = PlaneUNet<T>(params_, "unet", cfg_, 2 * cfg_.latent_channels, cfg_.latent_channels, {{S, Hp, Wp}}, rng);
    }

    ParamStore<T>& params() { return params_; }
    const PlaneUNet<T>& unet() const { return unet_; }

    Var<T> operator()(const Var<T>& zt, const std::vector<int64_t>& t) const {
        const int64_t B = zt.dim(0), C = cfg_.latent_channels;
        Var<T> frames = reshape(permute(zt, {0, 2, 1, 3, 4}), {B * S_, C, Hp_, Wp_});
        Var<T> x = concat(std::vector<Var<T>>{frames, Var<T>::constant(Tensor<T>(frames.shape()))}, 1);
        Var<T> y = unet_({x}, t)[0];
        return permute(reshape(y, {B, S_, C, Hp_, Wp_}), {0, 2, 1, 3, 4});
    }

private:
    DenoiserConfig cfg_;
    int64_t S_, Hp_, Wp_;
    ParamStore<T> params_;
    PlaneUNet<T> unet_;
};

}  // namespace pvdm::diffusion
