#pragma once

#include <string>
#include <vector>

#include "pvdm/autoencoder/config.hpp"
#include "pvdm/autoencoder/latent.hpp"
#include "pvdm/nn/layers.hpp"
#include "pvdm/tensor/ops.hpp"

namespace pvdm::ae {

/// Space-time factorized block over tokens [B, S, Y, X, D]: temporal
/// attention, then spatial attention, then MLP, each pre-norm residual.
template <typename T>
struct FactorizedBlock {
    nn::LayerNorm<T> norm_t, norm_s, norm_m;
    nn::SelfAttention<T> attn_t, attn_s;
    nn::Mlp<T> mlp;

    FactorizedBlock() = default;
    FactorizedBlock(ParamStore<T>& ps, const std::string& name, int64_t dim, int heads, int64_t hidden, Rng& rng, bool local)
        : norm_t(ps, name + ".norm_t", dim),
          norm_s(ps, name + ".norm_s", dim),
          norm_m(ps, name + ".norm_m", dim),
          attn_t(ps, name + ".attn_t", dim, heads, rng, local),
          attn_s(ps, name + ".attn_s", dim, heads, rng, local),
          mlp(ps, name + ".mlp", dim, hidden, rng) {}

    Var<T> operator()(Var<T> x) const {
        const Shape sh = x.shape();
        const int64_t B = sh[0], S = sh[1], Y = sh[2], X = sh[3], D = sh[4];
        Var<T> t = reshape(permute(x, {0, 2, 3, 1, 4}), {B * Y * X, S, D});
        t = add(t, attn_t(norm_t(t)));
        x = permute(reshape(t, {B, Y, X, S, D}), {0, 3, 1, 2, 4});
        Var<T> s = reshape(x, {B * S, Y * X, D});
        s = add(s, attn_s(norm_s(s)));
        s = add(s, mlp(norm_m(s)));
        return reshape(s, sh);
    }
};

template <typename T>
Var<T> learned_embedding(ParamStore<T>& ps, const std::string& name, Shape shape, Rng& rng) {
    return ps.add(name, Tensor<T>::randn(std::move(shape), rng, T(0.02)));
}

/// Reduces [N, L, D] sequences to one C-vector each: a small transformer
/// with a learnable summary token, then linear and tanh.
template <typename T>
struct AxisProjection {
    ProjectionKind kind = ProjectionKind::transformer;
    nn::Linear<T> in, head;
    Var<T> summary, pos;
    std::vector<nn::TransformerBlock<T>> blocks;
    nn::LayerNorm<T> norm;

    AxisProjection() = default;
    AxisProjection(ParamStore<T>& ps, const std::string& name, const AutoencoderConfig& c, int64_t length, Rng& rng)
        : kind(c.projection) {
        if (kind == ProjectionKind::mean) {
            head = nn::Linear<T>(ps, name + ".head", c.width, c.C, rng);
            return;
        }
        in = nn::Linear<T>(ps, name + ".in", c.width, c.proj_width, rng);
        summary = learned_embedding<T>(ps, name + ".summary", {1, c.proj_width}, rng);
        pos = learned_embedding<T>(ps, name + ".pos", {length + 1, c.proj_width}, rng);
        for (int i = 0; i < c.proj_depth; ++i)
            blocks.emplace_back(ps, name + ".block" + std::to_string(i), c.proj_width, c.proj_heads, c.proj_mlp, rng);
        norm = nn::LayerNorm<T>(ps, name + ".norm", c.proj_width);
        head = nn::Linear<T>(ps, name + ".head", c.proj_width, c.C, rng);
    }

    // seq [N, L, D] -> [N, C]
    Var<T> operator()(const Var<T>& seq) const {
        if (kind == ProjectionKind::mean) return tanh(head(mean_middle(seq)));
        const int64_t N = seq.dim(0);
        Var<T> x = in(seq);
        Var<T> tok = add_trailing(Var<T>::constant(Tensor<T>({N, 1, x.dim(2)})), summary);
        x = add_trailing(concat(std::vector<Var<T>>{tok, x}, 1), pos);
        for (const auto& b : blocks) x = b(x);
        Var<T> first = reshape(slice(norm(x), 1, 0, 1), {N, x.dim(2)});
        return tanh(head(first));
    }
};

/// Video autoencoder with a triplane latent. Encoder: patch embedding, an
/// optional high-resolution stage, 2D pooling to (H', W'), factorized
/// space-time blocks, then one projection per axis. Decoder mirrors it from
/// the broadcast latent grid.
template <typename T>
class TriplaneAutoencoder {
public:
    explicit TriplaneAutoencoder(const AutoencoderConfig& cfg, uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = derive_rng(seed, {0xAE});
        const auto& c = cfg_;
        const int64_t Hq = c.H / c.patch, Wq = c.W / c.patch, pp3 = c.patch * c.patch * 3;
        const bool local = c.local_attention;
        auto& ps = params_;

        embed_ = nn::Linear<T>(ps, "enc.embed", pp3, c.width, rng);
        enc_pos_hi_ = learned_embedding<T>(ps, "enc.pos_hi", {c.S, Hq, Wq, c.width}, rng);
        if (c.pool > 1) {
            // Per-patch nonlinearity before pooling mixes patches together.
            enc_patch_norm_ = nn::LayerNorm<T>(ps, "enc.patch_norm", c.width);
            enc_patch_mlp_ = nn::Mlp<T>(ps, "enc.patch_mlp", c.width, c.mlp_hidden, rng);
        }
        for (int i = 0; i < c.depth_hi; ++i)
            enc_hi_.emplace_back(ps, "enc.hi" + std::to_string(i), c.width, c.heads, c.mlp_hidden, rng, local);
        if (c.pool > 1) enc_pos_ = learned_embedding<T>(ps, "enc.pos", {c.S, c.Hp(), c.Wp(), c.width}, rng);
        for (int i = 0; i < c.depth; ++i)
            enc_blocks_.emplace_back(ps, "enc.block" + std::to_string(i), c.width, c.heads, c.mlp_hidden, rng, local);
        enc_norm_ = nn::LayerNorm<T>(ps, "enc.norm", c.width);
        proj_s_ = AxisProjection<T>(ps, "enc.proj_s", c, c.S, rng);
        proj_h_ = AxisProjection<T>(ps, "enc.proj_h", c, c.Hp(), rng);
        proj_w_ = AxisProjection<T>(ps, "enc.proj_w", c, c.Wp(), rng);

        dec_in_ = nn::Linear<T>(ps, "dec.in", 3 * c.C, c.width, rng);
        dec_pos_ = learned_embedding<T>(ps, "dec.pos", {c.S, c.Hp(), c.Wp(), c.width}, rng);
        for (int i = 0; i < c.dec_depth; ++i)
            dec_blocks_.emplace_back(ps, "dec.block" + std::to_string(i), c.width, c.heads, c.mlp_hidden, rng, local);
        if (c.pool > 1) {
            dec_norm_up_ = nn::LayerNorm<T>(ps, "dec.norm_up", c.width);
            dec_up_ = nn::Linear<T>(ps, "dec.up", c.width, c.pool * c.pool * c.width, rng);
            dec_pos_hi_ = learned_embedding<T>(ps, "dec.pos_hi", {c.S, Hq, Wq, c.width}, rng);
            // Without it each d x d output block is nearly linear in one token.
            dec_patch_norm_ = nn::LayerNorm<T>(ps, "dec.patch_norm", c.width);
            dec_patch_mlp_ = nn::Mlp<T>(ps, "dec.patch_mlp", c.width, c.mlp_hidden, rng);
        }
        for (int i = 0; i < c.dec_depth_hi; ++i)
            dec_hi_.emplace_back(ps, "dec.hi" + std::to_string(i), c.width, c.heads, c.mlp_hidden, rng, local);
        dec_norm_ = nn::LayerNorm<T>(ps, "dec.norm", c.width);
        dec_out_ = nn::Linear<T>(ps, "dec.out", c.width, pp3, rng);
    }

    const AutoencoderConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    void check_input(const Shape& x) const {
        const auto& c = cfg_;
        if (x.size() != 5 || x[1] != 3 || x[2] != c.S || x[3] != c.H || x[4] != c.W) {
            throw std::invalid_argument("autoencoder expects [B,3," + std::to_string(c.S) + "," + std::to_string(c.H) + "," +
                                        std::to_string(c.W) + "], got " + shape_str(x));
        }
    }

    /// Backbone features u: [B, S, H', W', D].
    Var<T> features(const Var<T>& x) const {
        check_input(x.shape());
        const auto& c = cfg_;
        const int64_t B = x.dim(0), p = c.patch, q = c.pool;
        const int64_t Hq = c.H / p, Wq = c.W / p;
        Var<T> t = reshape(x, {B, 3, c.S, Hq, p, Wq, p});
        t = reshape(permute(t, {0, 2, 3, 5, 1, 4, 6}), {B, c.S, Hq, Wq, 3 * p * p});
        t = add_trailing(embed_(t), enc_pos_hi_);
        if (q > 1) t = add(t, enc_patch_mlp_(enc_patch_norm_(t)));
        for (const auto& b : enc_hi_) t = b(t);
        if (q > 1) {
            t = reshape(t, {B, c.S, c.Hp(), q, c.Wp(), q, c.width});
            t = reshape(permute(t, {0, 1, 2, 4, 3, 5, 6}), {B * c.S * c.Hp() * c.Wp(), q * q, c.width});
            t = reshape(mean_middle(t), {B, c.S, c.Hp(), c.Wp(), c.width});
            t = add_trailing(t, enc_pos_);
        }
        for (const auto& b : enc_blocks_) t = b(t);
        return enc_norm_(t);
    }

    Triplane<Var<T>> encode(const Var<T>& x) const {
        const auto& c = cfg_;
        const int64_t B = x.dim(0), S = c.S, Hp = c.Hp(), Wp = c.Wp(), D = c.width;
        Var<T> u = features(x);
        Triplane<Var<T>> z;
        // z_s: reduce over time for every (h, w)
        Var<T> zs = proj_s_(reshape(permute(u, {0, 2, 3, 1, 4}), {B * Hp * Wp, S, D}));
        z.s = permute(reshape(zs, {B, Hp, Wp, c.C}), {0, 3, 1, 2});
        // z_h: reduce over height for every (s, w)
        Var<T> zh = proj_h_(reshape(permute(u, {0, 1, 3, 2, 4}), {B * S * Wp, Hp, D}));
        z.h = permute(reshape(zh, {B, S, Wp, c.C}), {0, 3, 1, 2});
        // z_w: reduce over width for every (s, h)
        Var<T> zw = proj_w_(reshape(u, {B * S * Hp, Wp, D}));
        z.w = permute(reshape(zw, {B, S, Hp, c.C}), {0, 3, 1, 2});
        return z;
    }

    /// Reconstruction from a latent grid v [B, 3C, S, H', W'].
    Var<T> decode_grid(const Var<T>& v) const {
        const auto& c = cfg_;
        const int64_t B = v.dim(0), p = c.patch, q = c.pool;
        const int64_t Hq = c.H / p, Wq = c.W / p;
        if (v.rank() != 5 || v.dim(1) != 3 * c.C || v.dim(2) != c.S || v.dim(3) != c.Hp() || v.dim(4) != c.Wp())
            throw std::invalid_argument("latent grid shape mismatch: " + shape_str(v.shape()));
        Var<T> t = add_trailing(dec_in_(permute(v, {0, 2, 3, 4, 1})), dec_pos_);
        for (const auto& b : dec_blocks_) t = b(t);
        if (q > 1) {
            t = reshape(dec_up_(dec_norm_up_(t)), {B, c.S, c.Hp(), c.Wp(), q, q, c.width});
            t = reshape(permute(t, {0, 1, 2, 4, 3, 5, 6}), {B, c.S, Hq, Wq, c.width});
            t = add_trailing(t, dec_pos_hi_);
            t = add(t, dec_patch_mlp_(dec_patch_norm_(t)));
        }
        for (const auto& b : dec_hi_) t = b(t);
        t = reshape(dec_out_(dec_norm_(t)), {B, c.S, Hq, Wq, 3, p, p});
        t = reshape(permute(t, {0, 4, 1, 2, 5, 3, 6}), {B, 3, c.S, c.H, c.W});
        return tanh(t);
    }

    Var<T> decode(const Triplane<Var<T>>& z) const { return decode_grid(build_latent_grid(z)); }

    Var<T> reconstruct(const Var<T>& x) const { return decode(encode(x)); }

    // Inference helpers over plain tensors, processed in chunks of `batch`.
    Triplane<Tensor<T>> encode_tensor(const Tensor<T>& x, int64_t batch = 8) const {
        NoGradGuard ng;
        std::vector<Triplane<Tensor<T>>> parts;
        for (int64_t i = 0; i < x.dim(0); i += batch) {
            const int64_t n = std::min(batch, x.dim(0) - i);
            auto z = encode(Var<T>::constant(slice(x, 0, i, n)));
            parts.push_back({z.s.value(), z.h.value(), z.w.value()});
        }
        return triplane_concat(parts);
    }

    Tensor<T> decode_tensor(const Triplane<Tensor<T>>& z, int64_t batch = 8) const {
        NoGradGuard ng;
        std::vector<Tensor<T>> parts;
        const int64_t B = z.s.dim(0);
        for (int64_t i = 0; i < B; i += batch) {
            const int64_t n = std::min(batch, B - i);
            Triplane<Var<T>> zv{Var<T>::constant(slice(z.s, 0, i, n)), Var<T>::constant(slice(z.h, 0, i, n)),
                                Var<T>::constant(slice(z.w, 0, i, n))};
            parts.push_back(decode(zv).value());
        }
        std::vector<const Tensor<T>*> ptrs;
        for (const auto& p : parts) ptrs.push_back(&p);
        return concat(ptrs, 0);
    }

private:
    AutoencoderConfig cfg_;
    ParamStore<T> params_;
    nn::Linear<T> embed_;
    Var<T> enc_pos_hi_, enc_pos_;
    std::vector<FactorizedBlock<T>> enc_hi_, enc_blocks_;
    nn::LayerNorm<T> enc_norm_;
    AxisProjection<T> proj_s_, proj_h_, proj_w_;
    nn::Linear<T> dec_in_, dec_up_, dec_out_;
    Var<T> dec_pos_, dec_pos_hi_;
    std::vector<FactorizedBlock<T>> dec_blocks_, dec_hi_;
    nn::LayerNorm<T> dec_norm_up_, dec_norm_, enc_patch_norm_, dec_patch_norm_;
    nn::Mlp<T> enc_patch_mlp_, dec_patch_mlp_;
};

}  // namespace pvdm::ae
