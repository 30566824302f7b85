#pragma once

#include <algorithm>
#include <string>

#include "pvdm/nn/params.hpp"
#include "pvdm/tensor/nn_ops.hpp"

namespace pvdm::nn {

template <typename T>
struct Linear {
    Var<T> weight, bias;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng, bool with_bias = true) {
        weight = ps.add_fan_in(name + ".weight", {out, in}, in, rng);
        if (with_bias) bias = ps.add_constant(name + ".bias", {out}, T(0));
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
    Var<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& name, int64_t dim) {
        gamma = ps.add_constant(name + ".gamma", {dim}, T(1));
        beta = ps.add_constant(name + ".beta", {dim}, T(0));
    }

    Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct GroupNorm {
    Var<T> gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamStore<T>& ps, const std::string& name, int64_t channels, int max_groups = 8) {
        groups = static_cast<int>(std::min<int64_t>(max_groups, channels));
        while (channels % groups != 0) --groups;
        gamma = ps.add_constant(name + ".gamma", {channels}, T(1));
        beta = ps.add_constant(name + ".beta", {channels}, T(0));
    }

    Var<T> operator()(const Var<T>& x) const { return group_norm(x, groups, gamma, beta); }
};

template <typename T>
struct Conv2d {
    Var<T> weight, bias;
    int64_t stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kernel, Rng& rng,
           int64_t stride_ = 1, int64_t pad_ = -1)
        : stride(stride_), pad(pad_ < 0 ? kernel / 2 : pad_) {
        weight = ps.add_fan_in(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel, rng);
        bias = ps.add_constant(name + ".bias", {out}, T(0));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// Multi-head self-attention over [B, L, D] token sequences.
template <typename T>
struct SelfAttention {
    Linear<T> qkv, out;
    int heads = 1;
    int64_t width = 0;
    bool diagonal_only = false;

    SelfAttention() = default;
    SelfAttention(ParamStore<T>& ps, const std::string& name, int64_t dim, int heads_, Rng& rng, bool diag = false)
        : heads(heads_), width(dim), diagonal_only(diag) {
        if (dim % heads_ != 0) throw std::invalid_argument(name + ": width " + std::to_string(dim) + " not divisible by heads");
        qkv = Linear<T>(ps, name + ".qkv", dim, 3 * dim, rng);
        out = Linear<T>(ps, name + ".out", dim, dim, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> p = qkv(x);
        Var<T> q = slice(p, -1, 0, width);
        Var<T> k = slice(p, -1, width, width);
        Var<T> v = slice(p, -1, 2 * width, width);
        return out(attention(q, k, v, heads, diagonal_only));
    }
};

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t hidden, Rng& rng)
        : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}

    Var<T> operator()(const Var<T>& x) const { return fc2(gelu(fc1(x))); }
};

/// Pre-norm transformer block over [B, L, D].
template <typename T>
struct TransformerBlock {
    LayerNorm<T> norm1, norm2;
    SelfAttention<T> attn;
    Mlp<T> mlp;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& name, int64_t dim, int heads, int64_t mlp_hidden, Rng& rng,
                     bool diagonal_only = false)
        : norm1(ps, name + ".norm1", dim),
          norm2(ps, name + ".norm2", dim),
          attn(ps, name + ".attn", dim, heads, rng, diagonal_only),
          mlp(ps, name + ".mlp", dim, mlp_hidden, rng) {}

    Var<T> operator()(Var<T> x) const {
        x = add(x, attn(norm1(x)));
        return add(x, mlp(norm2(x)));
    }
};

}  // namespace pvdm::nn
