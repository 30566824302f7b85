#pragma once

#include <stdexcept>

#include "pvdm/tensor/autograd.hpp"

namespace pvdm::ae {

/// Three latent planes, batched: s [B,C,H',W'], h [B,C,S,W'], w [B,C,S,H'].
template <typename X>
struct Triplane {
    X s, h, w;

    X& operator[](int i) { return i == 0 ? s : (i == 1 ? h : w); }
    const X& operator[](int i) const { return i == 0 ? s : (i == 1 ? h : w); }
};

using TriplaneLatent = Triplane<Tensor<float>>;

struct PlaneGeometry {
    int64_t B, C, S, Hp, Wp;
};

template <typename T>
PlaneGeometry plane_geometry(const Shape& s, const Shape& h, const Shape& w) {
    if (s.size() != 4 || h.size() != 4 || w.size() != 4) throw std::invalid_argument("triplane planes must be rank 4");
    PlaneGeometry g{s[0], s[1], h[2], s[2], s[3]};
    if (h[0] != g.B || w[0] != g.B || h[1] != g.C || w[1] != g.C || h[3] != g.Wp || w[2] != g.S || w[3] != g.Hp) {
        throw std::invalid_argument("inconsistent triplane shapes: s" + shape_str(s) + " h" + shape_str(h) + " w" + shape_str(w));
    }
    return g;
}

namespace detail {

// v[b, :, s, y, x] = [zs[b,:,y,x], zh[b,:,s,x], zw[b,:,s,y]]; `scatter` reverses it by summation.
template <typename T, bool Scatter>
void grid_pass(const PlaneGeometry& g, T* zs, T* zh, T* zw, T* v) {
    const int64_t C = g.C, S = g.S, Hp = g.Hp, Wp = g.Wp;
    const int64_t vol = S * Hp * Wp;
    for (int64_t b = 0; b < g.B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            T* ps = zs + (b * C + c) * Hp * Wp;
            T* ph = zh + (b * C + c) * S * Wp;
            T* pw = zw + (b * C + c) * S * Hp;
            T* vs = v + (b * 3 * C + c) * vol;
            T* vh = v + (b * 3 * C + C + c) * vol;
            T* vw = v + (b * 3 * C + 2 * C + c) * vol;
            for (int64_t s = 0; s < S; ++s)
                for (int64_t y = 0; y < Hp; ++y)
                    for (int64_t x = 0; x < Wp; ++x) {
                        const int64_t o = (s * Hp + y) * Wp + x;
                        if constexpr (Scatter) {
                            ps[y * Wp + x] += vs[o];
                            ph[s * Wp + x] += vh[o];
                            pw[s * Hp + y] += vw[o];
                        } else {
                            vs[o] = ps[y * Wp + x];
                            vh[o] = ph[s * Wp + x];
                            vw[o] = pw[s * Hp + y];
                        }
                    }
        }
    }
}

}  // namespace detail

/// Broadcasts the planes into the grid v [B, 3C, S, H', W'].
template <typename T>
Tensor<T> build_latent_grid(const Triplane<Tensor<T>>& z) {
    const auto g = plane_geometry<T>(z.s.shape(), z.h.shape(), z.w.shape());
    Tensor<T> v({g.B, 3 * g.C, g.S, g.Hp, g.Wp});
    detail::grid_pass<T, false>(g, const_cast<T*>(z.s.data()), const_cast<T*>(z.h.data()), const_cast<T*>(z.w.data()),
                                v.data());
    return v;
}

template <typename T>
Var<T> build_latent_grid(const Triplane<Var<T>>& z) {
    const auto g = plane_geometry<T>(z.s.shape(), z.h.shape(), z.w.shape());
    Tensor<T> v = build_latent_grid(Triplane<Tensor<T>>{z.s.value(), z.h.value(), z.w.value()});
    return make_result<T>(std::move(v), {z.s, z.h, z.w}, [g](Node<T>& out) {
        Tensor<T> gs(out.inputs[0]->value.shape()), gh(out.inputs[1]->value.shape()), gw(out.inputs[2]->value.shape());
        detail::grid_pass<T, true>(g, gs.data(), gh.data(), gw.data(), out.grad.data());
        out.inputs[0]->accumulate(std::move(gs));
        out.inputs[1]->accumulate(std::move(gh));
        out.inputs[2]->accumulate(std::move(gw));
    });
}

template <typename T>
int64_t triplane_numel(const Triplane<Tensor<T>>& z) {
    return z.s.numel() + z.h.numel() + z.w.numel();
}

/// Selects batch element `i` from each plane, keeping a batch axis of 1.
template <typename T>
Triplane<Tensor<T>> triplane_item(const Triplane<Tensor<T>>& z, int64_t i) {
    return {slice(z.s, 0, i, 1), slice(z.h, 0, i, 1), slice(z.w, 0, i, 1)};
}

template <typename T>
Triplane<Tensor<T>> triplane_concat(const std::vector<Triplane<Tensor<T>>>& items) {
    Triplane<Tensor<T>> out;
    for (int p = 0; p < 3; ++p) {
        std::vector<const Tensor<T>*> parts;
        for (const auto& z : items) parts.push_back(&z[p]);
        out[p] = concat(parts, 0);
    }
    return out;
}

}  // namespace pvdm::ae
