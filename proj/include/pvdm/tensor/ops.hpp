#pragma once

#include <cmath>

#include "pvdm/tensor/autograd.hpp"

namespace pvdm {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// y = f(x) elementwise; dydx(x, y) gives the local derivative.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F f, D dydx) {
    Tensor<T> y(x.shape());
    const T* xs = x.value().data();
    T* ys = y.data();
    for (int64_t i = 0; i < y.numel(); ++i) ys[i] = f(xs[i]);
    return make_result<T>(std::move(y), {x}, [dydx](Node<T>& n) {
        const Tensor<T>& xv = n.inputs[0]->value;
        Tensor<T> g(xv.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * dydx(xv[i], n.value[i]);
        n.inputs[0]->accumulate(std::move(g));
    });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& n) {
        n.inputs[0]->accumulate(n.grad);
        n.inputs[1]->accumulate(n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& n) {
        n.inputs[0]->accumulate(n.grad);
        n.inputs[1]->accumulate(n.grad * T(-1));
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> y(a.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor<T> g(av.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * bv[i];
            n.inputs[0]->accumulate(std::move(g));
        }
        if (n.inputs[1]->requires_grad) {
            Tensor<T> g(bv.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * av[i];
            n.inputs[1]->accumulate(std::move(g));
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    return make_result<T>(a.value() * s, {a}, [s](Node<T>& n) { n.inputs[0]->accumulate(n.grad * s); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> y = a.value();
    for (auto& v : y.values()) v += s;
    return make_result<T>(std::move(y), {a}, [](Node<T>& n) { n.inputs[0]->accumulate(n.grad); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

/// x + b where b's shape equals the trailing axes of x (biases, positional tables).
template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& b) {
    const int64_t inner = b.numel();
    const int k = b.rank();
    if (k > x.rank() || !std::equal(b.shape().begin(), b.shape().end(), x.shape().end() - k)) {
        throw std::invalid_argument("add_trailing: " + shape_str(b.shape()) + " is not a suffix of " +
                                    shape_str(x.shape()));
    }
    Tensor<T> y = x.value();
    const int64_t outer = inner ? y.numel() / inner : 0;
    const T* bs = b.value().data();
    for (int64_t o = 0; o < outer; ++o) {
        T* row = y.data() + o * inner;
        for (int64_t i = 0; i < inner; ++i) row[i] += bs[i];
    }
    return make_result<T>(std::move(y), {x, b}, [inner, outer](Node<T>& n) {
        n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor<T> g(n.inputs[1]->value.shape());
            for (int64_t o = 0; o < outer; ++o) {
                const T* row = n.grad.data() + o * inner;
                for (int64_t i = 0; i < inner; ++i) g[i] += row[i];
            }
            n.inputs[1]->accumulate(std::move(g));
        }
    });
}

/// x[N,C,...] + b broadcast over trailing spatial axes; b is [C] or [N,C].
template <typename T>
Var<T> add_channel(const Var<T>& x, const Var<T>& b) {
    if (x.rank() < 2) throw std::invalid_argument("add_channel: input rank < 2");
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t R = x.numel() / (N * C);
    const bool per_sample = b.rank() == 2;
    if (!((b.rank() == 1 && b.dim(0) == C) || (per_sample && b.dim(0) == N && b.dim(1) == C))) {
        throw std::invalid_argument("add_channel: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
    }
    Tensor<T> y = x.value();
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t c = 0; c < C; ++c) {
            const T bv = b.value()[per_sample ? i * C + c : c];
            T* p = y.data() + (i * C + c) * R;
            for (int64_t r = 0; r < R; ++r) p[r] += bv;
        }
    }
    return make_result<T>(std::move(y), {x, b}, [N, C, R, per_sample](Node<T>& n) {
        n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor<T> g(n.inputs[1]->value.shape());
            for (int64_t i = 0; i < N; ++i) {
                for (int64_t c = 0; c < C; ++c) {
                    const T* p = n.grad.data() + (i * C + c) * R;
                    T acc = 0;
                    for (int64_t r = 0; r < R; ++r) acc += p[r];
                    g[per_sample ? i * C + c : c] += acc;
                }
            }
            n.inputs[1]->accumulate(std::move(g));
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return detail::unary(
        x, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v, T) {
            const T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

/// tanh-approximated GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
    constexpr T k0 = T(0.7978845608028654);
    constexpr T k1 = T(0.044715);
    return detail::unary(
        x,
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v))); },
        [](T v, T) {
            const T u = k0 * (v + k1 * v * v * v);
            const T th = std::tanh(u);
            const T du = k0 * (T(1) + T(3) * k1 * v * v);
            return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    return make_result<T>(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& n) {
        n.inputs[0]->accumulate(n.grad.reshaped(n.inputs[0]->value.shape()));
    });
}

template <typename T>
Var<T> permute(const Var<T>& x, std::vector<int> perm) {
    Tensor<T> y = permute(x.value(), perm);
    return make_result<T>(std::move(y), {x}, [perm](Node<T>& n) {
        n.inputs[0]->accumulate(permute(n.grad, inverse_permutation(perm)));
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    std::vector<const Tensor<T>*> values;
    for (const auto& p : parts) values.push_back(&p.value());
    Tensor<T> y = concat(values, axis);
    if (axis < 0) axis += y.rank();
    std::vector<int64_t> extents;
    for (const auto& p : parts) extents.push_back(p.dim(axis));
    return make_result<T>(std::move(y), parts, [axis, extents](Node<T>& n) {
        int64_t start = 0;
        for (size_t i = 0; i < extents.size(); ++i) {
            if (n.inputs[i]->requires_grad) n.inputs[i]->accumulate(slice(n.grad, axis, start, extents[i]));
            start += extents[i];
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, int64_t start, int64_t len) {
    if (axis < 0) axis += x.rank();
    return make_result<T>(slice(x.value(), axis, start, len), {x}, [axis, start, len](Node<T>& n) {
        const Tensor<T>& xv = n.inputs[0]->value;
        Tensor<T> g(xv.shape());
        int64_t outer = 1, inner = 1;
        for (int a = 0; a < axis; ++a) outer *= xv.shape()[a];
        for (int a = axis + 1; a < xv.rank(); ++a) inner *= xv.shape()[a];
        const int64_t full = xv.shape()[axis] * inner;
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(n.grad.data() + o * len * inner, n.grad.data() + (o + 1) * len * inner,
                      g.data() + o * full + start * inner);
        }
        n.inputs[0]->accumulate(std::move(g));
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    Tensor<T> y({1}, x.value().sum());
    return make_result<T>(std::move(y), {x}, [](Node<T>& n) {
        n.inputs[0]->accumulate(Tensor<T>(n.inputs[0]->value.shape(), n.grad[0]));
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const T inv = T(1) / static_cast<T>(std::max<int64_t>(1, x.numel()));
    return scale(sum(x), inv);
}

/// [A, K, B] -> [A, B], averaging the middle axis.
template <typename T>
Var<T> mean_middle(const Var<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("mean_middle expects rank 3");
    const int64_t A = x.dim(0), K = x.dim(1), B = x.dim(2);
    Tensor<T> y({A, B});
    const T inv = T(1) / static_cast<T>(K);
    for (int64_t a = 0; a < A; ++a) {
        for (int64_t k = 0; k < K; ++k) {
            const T* src = x.value().data() + (a * K + k) * B;
            T* dst = y.data() + a * B;
            for (int64_t b = 0; b < B; ++b) dst[b] += src[b] * inv;
        }
    }
    return make_result<T>(std::move(y), {x}, [A, K, B, inv](Node<T>& n) {
        Tensor<T> g(n.inputs[0]->value.shape());
        for (int64_t a = 0; a < A; ++a) {
            for (int64_t k = 0; k < K; ++k) {
                T* dst = g.data() + (a * K + k) * B;
                const T* src = n.grad.data() + a * B;
                for (int64_t b = 0; b < B; ++b) dst[b] = src[b] * inv;
            }
        }
        n.inputs[0]->accumulate(std::move(g));
    });
}

/// mean |a - b| over all elements.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
    const T inv = T(1) / static_cast<T>(std::max<int64_t>(1, a.numel()));
    Tensor<T> y({1}, static_cast<T>(acc) * inv);
    return make_result<T>(std::move(y), {a, b}, [inv](Node<T>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        Tensor<T> g(av.shape());
        const T s = n.grad[0] * inv;
        for (int64_t i = 0; i < g.numel(); ++i) {
            const T d = av[i] - bv[i];
            g[i] = d > 0 ? s : (d < 0 ? -s : T(0));
        }
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(g * T(-1));
        n.inputs[0]->accumulate(std::move(g));
    });
}

/// mean (a - b)^2 over all elements.
template <typename T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mean_sq_diff");
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.value()[i]) - b.value()[i];
        acc += d * d;
    }
    const T inv = T(1) / static_cast<T>(std::max<int64_t>(1, a.numel()));
    Tensor<T> y({1}, static_cast<T>(acc) * inv);
    return make_result<T>(std::move(y), {a, b}, [inv](Node<T>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        Tensor<T> g(av.shape());
        const T s = T(2) * n.grad[0] * inv;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = s * (av[i] - bv[i]);
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(g * T(-1));
        n.inputs[0]->accumulate(std::move(g));
    });
}

/// Unit-normalizes x[N,C,...] along C at every position.
template <typename T>
Var<T> normalize_channels(const Var<T>& x, T eps = T(1e-10)) {
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t R = x.numel() / (N * C);
    Tensor<T> y(x.shape());
    Tensor<T> norms({N, R});
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t r = 0; r < R; ++r) {
            T ss = 0;
            for (int64_t c = 0; c < C; ++c) {
                const T v = x.value()[(i * C + c) * R + r];
                ss += v * v;
            }
            const T nrm = std::sqrt(ss) + eps;
            norms[i * R + r] = nrm;
            for (int64_t c = 0; c < C; ++c) y[(i * C + c) * R + r] = x.value()[(i * C + c) * R + r] / nrm;
        }
    }
    return make_result<T>(std::move(y), {x}, [N, C, R, norms = std::move(norms), eps](Node<T>& n) {
        const auto& xv = n.inputs[0]->value;
        Tensor<T> g(xv.shape());
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t r = 0; r < R; ++r) {
                const T nrm = norms[i * R + r];
                const T s = nrm - eps;  // plain L2 norm
                T dot = 0;
                for (int64_t c = 0; c < C; ++c) dot += n.grad[(i * C + c) * R + r] * xv[(i * C + c) * R + r];
                // y = x / (|x| + eps)  =>  dy = g/nrm - x (g.x) / (|x| nrm^2)
                const T coef = s > 0 ? dot / (s * nrm * nrm) : T(0);
                for (int64_t c = 0; c < C; ++c) {
                    const int64_t k = (i * C + c) * R + r;
                    g[k] = n.grad[k] / nrm - xv[k] * coef;
                }
            }
        }
        n.inputs[0]->accumulate(std::move(g));
    });
}

/// Nearest-neighbour 2x upsampling of the last two axes.
template <typename T>
Var<T> upsample2x(const Var<T>& x) {
    const int64_t H = x.dim(-2), W = x.dim(-1);
    const int64_t M = x.numel() / (H * W);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = 2 * H;
    out_shape[out_shape.size() - 1] = 2 * W;
    Tensor<T> y(out_shape);
    for (int64_t m = 0; m < M; ++m) {
        const T* src = x.value().data() + m * H * W;
        T* dst = y.data() + m * 4 * H * W;
        for (int64_t h = 0; h < 2 * H; ++h) {
            for (int64_t w = 0; w < 2 * W; ++w) dst[h * 2 * W + w] = src[(h / 2) * W + w / 2];
        }
    }
    return make_result<T>(std::move(y), {x}, [M, H, W](Node<T>& n) {
        Tensor<T> g(n.inputs[0]->value.shape());
        for (int64_t m = 0; m < M; ++m) {
            const T* src = n.grad.data() + m * 4 * H * W;
            T* dst = g.data() + m * H * W;
            for (int64_t h = 0; h < 2 * H; ++h) {
                for (int64_t w = 0; w < 2 * W; ++w) dst[(h / 2) * W + w / 2] += src[h * 2 * W + w];
            }
        }
        n.inputs[0]->accumulate(std::move(g));
    });
}

}  // namespace pvdm
