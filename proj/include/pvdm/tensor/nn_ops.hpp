#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>

#include "pvdm/tensor/ops.hpp"

namespace pvdm {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

/// y = x W^T + b over the last axis. W is [out, in], b is [out] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const int64_t K = weight.dim(1), N = weight.dim(0);
    if (x.dim(-1) != K) {
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    }
    const int64_t M = x.numel() / K;
    Shape out_shape = x.shape();
    out_shape.back() = N;
    Tensor<T> y(out_shape);
    MatMap<T> Y(y.data(), M, N);
    ConstMatMap<T> X(x.value().data(), M, K);
    ConstMatMap<T> Wm(weight.value().data(), N, K);
    Y.noalias() = X * Wm.transpose();
    const bool has_bias = bias.defined();
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), N);
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(std::move(y), std::move(inputs), [M, K, N, has_bias](Node<T>& n) {
        ConstMatMap<T> G(n.grad.data(), M, N);
        auto& xin = *n.inputs[0];
        auto& win = *n.inputs[1];
        if (xin.requires_grad) {
            Tensor<T> gx(xin.value.shape());
            MatMap<T>(gx.data(), M, K).noalias() = G * ConstMatMap<T>(win.value.data(), N, K);
            xin.accumulate(std::move(gx));
        }
        if (win.requires_grad) {
            MatMap<T>(win.grad_buffer().data(), N, K).noalias() += G.transpose() * ConstMatMap<T>(xin.value.data(), M, K);
        }
        if (has_bias && n.inputs[2]->requires_grad) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(n.inputs[2]->grad_buffer().data(), N) += G.colwise().sum();
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight) {
    return linear(x, weight, Var<T>());
}

/// Layer normalization over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const int64_t D = x.dim(-1);
    const int64_t M = x.numel() / D;
    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    Tensor<T> rstd({M});
    for (int64_t m = 0; m < M; ++m) {
        const T* row = x.value().data() + m * D;
        T mu = 0;
        for (int64_t d = 0; d < D; ++d) mu += row[d];
        mu /= static_cast<T>(D);
        T var = 0;
        for (int64_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
        var /= static_cast<T>(D);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[m] = rs;
        for (int64_t d = 0; d < D; ++d) {
            const T xh = (row[d] - mu) * rs;
            xhat[m * D + d] = xh;
            y[m * D + d] = xh * gamma.value()[d] + beta.value()[d];
        }
    }
    return make_result<T>(std::move(y), {x, gamma, beta}, [M, D, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
        const auto& gv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor<T> gx(xhat.shape());
            for (int64_t m = 0; m < M; ++m) {
                T sum_g = 0, sum_gx = 0;
                for (int64_t d = 0; d < D; ++d) {
                    const T g = n.grad[m * D + d] * gv[d];
                    sum_g += g;
                    sum_gx += g * xhat[m * D + d];
                }
                const T invD = T(1) / static_cast<T>(D);
                for (int64_t d = 0; d < D; ++d) {
                    const T g = n.grad[m * D + d] * gv[d];
                    gx[m * D + d] = rstd[m] * (g - invD * sum_g - xhat[m * D + d] * invD * sum_gx);
                }
            }
            n.inputs[0]->accumulate(std::move(gx));
        }
        if (n.inputs[1]->requires_grad || n.inputs[2]->requires_grad) {
            Tensor<T> gg({D}), gb({D});
            for (int64_t m = 0; m < M; ++m) {
                for (int64_t d = 0; d < D; ++d) {
                    gg[d] += n.grad[m * D + d] * xhat[m * D + d];
                    gb[d] += n.grad[m * D + d];
                }
            }
            n.inputs[1]->accumulate(std::move(gg));
            n.inputs[2]->accumulate(std::move(gb));
        }
    });
}

/// Group normalization of x[N, C, ...] with per-channel affine parameters.
template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t R = x.numel() / (N * C);
    if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int64_t Cg = C / groups;
    const int64_t len = Cg * R;
    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    Tensor<T> rstd({N * groups});
    for (int64_t i = 0; i < N * groups; ++i) {
        const T* src = x.value().data() + i * len;
        double mu = 0;
        for (int64_t k = 0; k < len; ++k) mu += src[k];
        mu /= static_cast<double>(len);
        double var = 0;
        for (int64_t k = 0; k < len; ++k) var += (src[k] - mu) * (src[k] - mu);
        var /= static_cast<double>(len);
        const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
        rstd[i] = rs;
        const int64_t c0 = (i % groups) * Cg;
        for (int64_t k = 0; k < len; ++k) {
            const T xh = (src[k] - static_cast<T>(mu)) * rs;
            const int64_t c = c0 + k / R;
            xhat[i * len + k] = xh;
            y[i * len + k] = xh * gamma.value()[c] + beta.value()[c];
        }
    }
    return make_result<T>(std::move(y), {x, gamma, beta}, [N, C, R, groups, Cg, len, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
        const auto& gv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor<T> gx(xhat.shape());
            for (int64_t i = 0; i < N * groups; ++i) {
                const int64_t c0 = (i % groups) * Cg;
                T sum_g = 0, sum_gx = 0;
                for (int64_t k = 0; k < len; ++k) {
                    const T g = n.grad[i * len + k] * gv[c0 + k / R];
                    sum_g += g;
                    sum_gx += g * xhat[i * len + k];
                }
                const T inv = T(1) / static_cast<T>(len);
                for (int64_t k = 0; k < len; ++k) {
                    const T g = n.grad[i * len + k] * gv[c0 + k / R];
                    gx[i * len + k] = rstd[i] * (g - inv * sum_g - xhat[i * len + k] * inv * sum_gx);
                }
            }
            n.inputs[0]->accumulate(std::move(gx));
        }
        if (n.inputs[1]->requires_grad || n.inputs[2]->requires_grad) {
            Tensor<T> gg({C}), gb({C});
            for (int64_t i = 0; i < N; ++i) {
                for (int64_t c = 0; c < C; ++c) {
                    const int64_t base = (i * C + c) * R;
                    for (int64_t r = 0; r < R; ++r) {
                        gg[c] += n.grad[base + r] * xhat[base + r];
                        gb[c] += n.grad[base + r];
                    }
                }
            }
            n.inputs[1]->accumulate(std::move(gg));
            n.inputs[2]->accumulate(std::move(gb));
        }
    });
}

/// Geometry of an N-d convolution over the trailing `Dims` axes.
template <size_t Dims>
struct ConvGeometry {
    std::array<int64_t, Dims> in{}, kernel{}, stride{}, pad{}, out{};
    int64_t in_channels = 0;

    int64_t in_size() const {
        int64_t s = 1;
        for (auto v : in) s *= v;
        return s;
    }
    int64_t out_size() const {
        int64_t s = 1;
        for (auto v : out) s *= v;
        return s;
    }
    int64_t kernel_size() const {
        int64_t s = 1;
        for (auto v : kernel) s *= v;
        return s;
    }
};

namespace detail {

// cols[(c, k...), (o...)] gathered from one image.
template <typename T, size_t Dims>
void im2col(const T* img, const ConvGeometry<Dims>& g, T* cols) {
    const int64_t K = g.kernel_size(), O = g.out_size();
    std::array<int64_t, Dims> kidx{}, oidx{};
    for (int64_t c = 0; c < g.in_channels; ++c) {
        const T* plane = img + c * g.in_size();
        for (int64_t k = 0; k < K; ++k) {
            int64_t rem = k;
            for (int d = static_cast<int>(Dims) - 1; d >= 0; --d) {
                kidx[d] = rem % g.kernel[d];
                rem /= g.kernel[d];
            }
            T* row = cols + (c * K + k) * O;
            if constexpr (Dims == 2) {
                for (int64_t oh = 0; oh < g.out[0]; ++oh) {
                    const int64_t ih = oh * g.stride[0] - g.pad[0] + kidx[0];
                    T* dst = row + oh * g.out[1];
                    if (ih < 0 || ih >= g.in[0]) {
                        std::fill(dst, dst + g.out[1], T(0));
                        continue;
                    }
                    const T* src = plane + ih * g.in[1];
                    for (int64_t ow = 0; ow < g.out[1]; ++ow) {
                        const int64_t iw = ow * g.stride[1] - g.pad[1] + kidx[1];
                        dst[ow] = (iw >= 0 && iw < g.in[1]) ? src[iw] : T(0);
                    }
                }
            } else {
                for (int64_t o = 0; o < O; ++o) {
                    int64_t orem = o;
                    for (int d = static_cast<int>(Dims) - 1; d >= 0; --d) {
                        oidx[d] = orem % g.out[d];
                        orem /= g.out[d];
                    }
                    int64_t off = 0;
                    bool inside = true;
                    for (size_t d = 0; d < Dims; ++d) {
                        const int64_t i = oidx[d] * g.stride[d] - g.pad[d] + kidx[d];
                        if (i < 0 || i >= g.in[d]) {
                            inside = false;
                            break;
                        }
                        off = off * g.in[d] + i;
                    }
                    row[o] = inside ? plane[off] : T(0);
                }
            }
        }
    }
}

template <typename T, size_t Dims>
void col2im(const T* cols, const ConvGeometry<Dims>& g, T* img) {
    const int64_t K = g.kernel_size(), O = g.out_size();
    std::array<int64_t, Dims> kidx{}, oidx{};
    for (int64_t c = 0; c < g.in_channels; ++c) {
        T* plane = img + c * g.in_size();
        for (int64_t k = 0; k < K; ++k) {
            int64_t rem = k;
            for (int d = static_cast<int>(Dims) - 1; d >= 0; --d) {
                kidx[d] = rem % g.kernel[d];
                rem /= g.kernel[d];
            }
            const T* row = cols + (c * K + k) * O;
            if constexpr (Dims == 2) {
                for (int64_t oh = 0; oh < g.out[0]; ++oh) {
                    const int64_t ih = oh * g.stride[0] - g.pad[0] + kidx[0];
                    if (ih < 0 || ih >= g.in[0]) continue;
                    const T* src = row + oh * g.out[1];
                    T* dst = plane + ih * g.in[1];
                    for (int64_t ow = 0; ow < g.out[1]; ++ow) {
                        const int64_t iw = ow * g.stride[1] - g.pad[1] + kidx[1];
                        if (iw >= 0 && iw < g.in[1]) dst[iw] += src[ow];
                    }
                }
            } else {
                for (int64_t o = 0; o < O; ++o) {
                    int64_t orem = o;
                    for (int d = static_cast<int>(Dims) - 1; d >= 0; --d) {
                        oidx[d] = orem % g.out[d];
                        orem /= g.out[d];
                    }
                    int64_t off = 0;
                    bool inside = true;
                    for (size_t d = 0; d < Dims; ++d) {
                        const int64_t i = oidx[d] * g.stride[d] - g.pad[d] + kidx[d];
                        if (i < 0 || i >= g.in[d]) {
                            inside = false;
                            break;
                        }
                        off = off * g.in[d] + i;
                    }
                    if (inside) plane[off] += row[o];
                }
            }
        }
    }
}

template <typename T, size_t Dims>
Var<T> conv_nd(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::array<int64_t, Dims> stride,
               std::array<int64_t, Dims> pad) {
    constexpr int rank = static_cast<int>(Dims) + 2;
    if (x.rank() != rank || weight.rank() != rank) {
        throw std::invalid_argument("conv: expected rank " + std::to_string(rank) + " input and weight, got " +
                                    shape_str(x.shape()) + " and " + shape_str(weight.shape()));
    }
    if (x.dim(1) != weight.dim(1)) {
        throw std::invalid_argument("conv: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
    }
    ConvGeometry<Dims> g;
    g.in_channels = x.dim(1);
    for (size_t d = 0; d < Dims; ++d) {
        g.in[d] = x.dim(static_cast<int>(d) + 2);
        g.kernel[d] = weight.dim(static_cast<int>(d) + 2);
        g.stride[d] = stride[d];
        g.pad[d] = pad[d];
        g.out[d] = (g.in[d] + 2 * pad[d] - g.kernel[d]) / stride[d] + 1;
        if (g.out[d] <= 0) throw std::invalid_argument("conv: kernel larger than padded input");
    }
    const int64_t N = x.dim(0), OC = weight.dim(0);
    const int64_t CK = g.in_channels * g.kernel_size(), O = g.out_size();
    Shape out_shape{N, OC};
    for (auto v : g.out) out_shape.push_back(v);
    Tensor<T> y(out_shape);
    std::vector<T> cols(static_cast<size_t>(CK * O));
    ConstMatMap<T> Wm(weight.value().data(), OC, CK);
    for (int64_t i = 0; i < N; ++i) {
        im2col(x.value().data() + i * g.in_channels * g.in_size(), g, cols.data());
        MatMap<T>(y.data() + i * OC * O, OC, O).noalias() = Wm * ConstMatMap<T>(cols.data(), CK, O);
    }
    const bool has_bias = bias.defined();
    if (has_bias) {
        for (int64_t i = 0; i < N; ++i) {
            MatMap<T>(y.data() + i * OC * O, OC, O).colwise() +=
                Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value().data(), OC);
        }
    }
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(std::move(y), std::move(inputs), [g, N, OC, CK, O, has_bias](Node<T>& n) {
        auto& xin = *n.inputs[0];
        auto& win = *n.inputs[1];
        std::vector<T> cols(static_cast<size_t>(CK * O));
        ConstMatMap<T> Wm(win.value.data(), OC, CK);
        Tensor<T> gx;
        if (xin.requires_grad) gx = Tensor<T>(xin.value.shape());
        for (int64_t i = 0; i < N; ++i) {
            ConstMatMap<T> G(n.grad.data() + i * OC * O, OC, O);
            if (win.requires_grad) {
                im2col(xin.value.data() + i * g.in_channels * g.in_size(), g, cols.data());
                MatMap<T>(win.grad_buffer().data(), OC, CK).noalias() +=
                    G * ConstMatMap<T>(cols.data(), CK, O).transpose();
            }
            if (xin.requires_grad) {
                MatMap<T>(cols.data(), CK, O).noalias() = Wm.transpose() * G;
                col2im(cols.data(), g, gx.data() + i * g.in_channels * g.in_size());
            }
        }
        if (xin.requires_grad) xin.accumulate(std::move(gx));
        if (has_bias && n.inputs[2]->requires_grad) {
            auto& gb = n.inputs[2]->grad_buffer();
            for (int64_t i = 0; i < N; ++i) {
                Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb.data(), OC) +=
                    ConstMatMap<T>(n.grad.data() + i * OC * O, OC, O).rowwise().sum();
            }
        }
    });
}

}  // namespace detail

/// 2-D convolution, x [N, C, H, W], weight [O, C, kh, kw].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int64_t stride = 1, int64_t pad = 0) {
    return detail::conv_nd<T, 2>(x, weight, bias, {stride, stride}, {pad, pad});
}

/// 3-D convolution, x [N, C, D, H, W], weight [O, C, kd, kh, kw].
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::array<int64_t, 3> stride,
              std::array<int64_t, 3> pad) {
    return detail::conv_nd<T, 3>(x, weight, bias, stride, pad);
}

/// Scaled dot-product multi-head attention. q, k, v are [B, L, heads*dh];
/// heads are contiguous column blocks. With `diagonal_only` every token
/// attends only to itself (output equals v).
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, bool diagonal_only = false) {
    detail::require_same_shape(q.shape(), k.shape(), "attention q/k");
    detail::require_same_shape(q.shape(), v.shape(), "attention q/v");
    if (q.rank() != 3) throw std::invalid_argument("attention expects [B, L, D]");
    const int64_t B = q.dim(0), L = q.dim(1), D = q.dim(2);
    if (D % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    const int64_t dh = D / heads;
    const T scl = T(1) / std::sqrt(static_cast<T>(dh));
    if (diagonal_only) {
        return make_result<T>(v.value(), {q, k, v}, [](Node<T>& n) { n.inputs[2]->accumulate(n.grad); });
    }
    Tensor<T> y(q.shape());
    Tensor<T> probs({B, static_cast<int64_t>(heads), L, L});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t off = b * L * D + h * dh;
            ConstStridedMap<T> Q(q.value().data() + off, L, dh, Eigen::OuterStride<>(D));
            ConstStridedMap<T> K(k.value().data() + off, L, dh, Eigen::OuterStride<>(D));
            ConstStridedMap<T> V(v.value().data() + off, L, dh, Eigen::OuterStride<>(D));
            MatMap<T> P(probs.data() + (b * heads + h) * L * L, L, L);
            P.noalias() = (Q * K.transpose()) * scl;
            for (int64_t i = 0; i < L; ++i) {
                auto row = P.row(i);
                const T m = row.maxCoeff();
                row = (row.array() - m).exp();
                row /= row.sum();
            }
            StridedMap<T>(y.data() + off, L, dh, Eigen::OuterStride<>(D)).noalias() = P * V;
        }
    }
    return make_result<T>(std::move(y), {q, k, v}, [B, L, D, dh, heads, scl, probs = std::move(probs)](Node<T>& n) {
        Tensor<T> gq(n.inputs[0]->value.shape()), gk(gq.shape()), gv(gq.shape());
        RowMatrix<T> dP(L, L);
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t off = b * L * D + h * dh;
                ConstStridedMap<T> Q(n.inputs[0]->value.data() + off, L, dh, Eigen::OuterStride<>(D));
                ConstStridedMap<T> K(n.inputs[1]->value.data() + off, L, dh, Eigen::OuterStride<>(D));
                ConstStridedMap<T> V(n.inputs[2]->value.data() + off, L, dh, Eigen::OuterStride<>(D));
                ConstStridedMap<T> G(n.grad.data() + off, L, dh, Eigen::OuterStride<>(D));
                ConstMatMap<T> P(probs.data() + (b * heads + h) * L * L, L, L);
                StridedMap<T>(gv.data() + off, L, dh, Eigen::OuterStride<>(D)).noalias() = P.transpose() * G;
                dP.noalias() = G * V.transpose();
                // softmax backward: dS = P * (dP - rowsum(dP * P))
                for (int64_t i = 0; i < L; ++i) {
                    const T dot = (dP.row(i).array() * P.row(i).array()).sum();
                    dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)) * scl;
                }
                StridedMap<T>(gq.data() + off, L, dh, Eigen::OuterStride<>(D)).noalias() = dP * K;
                StridedMap<T>(gk.data() + off, L, dh, Eigen::OuterStride<>(D)).noalias() = dP.transpose() * Q;
            }
        }
        n.inputs[0]->accumulate(std::move(gq));
        n.inputs[1]->accumulate(std::move(gk));
        n.inputs[2]->accumulate(std::move(gv));
    });
}

}  // namespace pvdm
