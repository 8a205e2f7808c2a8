#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "hdseg/kernels.hpp"
#include "hdseg/tape.hpp"

namespace hdseg {

// ------------------------------------------------------------------ im2col

namespace detail {

// col is (C*K*K) x (Ho*Wo); image is (C,H,W). Patch layout r = (c*K+ky)*K+kx.
template <typename T>
void im2col(const T* img, int C, int H, int W, int K, int stride, int pad, int Ho, int Wo, T* col) {
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t out_plane = static_cast<size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const T* src = img + static_cast<size_t>(c) * plane;
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                T* dst = col + (static_cast<size_t>(c) * K * K + static_cast<size_t>(ky) * K + kx) * out_plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* row = dst + static_cast<size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + Wo, T(0));
                        continue;
                    }
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        row[ox] = (ix >= 0 && ix < W) ? src[static_cast<size_t>(iy) * W + ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add column entries back into the image.
template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int K, int stride, int pad, int Ho, int Wo, T* img) {
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t out_plane = static_cast<size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        T* dst = img + static_cast<size_t>(c) * plane;
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                const T* src = col + (static_cast<size_t>(c) * K * K + static_cast<size_t>(ky) * K + kx) * out_plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* row = src + static_cast<size_t>(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[static_cast<size_t>(iy) * W + ix] += row[ox];
                    }
                }
            }
        }
    }
}

inline void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ------------------------------------------------------------------ conv2d

// x: (N,Ci,H,W), w: (Co,Ci,K,K), optional bias: (Co).
// Output spatial extent: floor((H + 2*pad - K)/stride) + 1.
template <typename T>
Value conv2d(Tape<T>& tape, Value x, Value w, int stride, int padding, Value bias = {}) {
    const Tensor<T>& xv = tape.val(x);
    const Tensor<T>& wv = tape.val(w);
    detail::require(xv.rank() == 4 && wv.rank() == 4, "conv2d: tensors must be rank 4");
    detail::require(stride >= 1, "conv2d: stride must be >= 1");
    detail::require(padding >= 0, "conv2d: padding must be >= 0");
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), K = wv.dim(2);
    detail::require(wv.dim(2) == wv.dim(3), "conv2d: kernel must be square");
    if (wv.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch between input and kernel");
    const int Ho = (H + 2 * padding - K) / stride + 1;
    const int Wo = (W + 2 * padding - K) / stride + 1;
    if (H + 2 * padding < K || W + 2 * padding < K || Ho <= 0 || Wo <= 0)
        throw std::invalid_argument("conv2d: non-positive output extent");
    if (bias.valid())
        detail::require(tape.val(bias).rank() == 1 && tape.val(bias).dim(0) == Co,
                        "conv2d: bias must have one entry per output channel");

    const size_t ckk = static_cast<size_t>(Ci) * K * K;
    const size_t out_plane = static_cast<size_t>(Ho) * Wo;
    Tensor<T> y({N, Co, Ho, Wo});
    std::vector<T> col(ckk * out_plane);
    for (int n = 0; n < N; ++n) {
        const T* xn = xv.data() + static_cast<size_t>(n) * Ci * H * W;
        T* yn = y.data() + static_cast<size_t>(n) * Co * out_plane;
        detail::im2col(xn, Ci, H, W, K, stride, padding, Ho, Wo, col.data());
        kern::gemm_nn(Co, static_cast<int>(ckk), static_cast<int>(out_plane), wv.data(), col.data(), yn);
        if (bias.valid()) {
            const Tensor<T>& bv = tape.val(bias);
            for (int o = 0; o < Co; ++o) {
                T* row = yn + static_cast<size_t>(o) * out_plane;
                const T b = bv[static_cast<size_t>(o)];
                for (size_t j = 0; j < out_plane; ++j) row[j] += b;
            }
        }
    }

    std::vector<int> ins{x.idx, w.idx};
    if (bias.valid()) ins.push_back(bias.idx);
    auto back = [stride, padding, N, Ci, H, W, Co, K, Ho, Wo, has_bias = bias.valid()](Tape<T>& t,
                                                                                       int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0], wi = nd.inputs[1];
        const Tensor<T>& gy = t.node(Value{self}).grad;
        const Tensor<T>& xv2 = t.val(Value{xi});
        const Tensor<T>& wv2 = t.val(Value{wi});
        const size_t ckk2 = static_cast<size_t>(Ci) * K * K;
        const size_t out_plane2 = static_cast<size_t>(Ho) * Wo;
        const bool need_x = t.needs_grad(xi);
        const bool need_w = t.needs_grad(wi);
        std::vector<T> col2(ckk2 * out_plane2);
        std::vector<T> colgrad;
        if (need_x) colgrad.resize(ckk2 * out_plane2);
        for (int n = 0; n < N; ++n) {
            const T* gyn = gy.data() + static_cast<size_t>(n) * Co * out_plane2;
            if (need_w) {
                detail::im2col(xv2.data() + static_cast<size_t>(n) * Ci * H * W, Ci, H, W, K, stride,
                               padding, Ho, Wo, col2.data());
                kern::gemm_nt(Co, static_cast<int>(out_plane2), static_cast<int>(ckk2), gyn, col2.data(),
                              t.grad(wi).data());
            }
            if (need_x) {
                std::fill(colgrad.begin(), colgrad.end(), T(0));
                kern::gemm_tn(static_cast<int>(ckk2), Co, static_cast<int>(out_plane2), wv2.data(), gyn,
                              colgrad.data());
                detail::col2im_acc(colgrad.data(), Ci, H, W, K, stride, padding, Ho, Wo,
                                   t.grad(xi).data() + static_cast<size_t>(n) * Ci * H * W);
            }
        }
        if (has_bias) {
            const int bi = nd.inputs[2];
            if (t.needs_grad(bi)) {
                Tensor<T>& gb = t.grad(bi);
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < Co; ++o)
                        gb[static_cast<size_t>(o)] += kern::sum(
                            gy.data() + (static_cast<size_t>(n) * Co + o) * out_plane2, out_plane2);
            }
        }
    };
    return tape.emit(std::move(y), std::move(ins), back, "conv2d");
}

// -------------------------------------------------------- transposed conv

// x: (N,Ci,H,W), w: (Ci,Co,K,K). Output spatial extent: (H-1)*stride + K.
// Forward is the adjoint of a stride-s convolution, so the gradient w.r.t.
// the input is exactly that convolution with the same kernel.
template <typename T>
Value transposed_conv2d(Tape<T>& tape, Value x, Value w, int stride) {
    const Tensor<T>& xv = tape.val(x);
    const Tensor<T>& wv = tape.val(w);
    detail::require(xv.rank() == 4 && wv.rank() == 4, "transposed_conv2d: tensors must be rank 4");
    detail::require(stride >= 1, "transposed_conv2d: stride must be >= 1");
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(1), K = wv.dim(2);
    detail::require(wv.dim(2) == wv.dim(3), "transposed_conv2d: kernel must be square");
    if (wv.dim(0) != Ci)
        throw std::invalid_argument("transposed_conv2d: channel mismatch between input and kernel");
    const int Ho = (H - 1) * stride + K;
    const int Wo = (W - 1) * stride + K;

    const size_t okk = static_cast<size_t>(Co) * K * K;
    const size_t in_plane = static_cast<size_t>(H) * W;
    Tensor<T> y({N, Co, Ho, Wo});
    std::vector<T> col(okk * in_plane);
    for (int n = 0; n < N; ++n) {
        const T* xn = xv.data() + static_cast<size_t>(n) * Ci * in_plane;
        T* yn = y.data() + static_cast<size_t>(n) * Co * Ho * Wo;
        std::fill(col.begin(), col.end(), T(0));
        kern::gemm_tn(static_cast<int>(okk), Ci, static_cast<int>(in_plane), wv.data(), xn, col.data());
        detail::col2im_acc(col.data(), Co, Ho, Wo, K, stride, 0, H, W, yn);
    }

    auto back = [stride, N, Ci, H, W, Co, K, Ho, Wo](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0], wi = nd.inputs[1];
        const Tensor<T>& gy = nd.grad;
        const Tensor<T>& xv2 = t.val(Value{xi});
        const Tensor<T>& wv2 = t.val(Value{wi});
        const size_t okk2 = static_cast<size_t>(Co) * K * K;
        const size_t in_plane2 = static_cast<size_t>(H) * W;
        const bool need_x = t.needs_grad(xi);
        const bool need_w = t.needs_grad(wi);
        if (!need_x && !need_w) return;
        std::vector<T> col2(okk2 * in_plane2);
        for (int n = 0; n < N; ++n) {
            const T* gyn = gy.data() + static_cast<size_t>(n) * Co * Ho * Wo;
            detail::im2col(gyn, Co, Ho, Wo, K, stride, 0, H, W, col2.data());
            if (need_x)
                kern::gemm_nn(Ci, static_cast<int>(okk2), static_cast<int>(in_plane2), wv2.data(),
                              col2.data(), t.grad(xi).data() + static_cast<size_t>(n) * Ci * in_plane2);
            if (need_w)
                kern::gemm_nt(Ci, static_cast<int>(in_plane2), static_cast<int>(okk2),
                              xv2.data() + static_cast<size_t>(n) * Ci * in_plane2, col2.data(),
                              t.grad(wi).data());
        }
    };
    return tape.emit(std::move(y), {x.idx, w.idx}, back, "transposed_conv2d");
}

// --------------------------------------------------------------- maxpool

template <typename T>
Value maxpool2d(Tape<T>& tape, Value x, int window, int stride) {
    const Tensor<T>& xv = tape.val(x);
    detail::require(xv.rank() == 4, "maxpool2d: input must be rank 4");
    detail::require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (window > H || window > W) throw std::invalid_argument("maxpool2d: window larger than input");
    const int Ho = (H - window) / stride + 1;
    const int Wo = (W - window) / stride + 1;

    Tensor<T> y({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(y.size());
    const size_t plane = static_cast<size_t>(H) * W;
    size_t oi = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* src = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox, ++oi) {
                    const int y0 = oy * stride, x0 = ox * stride;
                    T best = src[static_cast<size_t>(y0) * W + x0];
                    int32_t besti = y0 * W + x0;
                    for (int dy = 0; dy < window; ++dy)
                        for (int dx = 0; dx < window; ++dx) {
                            const int32_t idx = (y0 + dy) * W + (x0 + dx);
                            if (src[idx] > best) {
                                best = src[idx];
                                besti = idx;
                            }
                        }
                    y[oi] = best;
                    (*argmax)[oi] = besti;
                }
            }
        }
    }

    auto back = [argmax, N, C, plane](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        const Tensor<T>& gy = nd.grad;
        Tensor<T>& gx = t.grad(xi);
        const size_t per_plane_out = gy.size() / (static_cast<size_t>(N) * C);
        size_t oi2 = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t j = 0; j < per_plane_out; ++j, ++oi2) dst[(*argmax)[oi2]] += gy[oi2];
            }
    };
    return tape.emit(std::move(y), {x.idx}, back, "maxpool2d");
}

// -------------------------------------------------------------- batchnorm

// Staged running-stat update; in multi-worker training only worker 0's staged
// updates are applied, after the parallel section.
template <typename T>
struct BnUpdate {
    Param<T>* running_mean = nullptr;
    Param<T>* running_var = nullptr;
    std::vector<T> batch_mean;
    std::vector<T> batch_var;
    T momentum = T(0.9);
};

template <typename T>
using BnStaged = std::vector<BnUpdate<T>>;

template <typename T>
void apply_bn_update(const BnUpdate<T>& u) {
    const size_t C = u.batch_mean.size();
    for (size_t c = 0; c < C; ++c) {
        u.running_mean->value[c] = u.momentum * u.running_mean->value[c] + (T(1) - u.momentum) * u.batch_mean[c];
        u.running_var->value[c] = u.momentum * u.running_var->value[c] + (T(1) - u.momentum) * u.batch_var[c];
    }
}

// train mode: normalize with batch statistics over N*H*W per channel
// (population variance) and stage/apply the running-stat update.
// eval mode: normalize with the running statistics.
template <typename T>
Value batch_norm(Tape<T>& tape, Value x, Value gamma, Value beta, Param<T>& running_mean,
                 Param<T>& running_var, T eps, T momentum, bool train,
                 std::type_identity_t<BnStaged<T>*> staged = nullptr) {
    const Tensor<T>& xv = tape.val(x);
    detail::require(xv.rank() == 4, "batch_norm: input must be rank 4");
    detail::require(eps > T(0), "batch_norm: epsilon must be positive");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const Tensor<T>& gv = tape.val(gamma);
    const Tensor<T>& bv = tape.val(beta);
    if (gv.size() != static_cast<size_t>(C) || bv.size() != static_cast<size_t>(C))
        throw std::invalid_argument("batch_norm: shape mismatch between gamma/beta and channels");

    const size_t plane = static_cast<size_t>(H) * W;
    const size_t M = static_cast<size_t>(N) * plane;
    auto mean = std::make_shared<std::vector<T>>(C);
    auto invstd = std::make_shared<std::vector<T>>(C);

    if (train) {
        std::vector<T> var(C);
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n)
                s += kern::sum(xv.data() + (static_cast<size_t>(n) * C + c) * plane, plane);
            const T m = s / static_cast<T>(M);
            T ss = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t j = 0; j < plane; ++j) {
                    const T d = p[j] - m;
                    ss += d * d;
                }
            }
            (*mean)[c] = m;
            var[c] = ss / static_cast<T>(M);
            (*invstd)[c] = T(1) / std::sqrt(var[c] + eps);
        }
        BnUpdate<T> upd{&running_mean, &running_var, *mean, var, momentum};
        if (staged)
            staged->push_back(std::move(upd));
        else
            apply_bn_update(upd);
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = running_mean.value[static_cast<size_t>(c)];
            (*invstd)[c] = T(1) / std::sqrt(running_var.value[static_cast<size_t>(c)] + eps);
        }
    }

    Tensor<T> y({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
            T* dst = y.data() + (static_cast<size_t>(n) * C + c) * plane;
            const T m = (*mean)[c], inv = (*invstd)[c];
            const T g = gv[static_cast<size_t>(c)], b = bv[static_cast<size_t>(c)];
            for (size_t j = 0; j < plane; ++j) dst[j] = g * (src[j] - m) * inv + b;
        }

    auto back = [mean, invstd, N, C, plane, M, train](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0], gi = nd.inputs[1], bi = nd.inputs[2];
        const Tensor<T>& gy = nd.grad;
        const Tensor<T>& xv2 = t.val(Value{xi});
        const Tensor<T>& gv2 = t.val(Value{gi});
        const bool need_x = t.needs_grad(xi);
        const bool need_g = t.needs_grad(gi);
        const bool need_b = t.needs_grad(bi);
        for (int c = 0; c < C; ++c) {
            const T m = (*mean)[c], inv = (*invstd)[c];
            T sum_g = 0, sum_gx = 0;
            for (int n = 0; n < N; ++n) {
                const T* gp = gy.data() + (static_cast<size_t>(n) * C + c) * plane;
                const T* xp = xv2.data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t j = 0; j < plane; ++j) {
                    sum_g += gp[j];
                    sum_gx += gp[j] * (xp[j] - m) * inv;
                }
            }
            if (need_g) t.grad(gi)[static_cast<size_t>(c)] += sum_gx;
            if (need_b) t.grad(bi)[static_cast<size_t>(c)] += sum_g;
            if (need_x) {
                Tensor<T>& gx = t.grad(xi);
                const T gamma_inv = gv2[static_cast<size_t>(c)] * inv;
                if (train) {
                    const T mg = sum_g / static_cast<T>(M);
                    const T mgx = sum_gx / static_cast<T>(M);
                    for (int n = 0; n < N; ++n) {
                        const T* gp = gy.data() + (static_cast<size_t>(n) * C + c) * plane;
                        const T* xp = xv2.data() + (static_cast<size_t>(n) * C + c) * plane;
                        T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * plane;
                        for (size_t j = 0; j < plane; ++j)
                            dst[j] += gamma_inv * (gp[j] - mg - (xp[j] - m) * inv * mgx);
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const T* gp = gy.data() + (static_cast<size_t>(n) * C + c) * plane;
                        T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * plane;
                        for (size_t j = 0; j < plane; ++j) dst[j] += gamma_inv * gp[j];
                    }
                }
            }
        }
    };
    return tape.emit(std::move(y), {x.idx, gamma.idx, beta.idx}, back, "batch_norm");
}

// ------------------------------------------------------------- elementwise

template <typename T>
Value relu(Tape<T>& tape, Value x) {
    const Tensor<T>& xv = tape.val(x);
    Tensor<T> y(xv.shape());
    kern::relu(xv.data(), y.data(), xv.size());
    auto back = [](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        const Tensor<T>& xv2 = t.val(Value{xi});
        kern::relu_mask_grad(xv2.data(), nd.grad.data(), t.grad(xi).data(), xv2.size());
    };
    return tape.emit(std::move(y), {x.idx}, back, "relu");
}

template <typename T>
Value add(Tape<T>& tape, Value a, Value b) {
    const Tensor<T>& av = tape.val(a);
    const Tensor<T>& bv = tape.val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> y(av.shape());
    kern::add(av.data(), bv.data(), y.data(), av.size());
    auto back = [](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        for (int in : nd.inputs)
            if (t.needs_grad(in))
                kern::add(t.grad(in).data(), nd.grad.data(), t.grad(in).data(), nd.grad.size());
    };
    return tape.emit(std::move(y), {a.idx, b.idx}, back, "add");
}

template <typename T>
Value mul(Tape<T>& tape, Value a, Value b) {
    const Tensor<T>& av = tape.val(a);
    const Tensor<T>& bv = tape.val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> y(av.shape());
    kern::mul(av.data(), bv.data(), y.data(), av.size());
    auto back = [](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int ai = nd.inputs[0], bi = nd.inputs[1];
        const Tensor<T>& av2 = t.val(Value{ai});
        const Tensor<T>& bv2 = t.val(Value{bi});
        if (t.needs_grad(ai)) {
            Tensor<T>& ga = t.grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += nd.grad[i] * bv2[i];
        }
        if (t.needs_grad(bi)) {
            Tensor<T>& gb = t.grad(bi);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += nd.grad[i] * av2[i];
        }
    };
    return tape.emit(std::move(y), {a.idx, b.idx}, back, "mul");
}

template <typename T>
Value sub(Tape<T>& tape, Value a, Value b) {
    const Tensor<T>& av = tape.val(a);
    const Tensor<T>& bv = tape.val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
    Tensor<T> y(av.shape());
    kern::sub(av.data(), bv.data(), y.data(), av.size());
    auto back = [](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        if (t.needs_grad(nd.inputs[0]))
            kern::add(t.grad(nd.inputs[0]).data(), nd.grad.data(), t.grad(nd.inputs[0]).data(),
                      nd.grad.size());
        if (t.needs_grad(nd.inputs[1]))
            kern::axpy(T(-1), nd.grad.data(), t.grad(nd.inputs[1]).data(), nd.grad.size());
    };
    return tape.emit(std::move(y), {a.idx, b.idx}, back, "sub");
}

// out = a*x + b, elementwise with scalar a and b
template <typename T>
Value affine(Tape<T>& tape, Value x, T a, T b) {
    const Tensor<T>& xv = tape.val(x);
    Tensor<T> y(xv.shape());
    for (size_t i = 0; i < xv.size(); ++i) y[i] = a * xv[i] + b;
    auto back = [a](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        if (t.needs_grad(nd.inputs[0]))
            kern::axpy(a, nd.grad.data(), t.grad(nd.inputs[0]).data(), nd.grad.size());
    };
    return tape.emit(std::move(y), {x.idx}, back, "affine");
}

template <typename T>
Value scale(Tape<T>& tape, Value x, T s) {
    return affine(tape, x, s, T(0));
}

template <typename T>
Value concat_channels(Tape<T>& tape, Value a, Value b) {
    const Tensor<T>& av = tape.val(a);
    const Tensor<T>& bv = tape.val(b);
    detail::require(av.rank() == 4 && bv.rank() == 4, "concat_channels: inputs must be rank 4");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw std::invalid_argument("concat_channels: spatial mismatch");
    const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), H = av.dim(2), W = av.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> y({N, Ca + Cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy(av.data() + static_cast<size_t>(n) * Ca * plane,
                  av.data() + static_cast<size_t>(n + 1) * Ca * plane,
                  y.data() + static_cast<size_t>(n) * (Ca + Cb) * plane);
        std::copy(bv.data() + static_cast<size_t>(n) * Cb * plane,
                  bv.data() + static_cast<size_t>(n + 1) * Cb * plane,
                  y.data() + static_cast<size_t>(n) * (Ca + Cb) * plane + static_cast<size_t>(Ca) * plane);
    }
    auto back = [N, Ca, Cb, plane](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int ai = nd.inputs[0], bi = nd.inputs[1];
        const Tensor<T>& gy = nd.grad;
        for (int n = 0; n < N; ++n) {
            const T* g = gy.data() + static_cast<size_t>(n) * (Ca + Cb) * plane;
            if (t.needs_grad(ai))
                kern::add(t.grad(ai).data() + static_cast<size_t>(n) * Ca * plane, g,
                          t.grad(ai).data() + static_cast<size_t>(n) * Ca * plane,
                          static_cast<size_t>(Ca) * plane);
            if (t.needs_grad(bi))
                kern::add(t.grad(bi).data() + static_cast<size_t>(n) * Cb * plane,
                          g + static_cast<size_t>(Ca) * plane,
                          t.grad(bi).data() + static_cast<size_t>(n) * Cb * plane,
                          static_cast<size_t>(Cb) * plane);
        }
    };
    return tape.emit(std::move(y), {a.idx, b.idx}, back, "concat_channels");
}

// --------------------------------------------------------------- softmax

// Per-pixel softmax over the channel axis, stabilized by max subtraction.
template <typename T>
Value softmax_channels(Tape<T>& tape, Value x) {
    const Tensor<T>& xv = tape.val(x);
    detail::require(xv.rank() == 4, "softmax_channels: input must be rank 4");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> y({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        const T* xb = xv.data() + static_cast<size_t>(n) * C * plane;
        T* yb = y.data() + static_cast<size_t>(n) * C * plane;
        for (size_t j = 0; j < plane; ++j) {
            T mx = xb[j];
            for (int c = 1; c < C; ++c) mx = std::max(mx, xb[static_cast<size_t>(c) * plane + j]);
            T s = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(xb[static_cast<size_t>(c) * plane + j] - mx);
                yb[static_cast<size_t>(c) * plane + j] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (int c = 0; c < C; ++c) yb[static_cast<size_t>(c) * plane + j] *= inv;
        }
    }
    auto back = [N, C, plane](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        const Tensor<T>& p = nd.value;
        const Tensor<T>& g = nd.grad;
        Tensor<T>& gx = t.grad(xi);
        for (int n = 0; n < N; ++n) {
            const size_t base = static_cast<size_t>(n) * C * plane;
            for (size_t j = 0; j < plane; ++j) {
                T dotgp = 0;
                for (int c = 0; c < C; ++c) {
                    const size_t o = base + static_cast<size_t>(c) * plane + j;
                    dotgp += g[o] * p[o];
                }
                for (int c = 0; c < C; ++c) {
                    const size_t o = base + static_cast<size_t>(c) * plane + j;
                    gx[o] += p[o] * (g[o] - dotgp);
                }
            }
        }
    };
    return tape.emit(std::move(y), {x.idx}, back, "softmax_channels");
}

// Sum of a subset of channels -> (N,1,H,W). Gradient scatters back into each
// selected channel, so downstream losses reach all of them jointly.
template <typename T>
Value sum_channels(Tape<T>& tape, Value x, std::vector<int> channels) {
    const Tensor<T>& xv = tape.val(x);
    detail::require(xv.rank() == 4, "sum_channels: input must be rank 4");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    for (int c : channels)
        detail::require(c >= 0 && c < C, "sum_channels: channel index out of range");
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> y({N, 1, H, W});
    for (int n = 0; n < N; ++n) {
        T* dst = y.data() + static_cast<size_t>(n) * plane;
        for (int c : channels)
            kern::add(dst, xv.data() + (static_cast<size_t>(n) * C + c) * plane, dst, plane);
    }
    auto back = [N, C, plane, channels](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        Tensor<T>& gx = t.grad(xi);
        for (int n = 0; n < N; ++n) {
            const T* g = nd.grad.data() + static_cast<size_t>(n) * plane;
            for (int c : channels) {
                T* dst = gx.data() + (static_cast<size_t>(n) * C + c) * plane;
                kern::add(dst, g, dst, plane);
            }
        }
    };
    return tape.emit(std::move(y), {x.idx}, back, "sum_channels");
}

// -------------------------------------------------------------- reductions

template <typename T>
Value sum_all(Tape<T>& tape, Value x) {
    const Tensor<T>& xv = tape.val(x);
    Tensor<T> y({1});
    y[0] = kern::sum(xv.data(), xv.size());
    auto back = [](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        const T g = nd.grad[0];
        Tensor<T>& gx = t.grad(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
    return tape.emit(std::move(y), {x.idx}, back, "sum_all");
}

template <typename T>
Value mean_all(Tape<T>& tape, Value x) {
    const Tensor<T>& xv = tape.val(x);
    const T inv = T(1) / static_cast<T>(xv.size());
    Tensor<T> y({1});
    y[0] = kern::sum(xv.data(), xv.size()) * inv;
    auto back = [inv](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        const T g = nd.grad[0] * inv;
        Tensor<T>& gx = t.grad(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
    return tape.emit(std::move(y), {x.idx}, back, "mean_all");
}

// <x, w> with a constant weight tensor; scalar output. Handy as a generic
// differentiable root for checks.
template <typename T>
Value weighted_sum(Tape<T>& tape, Value x, Tensor<T> w) {
    const Tensor<T>& xv = tape.val(x);
    if (!xv.same_shape(w)) throw std::invalid_argument("weighted_sum: shape mismatch");
    auto ws = std::make_shared<Tensor<T>>(std::move(w));
    Tensor<T> y({1});
    y[0] = kern::dot(xv.data(), ws->data(), xv.size());
    auto back = [ws](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        kern::axpy(nd.grad[0], ws->data(), t.grad(xi).data(), ws->size());
    };
    return tape.emit(std::move(y), {x.idx}, back, "weighted_sum");
}

// ------------------------------------------------------- bilinear kernels

struct BilinearSpec {
    int kernel_size = 2;
    int stride = 1;
};

// 1-D interpolation weights. For K <= 2 this coincides with the plain
// triangular formula (1 - |x - (K-1)/2|); for larger K the offset is divided
// by ceil(K/2) so weights stay nonnegative and K == 2*stride upsampling is a
// partition of unity on interior pixels.
template <typename T>
std::vector<T> bilinear_weights_1d(int K) {
    detail::require(K >= 1, "bilinear_weights_1d: kernel size must be >= 1");
    std::vector<T> w(static_cast<size_t>(K));
    const T factor = static_cast<T>((K + 1) / 2);
    const T center = (K % 2 == 1) ? factor - T(1) : factor - T(0.5);
    for (int i = 0; i < K; ++i)
        w[static_cast<size_t>(i)] = T(1) - std::abs(static_cast<T>(i) - center) / factor;
    return w;
}

// Square per-channel kernel (C,C,K,K): channel c upsamples itself, zero mixing.
template <typename T>
Tensor<T> bilinear_kernel(const BilinearSpec& spec, int channels) {
    detail::require(spec.kernel_size >= 1, "bilinear_kernel: K must be >= 1");
    detail::require(channels >= 1, "bilinear_kernel: channels must be >= 1");
    const int K = spec.kernel_size;
    const auto w1 = bilinear_weights_1d<T>(K);
    Tensor<T> w({channels, channels, K, K});
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx)
                w.at({c, c, ky, kx}) = w1[static_cast<size_t>(ky)] * w1[static_cast<size_t>(kx)];
    return w;
}

// Channel-changing variant for decoder upsampling: input channel i feeds
// output channel i % co, scaled so a constant image stays constant. Equal to
// bilinear_kernel when ci == co.
template <typename T>
Tensor<T> bilinear_init(int ci, int co, int K) {
    const auto w1 = bilinear_weights_1d<T>(K);
    Tensor<T> w({ci, co, K, K});
    std::vector<int> fan(static_cast<size_t>(co), 0);
    for (int i = 0; i < ci; ++i) ++fan[static_cast<size_t>(i % co)];
    for (int i = 0; i < ci; ++i) {
        const int o = i % co;
        const T s = T(1) / static_cast<T>(fan[static_cast<size_t>(o)]);
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx)
                w.at({i, o, ky, kx}) = s * w1[static_cast<size_t>(ky)] * w1[static_cast<size_t>(kx)];
    }
    return w;
}

}  // namespace hdseg
