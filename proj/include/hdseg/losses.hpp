#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "hdseg/ops.hpp"
#include "hdseg/tape.hpp"

namespace hdseg {

enum class LossKind { Ce, Wce, Bootstrap, Ss, Dice, Hdice };

template <typename T>
struct LossParams {
    std::array<T, 5> class_weights{T(0.1), T(0.35), T(0.1), T(0.1), T(0.35)};
    T bootstrap_t = T(0.9);
    T ss_lambda = T(0.5);
    T epsilon = T(1e-5);
    std::array<T, 3> hdice_weights{T(1) / T(3), T(1) / T(3), T(1) / T(3)};
    bool standard_dsc = false;
};

namespace detail {

inline void check_labels(const Tensor<uint8_t>& labels, int num_classes) {
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= num_classes) throw std::invalid_argument("label out of range");
}

}  // namespace detail

// -------------------------------------------------------------- cross-entropy

// Mean over pixels of -w[y]*log softmax(f)_y; plain CE is the all-ones weight
// case. Fused with the softmax for numerical stability.
template <typename T>
Value weighted_softmax_ce(Tape<T>& tape, Value logits, const Tensor<uint8_t>& labels,
                          const std::array<T, 5>& w) {
    const Tensor<T>& lv = tape.val(logits);
    detail::require(lv.rank() == 4, "softmax_ce: logits must be rank 4");
    const int N = lv.dim(0), C = lv.dim(1), H = lv.dim(2), W = lv.dim(3);
    detail::require(C == 5, "softmax_ce: expected 5 logit channels");
    if (labels.rank() != 3 || labels.dim(0) != N || labels.dim(1) != H || labels.dim(2) != W)
        throw std::invalid_argument("softmax_ce: label shape mismatch");
    detail::check_labels(labels, C);

    const size_t plane = static_cast<size_t>(H) * W;
    const size_t npix = static_cast<size_t>(N) * plane;
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{N, C, H, W});
    auto lab = std::make_shared<Tensor<uint8_t>>(labels);
    T acc = 0;
    for (int n = 0; n < N; ++n) {
        const T* lb = lv.data() + static_cast<size_t>(n) * C * plane;
        T* pb = probs->data() + static_cast<size_t>(n) * C * plane;
        const uint8_t* yb = lab->data() + static_cast<size_t>(n) * plane;
        for (size_t j = 0; j < plane; ++j) {
            T mx = lb[j];
            for (int c = 1; c < C; ++c) mx = std::max(mx, lb[static_cast<size_t>(c) * plane + j]);
            T s = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(lb[static_cast<size_t>(c) * plane + j] - mx);
                pb[static_cast<size_t>(c) * plane + j] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (int c = 0; c < C; ++c) pb[static_cast<size_t>(c) * plane + j] *= inv;
            const int y = yb[j];
            const T lse = std::log(s) + mx;
            acc += w[static_cast<size_t>(y)] * (lse - lb[static_cast<size_t>(y) * plane + j]);
        }
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(npix);

    auto back = [probs, lab, w, N, C, plane, npix](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int li = nd.inputs[0];
        if (!t.needs_grad(li)) return;
        const T g0 = nd.grad[0] / static_cast<T>(npix);
        Tensor<T>& gx = t.grad(li);
        for (int n = 0; n < N; ++n) {
            const T* pb = probs->data() + static_cast<size_t>(n) * C * plane;
            const uint8_t* yb = lab->data() + static_cast<size_t>(n) * plane;
            T* gb = gx.data() + static_cast<size_t>(n) * C * plane;
            for (size_t j = 0; j < plane; ++j) {
                const int y = yb[j];
                const T wy = w[static_cast<size_t>(y)] * g0;
                for (int c = 0; c < C; ++c) {
                    const size_t o = static_cast<size_t>(c) * plane + j;
                    gb[o] += wy * (pb[o] - (c == y ? T(1) : T(0)));
                }
            }
        }
    };
    return tape.emit(std::move(out), {logits.idx}, back, "softmax_ce");
}

template <typename T>
Value softmax_ce(Tape<T>& tape, Value logits, const Tensor<uint8_t>& labels) {
    return weighted_softmax_ce(tape, logits, labels, std::array<T, 5>{1, 1, 1, 1, 1});
}

template <typename T>
Value weighted_ce(Tape<T>& tape, Value logits, const Tensor<uint8_t>& labels,
                  const std::array<T, 5>& w) {
    T s = 0;
    for (T v : w) s += v;
    if (std::abs(s - T(1)) > T(1e-6))
        throw std::invalid_argument("weighted_ce: weights not summing to 1");
    return weighted_softmax_ce(tape, logits, labels, w);
}

// ------------------------------------------------------------------ bootstrap

struct BootstrapInfo {
    size_t retained = 0;
    size_t total = 0;
    bool fully_filtered = false;
};

// Mean of -log p over pixels whose true-class probability is strictly below
// t; pixels at or above t contribute nothing to value or gradient. An empty
// retained set yields 0 and raises the fully_filtered flag.
template <typename T>
Value bootstrap_loss(Tape<T>& tape, Value probs, const Tensor<uint8_t>& labels, T t,
                     BootstrapInfo* info = nullptr) {
    detail::require(t > T(0) && t <= T(1), "bootstrap_loss: t must be in (0,1]");
    const Tensor<T>& pv = tape.val(probs);
    detail::require(pv.rank() == 4, "bootstrap_loss: probs must be rank 4");
    const int N = pv.dim(0), C = pv.dim(1), H = pv.dim(2), W = pv.dim(3);
    if (labels.rank() != 3 || labels.dim(0) != N || labels.dim(1) != H || labels.dim(2) != W)
        throw std::invalid_argument("bootstrap_loss: label shape mismatch");
    detail::check_labels(labels, C);

    const size_t plane = static_cast<size_t>(H) * W;
    auto lab = std::make_shared<Tensor<uint8_t>>(labels);
    size_t retained = 0;
    T acc = 0;
    for (int n = 0; n < N; ++n) {
        const T* pb = pv.data() + static_cast<size_t>(n) * C * plane;
        const uint8_t* yb = lab->data() + static_cast<size_t>(n) * plane;
        for (size_t j = 0; j < plane; ++j) {
            const T p = pb[static_cast<size_t>(yb[j]) * plane + j];
            if (p < t) {
                acc -= std::log(p);
                ++retained;
            }
        }
    }
    if (info) {
        info->retained = retained;
        info->total = static_cast<size_t>(N) * plane;
        info->fully_filtered = retained == 0;
    }
    Tensor<T> out({1});
    out[0] = retained ? acc / static_cast<T>(retained) : T(0);

    auto back = [lab, t, retained, N, C, plane](Tape<T>& tp, int self) {
        if (retained == 0) return;
        const auto& nd = tp.node(Value{self});
        const int pi = nd.inputs[0];
        if (!tp.needs_grad(pi)) return;
        const Tensor<T>& pv2 = tp.val(Value{pi});
        Tensor<T>& gx = tp.grad(pi);
        const T g0 = nd.grad[0] / static_cast<T>(retained);
        for (int n = 0; n < N; ++n) {
            const T* pb = pv2.data() + static_cast<size_t>(n) * C * plane;
            T* gb = gx.data() + static_cast<size_t>(n) * C * plane;
            const uint8_t* yb = lab->data() + static_cast<size_t>(n) * plane;
            for (size_t j = 0; j < plane; ++j) {
                const size_t o = static_cast<size_t>(yb[j]) * plane + j;
                if (pb[o] < t) gb[o] -= g0 / pb[o];
            }
        }
    };
    return tape.emit(std::move(out), {probs.idx}, back, "bootstrap_loss");
}

// ------------------------------------------------------- dice / ss building

// (num_scale*sum(p*r) + eps) / (sum(p) + sum(r) + eps), scalar
template <typename T>
Value dice_term(Tape<T>& tape, Value p, Tensor<T> r, T eps, T num_scale = T(1)) {
    const Tensor<T>& pv = tape.val(p);
    if (!pv.same_shape(r)) throw std::invalid_argument("dice_term: shape mismatch");
    detail::require(eps > T(0), "dice_term: epsilon must be positive");
    auto rs = std::make_shared<Tensor<T>>(std::move(r));
    const T A = num_scale * kern::dot(pv.data(), rs->data(), pv.size()) + eps;
    const T B = kern::sum(pv.data(), pv.size()) + kern::sum(rs->data(), rs->size()) + eps;
    Tensor<T> out({1});
    out[0] = A / B;
    auto back = [rs, A, B, num_scale](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int pi = nd.inputs[0];
        if (!t.needs_grad(pi)) return;
        const T g0 = nd.grad[0];
        Tensor<T>& gx = t.grad(pi);
        const T invB = T(1) / B;
        const T c1 = g0 * num_scale * invB;
        const T c2 = g0 * A * invB * invB;
        // d/dp_i (A/B) = (num_scale*r_i*B - A)/B^2
        kern::axpy(c1, rs->data(), gx.data(), gx.size());
        for (size_t i = 0; i < gx.size(); ++i) gx[i] -= c2;
    };
    return tape.emit(std::move(out), {p.idx}, back, "dice_term");
}

// sum((r-p)^2 * w) / (sum(w) + eps) with w = r (sensitivity side) or 1-r
// (specificity side), scalar
template <typename T>
Value ss_term(Tape<T>& tape, Value p, const Tensor<T>& r, bool positive_side, T eps) {
    const Tensor<T>& pv = tape.val(p);
    if (!pv.same_shape(r)) throw std::invalid_argument("ss_term: shape mismatch");
    auto w = std::make_shared<Tensor<T>>(r.shape());
    auto rc = std::make_shared<Tensor<T>>(r);
    for (size_t i = 0; i < r.size(); ++i) (*w)[i] = positive_side ? r[i] : T(1) - r[i];
    const T denom = kern::sum(w->data(), w->size()) + eps;
    T num = 0;
    for (size_t i = 0; i < pv.size(); ++i) {
        const T d = (*rc)[i] - pv[i];
        num += d * d * (*w)[i];
    }
    Tensor<T> out({1});
    out[0] = num / denom;
    auto back = [w, rc, denom](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int pi = nd.inputs[0];
        if (!t.needs_grad(pi)) return;
        const Tensor<T>& pv2 = t.val(Value{pi});
        Tensor<T>& gx = t.grad(pi);
        const T g0 = nd.grad[0];
        for (size_t i = 0; i < gx.size(); ++i)
            gx[i] += g0 * T(-2) * ((*rc)[i] - pv2[i]) * (*w)[i] / denom;
    };
    return tape.emit(std::move(out), {p.idx}, back, "ss_term");
}

// lambda * sensitivity term + (1 - lambda) * specificity term
template <typename T>
Value ss_loss(Tape<T>& tape, Value p, const Tensor<T>& r, T lambda, T eps) {
    detail::require(lambda >= T(0) && lambda <= T(1), "ss_loss: lambda must be in [0,1]");
    detail::require(eps > T(0), "ss_loss: epsilon must be positive");
    Value pos = ss_term(tape, p, r, true, eps);
    Value neg = ss_term(tape, p, r, false, eps);
    return add(tape, scale(tape, pos, lambda), scale(tape, neg, T(1) - lambda));
}

// The printed two-sided dice loss:
//   1 - (sum p r + eps)/(sum p + r + eps) - (sum (1-p)(1-r) + eps)/(sum 2-p-r + eps)
// With standard_dsc the conventional 1 - (2*sum p r + eps)/(sum p + r + eps)
// is used instead.
template <typename T>
Value dice_loss(Tape<T>& tape, Value p, const Tensor<T>& r, T eps, bool standard_dsc = false) {
    if (standard_dsc) return affine(tape, dice_term(tape, p, Tensor<T>(r), eps, T(2)), T(-1), T(1));
    Value pos = dice_term(tape, p, Tensor<T>(r), eps);
    Tensor<T> rc(r.shape());
    for (size_t i = 0; i < r.size(); ++i) rc[i] = T(1) - r[i];
    Value neg = dice_term(tape, affine(tape, p, T(-1), T(1)), std::move(rc), eps);
    return affine(tape, add(tape, pos, neg), T(-1), T(1));
}

// ------------------------------------------------------------- hierarchy

// p0: complete tumor (classes 1-4), p1: tumor core (1,3,4), p2: enhancing (4)
template <typename T>
struct HierValues {
    Value p0, p1, p2;
};

template <typename T>
struct HierMasks {
    Tensor<T> r0, r1, r2;
};

template <typename T>
HierValues<T> aggregate_hierarchy(Tape<T>& tape, Value class_probs) {
    const Tensor<T>& pv = tape.val(class_probs);
    detail::require(pv.rank() == 4 && pv.dim(1) == 5, "aggregate_hierarchy: probs must be (N,5,H,W)");
    HierValues<T> h;
    h.p0 = sum_channels(tape, class_probs, {1, 2, 3, 4});
    h.p1 = sum_channels(tape, class_probs, {1, 3, 4});
    h.p2 = sum_channels(tape, class_probs, {4});
    return h;
}

template <typename T>
HierMasks<T> hierarchy_masks(const Tensor<uint8_t>& labels) {
    detail::check_labels(labels, 5);
    detail::require(labels.rank() == 3, "hierarchy_masks: labels must be (N,H,W)");
    const int N = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
    HierMasks<T> m{Tensor<T>({N, 1, H, W}), Tensor<T>({N, 1, H, W}), Tensor<T>({N, 1, H, W})};
    for (size_t i = 0; i < labels.size(); ++i) {
        const uint8_t y = labels[i];
        m.r0[i] = (y >= 1) ? T(1) : T(0);
        m.r1[i] = (y == 1 || y == 3 || y == 4) ? T(1) : T(0);
        m.r2[i] = (y == 4) ? T(1) : T(0);
    }
    return m;
}

// Plain-array helper mirroring aggregate_hierarchy on one pixel's class probs.
template <typename T>
std::array<T, 3> aggregate_row(const std::array<T, 5>& q) {
    return {q[1] + q[2] + q[3] + q[4], q[1] + q[3] + q[4], q[4]};
}

template <typename T>
struct HdiceValues {
    Value dl0, dl1, dl2, dlh;
};

// Three coupled binary dice losses on the nested probabilities; level k's
// complement pair is the band between level k-1 and level k. The combined
// loss is the weighted sum of the three (equal thirds by default).
template <typename T>
HdiceValues<T> hdice_loss(Tape<T>& tape, const HierValues<T>& hp, const HierMasks<T>& r, T eps,
                          std::array<T, 3> level_weights = {T(1) / T(3), T(1) / T(3), T(1) / T(3)},
                          bool standard_dsc = false) {
    detail::require(eps > T(0), "hdice_loss: epsilon must be positive");
    auto level = [&](Value ppos, const Tensor<T>& rpos, Value pneg, Tensor<T> rneg) -> Value {
        if (standard_dsc)
            return affine(tape, dice_term(tape, ppos, Tensor<T>(rpos), eps, T(2)), T(-1), T(1));
        Value pos = dice_term(tape, ppos, Tensor<T>(rpos), eps);
        Value neg = dice_term(tape, pneg, std::move(rneg), eps);
        return affine(tape, add(tape, pos, neg), T(-1), T(1));
    };

    Tensor<T> r0c(r.r0.shape());
    for (size_t i = 0; i < r.r0.size(); ++i) r0c[i] = T(1) - r.r0[i];
    Tensor<T> r01(r.r0.shape());
    for (size_t i = 0; i < r.r0.size(); ++i) r01[i] = r.r0[i] - r.r1[i];
    Tensor<T> r12(r.r1.shape());
    for (size_t i = 0; i < r.r1.size(); ++i) r12[i] = r.r1[i] - r.r2[i];

    HdiceValues<T> out;
    out.dl0 = level(hp.p0, r.r0, affine(tape, hp.p0, T(-1), T(1)), std::move(r0c));
    out.dl1 = level(hp.p1, r.r1, sub(tape, hp.p0, hp.p1), std::move(r01));
    out.dl2 = level(hp.p2, r.r2, sub(tape, hp.p1, hp.p2), std::move(r12));
    out.dlh = add(tape, add(tape, scale(tape, out.dl0, level_weights[0]),
                            scale(tape, out.dl1, level_weights[1])),
                  scale(tape, out.dl2, level_weights[2]));
    return out;
}

// ------------------------------------------------------------ loss builder

struct LossOutcome {
    Value loss;
    BootstrapInfo bootstrap;
};

// Assembles the configured training loss from raw logits. Binary losses (ss,
// dice) apply at the complete-tumor level of the hierarchy.
template <typename T>
LossOutcome build_loss(Tape<T>& tape, LossKind kind, Value logits, const Tensor<uint8_t>& labels,
                       const LossParams<T>& params) {
    LossOutcome out;
    switch (kind) {
        case LossKind::Ce:
            out.loss = softmax_ce(tape, logits, labels);
            break;
        case LossKind::Wce:
            out.loss = weighted_ce(tape, logits, labels, params.class_weights);
            break;
        case LossKind::Bootstrap: {
            Value probs = softmax_channels(tape, logits);
            out.loss = bootstrap_loss(tape, probs, labels, params.bootstrap_t, &out.bootstrap);
            break;
        }
        case LossKind::Ss: {
            Value probs = softmax_channels(tape, logits);
            Value p0 = sum_channels(tape, probs, {1, 2, 3, 4});
            out.loss = ss_loss(tape, p0, hierarchy_masks<T>(labels).r0, params.ss_lambda, params.epsilon);
            break;
        }
        case LossKind::Dice: {
            Value probs = softmax_channels(tape, logits);
            Value p0 = sum_channels(tape, probs, {1, 2, 3, 4});
            out.loss = dice_loss(tape, p0, hierarchy_masks<T>(labels).r0, params.epsilon,
                                 params.standard_dsc);
            break;
        }
        case LossKind::Hdice: {
            Value probs = softmax_channels(tape, logits);
            HierValues<T> hp = aggregate_hierarchy(tape, probs);
            HierMasks<T> masks = hierarchy_masks<T>(labels);
            out.loss = hdice_loss(tape, hp, masks, params.epsilon, params.hdice_weights,
                                  params.standard_dsc)
                           .dlh;
            break;
        }
    }
    return out;
}

}  // namespace hdseg
