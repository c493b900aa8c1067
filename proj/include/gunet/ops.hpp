// SPDX-License-Identifier: Apache-2.0
//
// Pointwise activations, global average pooling, branch softmax,
// pixel shuffle/unshuffle and the L1 training loss, with gradients.

#pragma once

#include <cmath>

#include "gunet/core.hpp"

namespace gunet {

enum class Act { Sigmoid, HardSigmoid, Tanh, Relu, Gelu };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::Sigmoid: return "sigmoid";
        case Act::HardSigmoid: return "hard_sigmoid";
        case Act::Tanh: return "tanh";
        case Act::Relu: return "relu";
        case Act::Gelu: return "gelu";
    }
    return "?";
}

template <typename Real>
Real act_eval(Act a, Real x) {
    switch (a) {
        case Act::Sigmoid:
            return Real(1) / (Real(1) + std::exp(-x));
        case Act::HardSigmoid:
            // clamp(x/6 + 1/2, 0, 1)
            return std::min(Real(1), std::max(Real(0), x / Real(6) + Real(0.5)));
        case Act::Tanh:
            return std::tanh(x);
        case Act::Relu:
            return x > Real(0) ? x : Real(0);
        case Act::Gelu:
            // exact Gaussian CDF form: x * Phi(x)
            return Real(0.5) * x * (Real(1) + std::erf(x / Real(M_SQRT2)));
    }
    return Real(0);
}

template <typename Real>
Real act_grad(Act a, Real x) {
    switch (a) {
        case Act::Sigmoid: {
            const Real s = Real(1) / (Real(1) + std::exp(-x));
            return s * (Real(1) - s);
        }
        case Act::HardSigmoid:
            return (x >= Real(-3) && x <= Real(3)) ? Real(1) / Real(6) : Real(0);
        case Act::Tanh: {
            const Real t = std::tanh(x);
            return Real(1) - t * t;
        }
        case Act::Relu:
            return x > Real(0) ? Real(1) : Real(0);
        case Act::Gelu: {
            const Real phi = std::exp(-x * x / Real(2)) / Real(std::sqrt(2.0 * M_PI));
            const Real cdf = Real(0.5) * (Real(1) + std::erf(x / Real(M_SQRT2)));
            return cdf + x * phi;
        }
    }
    return Real(0);
}

template <typename Real>
Tensor<Real> activate(const Tensor<Real>& x, Act a) {
    Tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = act_eval(a, x.data[i]);
    return y;
}

// Accumulates d(act)/dx * grad_out into x.grad.
template <typename Real>
void activate_backward(Tensor<Real>& x, Act a, const Tensor<Real>& grad_out) {
    check_same_shape(x, grad_out, "activate_backward");
    x.ensure_grad();
    for (std::size_t i = 0; i < x.numel(); ++i)
        x.grad[i] += act_grad(a, x.data[i]) * grad_out.data[i];
}

// --- global average pooling -------------------------------------------

template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
    Tensor<Real> y(x.n(), x.c(), 1, 1);
    const Real inv = Real(1) / (Real(x.h()) * Real(x.w()));
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch) {
            const Real* p = x.plane(b, ch);
            Real acc = 0;
            for (int i = 0; i < x.h() * x.w(); ++i) acc += p[i];
            y.at(b, ch, 0, 0) = acc * inv;
        }
    return y;
}

template <typename Real>
void global_avg_pool_backward(Tensor<Real>& x, const Tensor<Real>& grad_out) {
    check_shape(grad_out.n() == x.n() && grad_out.c() == x.c() && grad_out.h() == 1 &&
                    grad_out.w() == 1,
                "gap backward: grad shape mismatch");
    x.ensure_grad();
    const Real inv = Real(1) / (Real(x.h()) * Real(x.w()));
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch) {
            const Real g = grad_out.at(b, ch, 0, 0) * inv;
            Real* gp = x.grad.data() + x.idx(b, ch, 0, 0);
            for (int i = 0; i < x.h() * x.w(); ++i) gp[i] += g;
        }
}

// --- softmax over branch groups ----------------------------------------
//
// logits: (B, n_branches*C, 1, 1), branch-major: branch i owns channels
// [i*C, (i+1)*C). Softmax is taken across branches per (batch, channel slot).

template <typename Real>
Tensor<Real> softmax_over_branches(const Tensor<Real>& logits, int n_branches) {
    check_shape(logits.c() % n_branches == 0,
                "softmax: channel dim not divisible by branch count");
    const int cs = logits.c() / n_branches;  // channel slots
    Tensor<Real> y(logits.shape);
    for (int b = 0; b < logits.n(); ++b)
        for (int hw = 0; hw < logits.h() * logits.w(); ++hw)
            for (int s = 0; s < cs; ++s) {
                Real mx = logits.data[logits.idx(b, s, 0, 0) + hw];
                for (int i = 1; i < n_branches; ++i)
                    mx = std::max(mx, logits.data[logits.idx(b, i * cs + s, 0, 0) + hw]);
                Real sum = 0;
                for (int i = 0; i < n_branches; ++i) {
                    const Real e =
                        std::exp(logits.data[logits.idx(b, i * cs + s, 0, 0) + hw] - mx);
                    y.data[y.idx(b, i * cs + s, 0, 0) + hw] = e;
                    sum += e;
                }
                for (int i = 0; i < n_branches; ++i)
                    y.data[y.idx(b, i * cs + s, 0, 0) + hw] /= sum;
            }
    return y;
}

// grad of softmax given its output `weights`; accumulates into logits.grad.
template <typename Real>
void softmax_over_branches_backward(Tensor<Real>& logits, const Tensor<Real>& weights,
                                    int n_branches, const Tensor<Real>& grad_out) {
    check_same_shape(weights, grad_out, "softmax backward");
    logits.ensure_grad();
    const int cs = logits.c() / n_branches;
    for (int b = 0; b < logits.n(); ++b)
        for (int hw = 0; hw < logits.h() * logits.w(); ++hw)
            for (int s = 0; s < cs; ++s) {
                Real dot = 0;
                for (int i = 0; i < n_branches; ++i) {
                    const std::size_t at = weights.idx(b, i * cs + s, 0, 0) + hw;
                    dot += weights.data[at] * grad_out.data[at];
                }
                for (int i = 0; i < n_branches; ++i) {
                    const std::size_t at = weights.idx(b, i * cs + s, 0, 0) + hw;
                    logits.grad[at] += weights.data[at] * (grad_out.data[at] - dot);
                }
            }
}

// --- pixel shuffle / unshuffle ------------------------------------------

// (B, C*r^2, H, W) -> (B, C, H*r, W*r)
template <typename Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& x, int r) {
    check_shape(x.c() % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
    const int oc = x.c() / (r * r);
    Tensor<Real> y(x.n(), oc, x.h() * r, x.w() * r);
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < oc; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const Real* src = x.plane(b, ch * r * r + dy * r + dx);
                    Real* dst = y.plane(b, ch);
                    for (int yy = 0; yy < x.h(); ++yy)
                        for (int xx = 0; xx < x.w(); ++xx)
                            dst[(yy * r + dy) * y.w() + (xx * r + dx)] = src[yy * x.w() + xx];
                }
    return y;
}

// (B, C, H*r, W*r) -> (B, C*r^2, H, W); exact inverse of pixel_shuffle
template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, int r) {
    check_shape(x.h() % r == 0 && x.w() % r == 0,
                "pixel_unshuffle: spatial dims not divisible by r");
    const int oh = x.h() / r, ow = x.w() / r;
    Tensor<Real> y(x.n(), x.c() * r * r, oh, ow);
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const Real* src = x.plane(b, ch);
                    Real* dst = y.plane(b, ch * r * r + dy * r + dx);
                    for (int yy = 0; yy < oh; ++yy)
                        for (int xx = 0; xx < ow; ++xx)
                            dst[yy * ow + xx] = src[(yy * r + dy) * x.w() + (xx * r + dx)];
                }
    return y;
}

// --- L1 loss -------------------------------------------------------------

template <typename Real>
Real l1_loss(const Tensor<Real>& pred, const Tensor<Real>& target) {
    check_same_shape(pred, target, "l1_loss");
    Real acc = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i)
        acc += std::fabs(pred.data[i] - target.data[i]);
    return acc / Real(pred.numel());
}

// subgradient; defined as 0 at exact ties
template <typename Real>
Tensor<Real> l1_loss_grad(const Tensor<Real>& pred, const Tensor<Real>& target) {
    check_same_shape(pred, target, "l1_loss_grad");
    Tensor<Real> g(pred.shape);
    const Real inv = Real(1) / Real(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const Real d = pred.data[i] - target.data[i];
        g.data[i] = d > Real(0) ? inv : (d < Real(0) ? -inv : Real(0));
    }
    return g;
}

}  // namespace gunet
