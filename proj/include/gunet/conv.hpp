// SPDX-License-Identifier: Apache-2.0
//
// 2-D convolution with reflect/zero padding, grouped and depthwise forms,
// and its reverse-mode gradients. Loops are plane-streaming but keep the
// per-output-element reduction order fixed at (in_channel, ky, kx), so the
// result is bit-identical to a naive triple loop.

#pragma once

#include <algorithm>

#include "gunet/core.hpp"

namespace gunet {

enum class PadMode { Zero, Reflect };

// Reflect-101 index fold: maps any integer to [0, n). n == 1 collapses to 0.
inline int reflect_index(int t, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    t %= period;
    if (t < 0) t += period;
    return (t < n) ? t : period - t;
}

template <typename Real>
struct ConvParams {
    Tensor<Real> weight;  // (out_ch, in_ch/groups, k, k)
    Tensor<Real> bias;    // (1, out_ch, 1, 1); empty data if has_bias == false
    bool has_bias = true;
    int stride = 1;
    int groups = 1;
    PadMode pad = PadMode::Reflect;

    int out_channels() const { return weight.n(); }
    int in_channels() const { return weight.c() * groups; }
    int kernel() const { return weight.h(); }

    void validate() const {
        check_config(weight.h() == weight.w(), "conv: kernel must be square");
        check_config(kernel() % 2 == 1, "conv: kernel size must be odd");
        check_config(stride >= 1, "conv: stride must be positive");
        check_config(groups >= 1, "conv: groups must be positive");
        check_config(out_channels() % groups == 0, "conv: out channels not divisible by groups");
        if (has_bias) check_config(bias.c() == out_channels(), "conv: bias size mismatch");
    }

    void ensure_grad() {
        weight.ensure_grad();
        if (has_bias) bias.ensure_grad();
    }
    void zero_grad() {
        weight.zero_grad();
        bias.zero_grad();
    }
};

template <typename Real>
ConvParams<Real> make_conv(int in_ch, int out_ch, int k, int groups = 1, bool bias = true,
                           int stride = 1, PadMode pad = PadMode::Reflect) {
    check_config(in_ch % groups == 0, "conv: in channels not divisible by groups");
    ConvParams<Real> p;
    p.weight = Tensor<Real>(out_ch, in_ch / groups, k, k);
    p.has_bias = bias;
    p.bias = bias ? Tensor<Real>(1, out_ch, 1, 1) : Tensor<Real>();
    p.stride = stride;
    p.groups = groups;
    p.pad = pad;
    p.validate();
    return p;
}

// Pad spatial dims by `p` on each side.
template <typename Real>
Tensor<Real> pad2d(const Tensor<Real>& x, int p, PadMode mode) {
    if (p == 0) return x;
    Tensor<Real> out(x.n(), x.c(), x.h() + 2 * p, x.w() + 2 * p);
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch) {
            const Real* src = x.plane(b, ch);
            Real* dst = out.plane(b, ch);
            for (int y = 0; y < out.h(); ++y)
                for (int xx = 0; xx < out.w(); ++xx) {
                    int sy = y - p, sx = xx - p;
                    Real v;
                    if (mode == PadMode::Reflect) {
                        v = src[reflect_index(sy, x.h()) * x.w() + reflect_index(sx, x.w())];
                    } else {
                        v = (sy >= 0 && sy < x.h() && sx >= 0 && sx < x.w())
                                ? src[sy * x.w() + sx]
                                : Real(0);
                    }
                    dst[y * out.w() + xx] = v;
                }
        }
    return out;
}

// Scatter padded-space gradients back onto the unpadded input, accumulating
// where the pad map aliased several padded cells to one source cell.
template <typename Real>
void unpad2d_backward(const Tensor<Real>& grad_padded, int p, PadMode mode, Tensor<Real>& x) {
    x.ensure_grad();
    if (p == 0) {
        for (std::size_t i = 0; i < x.numel(); ++i) x.grad[i] += grad_padded.data[i];
        return;
    }
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch) {
            const Real* gp = grad_padded.plane(b, ch);
            Real* gx = x.grad.data() + x.idx(b, ch, 0, 0);
            for (int y = 0; y < grad_padded.h(); ++y)
                for (int xx = 0; xx < grad_padded.w(); ++xx) {
                    int sy = y - p, sx = xx - p;
                    if (mode == PadMode::Reflect) {
                        gx[reflect_index(sy, x.h()) * x.w() + reflect_index(sx, x.w())] +=
                            gp[y * grad_padded.w() + xx];
                    } else if (sy >= 0 && sy < x.h() && sx >= 0 && sx < x.w()) {
                        gx[sy * x.w() + sx] += gp[y * grad_padded.w() + xx];
                    }
                }
        }
}

inline int conv_out_dim(int in, int stride) {
    // padding is always (k-1)/2, so out = ceil(in / stride)
    return (in + stride - 1) / stride;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const ConvParams<Real>& params) {
    params.validate();
    check_config(x.c() == params.in_channels(),
                 "conv: input has " + std::to_string(x.c()) + " channels, expected " +
                     std::to_string(params.in_channels()));

    const int k = params.kernel(), s = params.stride, g = params.groups;
    const int pad = (k - 1) / 2;
    const int icg = params.weight.c();           // in channels per group
    const int ocg = params.out_channels() / g;   // out channels per group
    const Tensor<Real> xp = pad2d(x, pad, params.pad);
    const int oh = conv_out_dim(x.h(), s), ow = conv_out_dim(x.w(), s);

    Tensor<Real> y(x.n(), params.out_channels(), oh, ow);
    for (int b = 0; b < x.n(); ++b)
        for (int oc = 0; oc < params.out_channels(); ++oc) {
            Real* yp = y.plane(b, oc);
            if (params.has_bias) {
                const Real bv = params.bias.data[oc];
                for (int i = 0; i < oh * ow; ++i) yp[i] = bv;
            }
            const int grp = oc / ocg;
            for (int ic = 0; ic < icg; ++ic) {
                const Real* xpp = xp.plane(b, grp * icg + ic);
                const Real* wrow = &params.weight.data[params.weight.idx(oc, ic, 0, 0)];
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const Real wv = wrow[ky * k + kx];
                        for (int yy = 0; yy < oh; ++yy) {
                            const Real* xr = xpp + (yy * s + ky) * xp.w() + kx;
                            Real* yr = yp + yy * ow;
                            for (int xx = 0; xx < ow; ++xx) yr[xx] += wv * xr[xx * s];
                        }
                    }
            }
        }
    return y;
}

// Accumulates into x.grad, params.weight.grad and params.bias.grad.
template <typename Real>
void conv2d_backward(Tensor<Real>& x, ConvParams<Real>& params, const Tensor<Real>& grad_out) {
    const int k = params.kernel(), s = params.stride, g = params.groups;
    const int pad = (k - 1) / 2;
    const int icg = params.weight.c();
    const int ocg = params.out_channels() / g;
    const int oh = grad_out.h(), ow = grad_out.w();
    check_shape(grad_out.c() == params.out_channels() && grad_out.n() == x.n() &&
                    oh == conv_out_dim(x.h(), s) && ow == conv_out_dim(x.w(), s),
                "conv backward: grad shape mismatch");

    params.ensure_grad();
    const Tensor<Real> xp = pad2d(x, pad, params.pad);

    // bias: dL/db[oc] = sum over (b, oh, ow)
    if (params.has_bias)
        for (int oc = 0; oc < params.out_channels(); ++oc) {
            Real acc = 0;
            for (int b = 0; b < x.n(); ++b) {
                const Real* gp = grad_out.plane(b, oc);
                for (int i = 0; i < oh * ow; ++i) acc += gp[i];
            }
            params.bias.grad[oc] += acc;
        }

    // weights: dL/dw[oc][ic][ky][kx] = sum_{b,yy,xx} xpad * gout
    for (int oc = 0; oc < params.out_channels(); ++oc) {
        const int grp = oc / ocg;
        for (int ic = 0; ic < icg; ++ic)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    Real acc = 0;
                    for (int b = 0; b < x.n(); ++b) {
                        const Real* xpp = xp.plane(b, grp * icg + ic);
                        const Real* gp = grad_out.plane(b, oc);
                        for (int yy = 0; yy < oh; ++yy) {
                            const Real* xr = xpp + (yy * s + ky) * xp.w() + kx;
                            const Real* gr = gp + yy * ow;
                            for (int xx = 0; xx < ow; ++xx) acc += xr[xx * s] * gr[xx];
                        }
                    }
                    params.weight.grad[params.weight.idx(oc, ic, ky, kx)] += acc;
                }
    }

    // input: gradient in padded space, then fold back through the pad map
    Tensor<Real> gxp(xp.shape);
    for (int b = 0; b < x.n(); ++b)
        for (int grp = 0; grp < g; ++grp)
            for (int ic = 0; ic < icg; ++ic) {
                Real* gxpp = gxp.plane(b, grp * icg + ic);
                for (int oc = grp * ocg; oc < (grp + 1) * ocg; ++oc) {
                    const Real* gp = grad_out.plane(b, oc);
                    const Real* wrow = &params.weight.data[params.weight.idx(oc, ic, 0, 0)];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const Real wv = wrow[ky * k + kx];
                            for (int yy = 0; yy < oh; ++yy) {
                                Real* gr = gxpp + (yy * s + ky) * gxp.w() + kx;
                                const Real* go = gp + yy * ow;
                                for (int xx = 0; xx < ow; ++xx) gr[xx * s] += wv * go[xx];
                            }
                        }
                }
            }
    unpad2d_backward(gxp, pad, params.pad, x);
}

}  // namespace gunet
