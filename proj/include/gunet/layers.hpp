// SPDX-License-Identifier: Apache-2.0
//
// gUNet building blocks: the gated-convolution residual block, the three
// skip-fusion variants (SK / concat / sum), SE and ECA channel attention,
// and the shuffle-based down/up-sampling layers. Every layer caches what
// its own backward pass needs; backward returns the input gradient and
// accumulates parameter gradients.

#pragma once

#include <optional>
#include <string>
#include <utility>

#include "gunet/config.hpp"
#include "gunet/conv.hpp"
#include "gunet/core.hpp"
#include "gunet/norm.hpp"
#include "gunet/ops.hpp"

namespace gunet {

// Move a tensor's accumulated gradient out as a value tensor.
template <typename Real>
Tensor<Real> take_grad(Tensor<Real>& t) {
    Tensor<Real> g;
    g.shape = t.shape;
    if (t.has_grad()) {
        g.data = std::move(t.grad);
        t.grad.clear();
    } else {
        g.data.assign(t.numel(), Real(0));
    }
    return g;
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_shape(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
                "concat: spatial/batch mismatch");
    Tensor<Real> out(a.n(), a.c() + b.c(), a.h(), a.w());
    const int hw = a.h() * a.w();
    for (int bi = 0; bi < a.n(); ++bi) {
        for (int ch = 0; ch < a.c(); ++ch)
            std::copy(a.plane(bi, ch), a.plane(bi, ch) + hw, out.plane(bi, ch));
        for (int ch = 0; ch < b.c(); ++ch)
            std::copy(b.plane(bi, ch), b.plane(bi, ch) + hw, out.plane(bi, a.c() + ch));
    }
    return out;
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> split_channels(const Tensor<Real>& x, int c_first) {
    Tensor<Real> a(x.n(), c_first, x.h(), x.w());
    Tensor<Real> b(x.n(), x.c() - c_first, x.h(), x.w());
    const int hw = x.h() * x.w();
    for (int bi = 0; bi < x.n(); ++bi) {
        for (int ch = 0; ch < c_first; ++ch)
            std::copy(x.plane(bi, ch), x.plane(bi, ch) + hw, a.plane(bi, ch));
        for (int ch = c_first; ch < x.c(); ++ch)
            std::copy(x.plane(bi, ch), x.plane(bi, ch) + hw, b.plane(bi, ch - c_first));
    }
    return {std::move(a), std::move(b)};
}

// y[b,c,:,:] = x[b,c,:,:] * s[b,c]
template <typename Real>
Tensor<Real> channel_scale(const Tensor<Real>& x, const Tensor<Real>& s) {
    check_shape(s.n() == x.n() && s.c() == x.c() && s.h() == 1 && s.w() == 1,
                "channel_scale: scale must be (B,C,1,1)");
    Tensor<Real> y(x.shape);
    const int hw = x.h() * x.w();
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch) {
            const Real sv = s.at(b, ch, 0, 0);
            const Real* p = x.plane(b, ch);
            Real* q = y.plane(b, ch);
            for (int i = 0; i < hw; ++i) q[i] = p[i] * sv;
        }
    return y;
}

// per-(b,c) spatial dot product of two tensors -> (B,C,1,1)
template <typename Real>
Tensor<Real> spatial_dot(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "spatial_dot");
    Tensor<Real> out(a.n(), a.c(), 1, 1);
    const int hw = a.h() * a.w();
    for (int bi = 0; bi < a.n(); ++bi)
        for (int ch = 0; ch < a.c(); ++ch) {
            const Real* pa = a.plane(bi, ch);
            const Real* pb = b.plane(bi, ch);
            Real acc = 0;
            for (int i = 0; i < hw; ++i) acc += pa[i] * pb[i];
            out.at(bi, ch, 0, 0) = acc;
        }
    return out;
}

struct RunFlags {
    bool want_grad = false;     // cache intermediates for backward
    bool update_stats = true;   // allow BN running-stat updates (train mode only)
};

// --- SE / ECA channel attention --------------------------------------------

template <typename Real>
struct SeModule {
    ConvParams<Real> reduce, expand;

    static SeModule make(int channels, PadMode pad) {
        SeModule m;
        const int d = ModelConfig::reduced_width(channels);
        m.reduce = make_conv<Real>(channels, d, 1, 1, true, 1, pad);
        m.expand = make_conv<Real>(d, channels, 1, 1, true, 1, pad);
        return m;
    }

    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        Tensor<Real> z = global_avg_pool(x);
        Tensor<Real> r0 = conv2d(z, reduce);
        Tensor<Real> r = activate(r0, Act::Relu);
        Tensor<Real> e0 = conv2d(r, expand);
        Tensor<Real> e = activate(e0, Act::Sigmoid);
        Tensor<Real> y = channel_scale(x, e);
        if (rf.want_grad) {
            x_ = x; z_ = std::move(z); r0_ = std::move(r0);
            r_ = std::move(r); e0_ = std::move(e0); e_ = std::move(e);
        }
        return y;
    }

    Tensor<Real> backward(const Tensor<Real>& grad_y) {
        Tensor<Real> grad_x = channel_scale(grad_y, e_);  // direct path of y = x * e
        Tensor<Real> grad_e = spatial_dot(grad_y, x_);
        Tensor<Real> grad_e0(e0_.shape);
        for (std::size_t i = 0; i < e0_.numel(); ++i)
            grad_e0.data[i] = act_grad(Act::Sigmoid, e0_.data[i]) * grad_e.data[i];
        conv2d_backward(r_, expand, grad_e0);
        Tensor<Real> grad_r = take_grad(r_);
        Tensor<Real> grad_r0(r0_.shape);
        for (std::size_t i = 0; i < r0_.numel(); ++i)
            grad_r0.data[i] = act_grad(Act::Relu, r0_.data[i]) * grad_r.data[i];
        conv2d_backward(z_, reduce, grad_r0);
        Tensor<Real> gap_sink(x_.shape);
        global_avg_pool_backward(gap_sink, take_grad(z_));
        for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x.data[i] += gap_sink.grad[i];
        return grad_x;
    }

private:
    Tensor<Real> x_, z_, r0_, r_, e0_, e_;
};

template <typename Real>
struct EcaModule {
    Tensor<Real> weight;  // (1, 1, 1, k) cross-channel 1-D kernel, no bias
    int k = 3;

    static EcaModule make(int channels) {
        EcaModule m;
        m.k = ModelConfig::eca_kernel(channels);
        m.weight = Tensor<Real>(1, 1, 1, m.k);
        return m;
    }

    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        Tensor<Real> z = global_avg_pool(x);
        Tensor<Real> l(z.shape);
        const int C = x.c(), off = k / 2;
        for (int b = 0; b < x.n(); ++b)
            for (int ch = 0; ch < C; ++ch) {
                Real acc = 0;
                for (int j = 0; j < k; ++j) {
                    const int src = ch + j - off;
                    if (src >= 0 && src < C) acc += weight.data[j] * z.at(b, src, 0, 0);
                }
                l.at(b, ch, 0, 0) = acc;
            }
        Tensor<Real> e = activate(l, Act::Sigmoid);
        Tensor<Real> y = channel_scale(x, e);
        if (rf.want_grad) { x_ = x; z_ = std::move(z); l_ = std::move(l); e_ = std::move(e); }
        return y;
    }

    Tensor<Real> backward(const Tensor<Real>& grad_y) {
        Tensor<Real> grad_x = channel_scale(grad_y, e_);
        Tensor<Real> grad_e = spatial_dot(grad_y, x_);
        Tensor<Real> grad_l(l_.shape);
        for (std::size_t i = 0; i < l_.numel(); ++i)
            grad_l.data[i] = act_grad(Act::Sigmoid, l_.data[i]) * grad_e.data[i];
        weight.ensure_grad();
        Tensor<Real> grad_z(z_.shape);
        const int C = x_.c(), off = k / 2;
        for (int j = 0; j < k; ++j) {
            Real acc = 0;
            for (int b = 0; b < x_.n(); ++b)
                for (int ch = 0; ch < C; ++ch) {
                    const int src = ch + j - off;
                    if (src >= 0 && src < C) {
                        acc += grad_l.at(b, ch, 0, 0) * z_.at(b, src, 0, 0);
                        grad_z.at(b, src, 0, 0) += weight.data[j] * grad_l.at(b, ch, 0, 0);
                    }
                }
            weight.grad[j] += acc;
        }
        Tensor<Real> gap_sink(x_.shape);
        global_avg_pool_backward(gap_sink, grad_z);
        for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x.data[i] += gap_sink.grad[i];
        return grad_x;
    }

private:
    Tensor<Real> x_, z_, l_, e_;
};

// --- gConv block -------------------------------------------------------------
//
//   xhat = Norm(x)
//   x1   = gate(PWConv1(xhat))          (gating)   or act(PWConv1(xhat))
//   x2   = DWConv(PWConv2(xhat))
//   y    = x + PWConv3(x1 * x2)         (gating)   or x + PWConv3(x1 + x2)

template <typename Real>
struct GConvBlock {
    int channels = 0;
    NormKind norm_kind = NormKind::Batch;
    Act gate = Act::Sigmoid;
    NonlinKind nonlin = NonlinKind::Gating;
    AttentionKind attention = AttentionKind::None;
    bool norm_folded = false;  // set by BN folding; norm is skipped

    NormState<Real> norm;
    ConvParams<Real> pw1, pw2, dw, pw3;
    std::optional<SeModule<Real>> se;
    std::optional<EcaModule<Real>> eca;

    static GConvBlock make(int channels, const ModelConfig& cfg) {
        GConvBlock blk;
        blk.channels = channels;
        blk.norm_kind = cfg.norm_kind;
        blk.gate = cfg.gate_kind;
        blk.nonlin = cfg.nonlin;
        blk.attention = cfg.attention;
        blk.norm = make_norm_state<Real>(channels);
        blk.pw1 = make_conv<Real>(channels, channels, 1, 1, true, 1, cfg.pad);
        blk.pw2 = make_conv<Real>(channels, channels, 1, 1, true, 1, cfg.pad);
        blk.dw = make_conv<Real>(channels, channels, cfg.dw_kernel, channels, true, 1, cfg.pad);
        blk.pw3 = make_conv<Real>(channels, channels, 1, 1, true, 1, cfg.pad);
        if (cfg.attention == AttentionKind::Se) blk.se = SeModule<Real>::make(channels, cfg.pad);
        if (cfg.attention == AttentionKind::Eca) blk.eca = EcaModule<Real>::make(channels);
        return blk;
    }

    Act branch_act() const {
        if (nonlin == NonlinKind::Gating) return gate;
        return nonlin == NonlinKind::ReluSum ? Act::Relu : Act::Gelu;
    }

    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        check_shape(x.c() == channels, "gconv_block: channel mismatch");
        Tensor<Real> xhat = norm_forward(x, rf);
        Tensor<Real> a = conv2d(xhat, pw1);
        Tensor<Real> g = activate(a, branch_act());
        Tensor<Real> t = conv2d(xhat, pw2);
        Tensor<Real> u = conv2d(t, dw);
        Tensor<Real> comb = (nonlin == NonlinKind::Gating) ? mul(g, u) : add(g, u);
        Tensor<Real> v = conv2d(comb, pw3);
        if (se) v = se->forward(v, rf);
        if (eca) v = eca->forward(v, rf);
        Tensor<Real> y = add(x, v);
        if (rf.want_grad) {
            xhat_ = std::move(xhat); a_ = std::move(a); g_ = std::move(g);
            t_ = std::move(t); u_ = std::move(u); comb_ = std::move(comb);
        }
        return y;
    }

    // Returns grad wrt x; accumulates parameter grads.
    Tensor<Real> backward(const Tensor<Real>& grad_y) {
        Tensor<Real> gv = grad_y;
        if (eca) gv = eca->backward(gv);
        if (se) gv = se->backward(gv);

        conv2d_backward(comb_, pw3, gv);
        Tensor<Real> grad_comb = take_grad(comb_);

        Tensor<Real> grad_g, grad_u;
        if (nonlin == NonlinKind::Gating) {
            grad_g = mul(grad_comb, u_);
            grad_u = mul(grad_comb, g_);
        } else {
            grad_g = grad_comb;
            grad_u = grad_comb;
        }

        activate_backward(a_, branch_act(), grad_g);
        Tensor<Real> grad_a = take_grad(a_);

        conv2d_backward(t_, dw, grad_u);
        Tensor<Real> grad_t = take_grad(t_);

        conv2d_backward(xhat_, pw1, grad_a);
        conv2d_backward(xhat_, pw2, grad_t);
        Tensor<Real> grad_xhat = take_grad(xhat_);

        Tensor<Real> grad_x = norm_backward(grad_xhat);
        for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x.data[i] += grad_y.data[i];
        return grad_x;
    }

private:
    Tensor<Real> norm_forward(const Tensor<Real>& x, const RunFlags& rf) {
        if (norm_folded) return x;
        switch (norm_kind) {
            case NormKind::Batch:
                return batch_norm(x, norm, rf.want_grad ? &bn_cache_ : nullptr,
                                  rf.update_stats);
            case NormKind::Layer:
                return layer_norm(x, norm.gamma, norm.beta, norm.eps,
                                  rf.want_grad ? &sn_cache_ : nullptr);
            case NormKind::Instance:
                return instance_norm(x, norm.gamma, norm.beta, norm.eps,
                                     rf.want_grad ? &sn_cache_ : nullptr);
        }
        return x;
    }

    Tensor<Real> norm_backward(const Tensor<Real>& grad_xhat) {
        Tensor<Real> sink(grad_xhat.shape);
        if (norm_folded) return grad_xhat;
        switch (norm_kind) {
            case NormKind::Batch:
                batch_norm_backward(sink, norm, bn_cache_, grad_xhat);
                break;
            case NormKind::Layer:
                layer_norm_backward(sink, norm.gamma, norm.beta, sn_cache_, grad_xhat);
                break;
            case NormKind::Instance:
                instance_norm_backward(sink, norm.gamma, norm.beta, sn_cache_, grad_xhat);
                break;
        }
        return take_grad(sink);
    }

    Tensor<Real> xhat_, a_, g_, t_, u_, comb_;
    NormCache<Real> bn_cache_;
    SampleNormCache<Real> sn_cache_;
};

// --- skip fusion --------------------------------------------------------------

// SK fusion: w = Softmax(MLP(GAP(f(skip) + main))), y = w1*f(skip) + w2*main.
template <typename Real>
struct FusionLayer {
    FusionKind kind = FusionKind::Sk;
    int channels = 0;
    ConvParams<Real> proj;        // sk/sum: f(.) C->C; concat: 2C->C
    ConvParams<Real> mlp1, mlp2;  // sk only

    static FusionLayer make(int channels, const ModelConfig& cfg) {
        FusionLayer f;
        f.kind = cfg.fusion;
        f.channels = channels;
        if (f.kind == FusionKind::Concat) {
            f.proj = make_conv<Real>(2 * channels, channels, 1, 1, true, 1, cfg.pad);
        } else {
            f.proj = make_conv<Real>(channels, channels, 1, 1, true, 1, cfg.pad);
            if (f.kind == FusionKind::Sk) {
                const int d = ModelConfig::reduced_width(channels);
                f.mlp1 = make_conv<Real>(channels, d, 1, 1, true, 1, cfg.pad);
                f.mlp2 = make_conv<Real>(d, 2 * channels, 1, 1, true, 1, cfg.pad);
            }
        }
        return f;
    }

    Tensor<Real> forward(const Tensor<Real>& skip, const Tensor<Real>& main,
                         const RunFlags& rf) {
        check_shape(skip.h() == main.h() && skip.w() == main.w(),
                    "fusion: spatial mismatch between skip and main path");
        if (kind == FusionKind::Concat) {
            Tensor<Real> cc = concat_channels(skip, main);
            Tensor<Real> y = conv2d(cc, proj);
            if (rf.want_grad) cc_ = std::move(cc);
            return y;
        }
        Tensor<Real> xhat1 = conv2d(skip, proj);
        if (kind == FusionKind::Sum) {
            Tensor<Real> y = add(xhat1, main);
            if (rf.want_grad) skip_ = skip;
            return y;
        }
        // SK
        Tensor<Real> s = add(xhat1, main);
        Tensor<Real> z = global_avg_pool(s);
        Tensor<Real> h0 = conv2d(z, mlp1);
        Tensor<Real> hr = activate(h0, Act::Relu);
        Tensor<Real> logits = conv2d(hr, mlp2);
        Tensor<Real> wts = softmax_over_branches(logits, 2);
        auto [w1, w2] = split_channels(wts, channels);
        Tensor<Real> y = add(channel_scale(xhat1, w1), channel_scale(main, w2));
        if (rf.want_grad) {
            skip_ = skip; xhat1_ = std::move(xhat1); main_ = main;
            z_ = std::move(z); h0_ = std::move(h0); hr_ = std::move(hr);
            logits_ = std::move(logits); wts_ = std::move(wts);
            w1_ = std::move(w1); w2_ = std::move(w2);
        }
        return y;
    }

    // Returns (grad_skip, grad_main).
    std::pair<Tensor<Real>, Tensor<Real>> backward(const Tensor<Real>& grad_y) {
        if (kind == FusionKind::Concat) {
            conv2d_backward(cc_, proj, grad_y);
            Tensor<Real> grad_cc = take_grad(cc_);
            auto [gs, gm] = split_channels(grad_cc, channels);
            return {std::move(gs), std::move(gm)};
        }
        if (kind == FusionKind::Sum) {
            conv2d_backward(skip_, proj, grad_y);
            return {take_grad(skip_), grad_y};
        }
        // SK: weighted-combination grads
        Tensor<Real> grad_w = concat_channels(spatial_dot(grad_y, xhat1_),
                                              spatial_dot(grad_y, main_));
        Tensor<Real> logits_sink(logits_.shape);
        softmax_over_branches_backward(logits_sink, wts_, 2, grad_w);
        Tensor<Real> grad_logits = take_grad(logits_sink);

        conv2d_backward(hr_, mlp2, grad_logits);
        Tensor<Real> grad_hr = take_grad(hr_);
        Tensor<Real> grad_h0(h0_.shape);
        for (std::size_t i = 0; i < h0_.numel(); ++i)
            grad_h0.data[i] = act_grad(Act::Relu, h0_.data[i]) * grad_hr.data[i];
        conv2d_backward(z_, mlp1, grad_h0);
        Tensor<Real> grad_z = take_grad(z_);

        Tensor<Real> s_sink(xhat1_.shape);
        global_avg_pool_backward(s_sink, grad_z);
        Tensor<Real> grad_s = take_grad(s_sink);

        Tensor<Real> grad_xhat1 = add(channel_scale(grad_y, w1_), grad_s);
        Tensor<Real> grad_main = add(channel_scale(grad_y, w2_), grad_s);
        conv2d_backward(skip_, proj, grad_xhat1);
        return {take_grad(skip_), std::move(grad_main)};
    }

private:
    Tensor<Real> skip_, xhat1_, main_, z_, h0_, hr_, logits_, wts_, w1_, w2_, cc_;
};

// --- resolution changes ---------------------------------------------------------
//
// Down: pixel_unshuffle(2) then PWConv 4C -> 2C. Up: PWConv C -> 2C then
// pixel_shuffle(2), landing at C/2. Both are lossless rearrangements around
// a single pointwise mixing layer.

template <typename Real>
struct Downsample {
    ConvParams<Real> pw;  // 4*in_ch -> out_ch

    static Downsample make(int in_ch, int out_ch, PadMode pad) {
        Downsample d;
        d.pw = make_conv<Real>(4 * in_ch, out_ch, 1, 1, true, 1, pad);
        return d;
    }

    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        Tensor<Real> un = pixel_unshuffle(x, 2);
        Tensor<Real> y = conv2d(un, pw);
        if (rf.want_grad) un_ = std::move(un);
        return y;
    }

    Tensor<Real> backward(const Tensor<Real>& grad_y) {
        conv2d_backward(un_, pw, grad_y);
        return pixel_shuffle(take_grad(un_), 2);
    }

private:
    Tensor<Real> un_;
};

template <typename Real>
struct Upsample {
    ConvParams<Real> pw;  // in_ch -> 4*out_ch, shuffled down to out_ch

    static Upsample make(int in_ch, int out_ch, PadMode pad) {
        Upsample u;
        u.pw = make_conv<Real>(in_ch, 4 * out_ch, 1, 1, true, 1, pad);
        return u;
    }

    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        Tensor<Real> e = conv2d(x, pw);
        if (rf.want_grad) x_ = x;
        return pixel_shuffle(e, 2);
    }

    Tensor<Real> backward(const Tensor<Real>& grad_y) {
        Tensor<Real> grad_e = pixel_unshuffle(grad_y, 2);
        conv2d_backward(x_, pw, grad_e);
        return take_grad(x_);
    }

private:
    Tensor<Real> x_;
};

}  // namespace gunet
