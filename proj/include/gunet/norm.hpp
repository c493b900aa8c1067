// SPDX-License-Identifier: Apache-2.0
//
// Normalization layers. BatchNorm supports ghost batches (normalization
// batch size below the mini-batch size) and three modes: Train updates
// running statistics, Eval and Frozen apply the stored affine transform
// and never mutate state. LayerNorm / InstanceNorm compute statistics at
// both train and inference time.

#pragma once

#include <vector>

#include "gunet/conv.hpp"
#include "gunet/core.hpp"

namespace gunet {

enum class NormMode { Train, Eval, Frozen };
enum class NormKind { Batch, Layer, Instance };

inline const char* norm_kind_name(NormKind k) {
    switch (k) {
        case NormKind::Batch: return "batch";
        case NormKind::Layer: return "layer";
        case NormKind::Instance: return "instance";
    }
    return "?";
}

template <typename Real>
struct NormState {
    Tensor<Real> gamma, beta;                 // (1, C, 1, 1), learnable
    Tensor<Real> running_mean, running_var;   // (1, C, 1, 1), buffers
    Real momentum = Real(0.1);
    Real eps = Real(1e-5);
    NormMode mode = NormMode::Train;
    int ghost_size = 0;  // normalization batch size; 0 = full mini-batch

    int channels() const { return gamma.c(); }
};

template <typename Real>
NormState<Real> make_norm_state(int channels) {
    NormState<Real> st;
    st.gamma = Tensor<Real>(1, channels, 1, 1);
    st.gamma.fill(Real(1));
    st.beta = Tensor<Real>(1, channels, 1, 1);
    st.running_mean = Tensor<Real>(1, channels, 1, 1);
    st.running_var = Tensor<Real>(1, channels, 1, 1);
    st.running_var.fill(Real(1));
    return st;
}

// Saved forward state needed by the backward pass.
template <typename Real>
struct NormCache {
    Tensor<Real> xhat;             // normalized, pre-affine
    std::vector<Real> inv_std;     // train: per (ghost group, channel); eval: per channel
    int n_groups = 1;
    int group_size = 0;
    NormMode mode = NormMode::Train;
};

template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, NormState<Real>& state,
                        NormCache<Real>* cache = nullptr, bool update_stats = true) {
    check_config(x.c() == state.channels(), "batch_norm: channel mismatch");
    const int B = x.n(), C = x.c(), HW = x.h() * x.w();
    Tensor<Real> y(x.shape);

    if (state.mode == NormMode::Train) {
        const int g = state.ghost_size > 0 ? state.ghost_size : B;
        check_config(g <= B && B % g == 0,
                     "batch_norm: ghost size " + std::to_string(g) +
                         " does not divide batch " + std::to_string(B));
        const int n_groups = B / g;
        const Real cnt = Real(g) * Real(HW);

        if (cache) {
            cache->xhat = Tensor<Real>(x.shape);
            cache->inv_std.assign(static_cast<std::size_t>(n_groups) * C, Real(0));
            cache->n_groups = n_groups;
            cache->group_size = g;
            cache->mode = NormMode::Train;
        }

        for (int grp = 0; grp < n_groups; ++grp)
            for (int ch = 0; ch < C; ++ch) {
                Real mean = 0;
                for (int b = grp * g; b < (grp + 1) * g; ++b) {
                    const Real* p = x.plane(b, ch);
                    for (int i = 0; i < HW; ++i) mean += p[i];
                }
                mean /= cnt;
                Real var = 0;
                for (int b = grp * g; b < (grp + 1) * g; ++b) {
                    const Real* p = x.plane(b, ch);
                    for (int i = 0; i < HW; ++i) {
                        const Real d = p[i] - mean;
                        var += d * d;
                    }
                }
                var /= cnt;

                const Real inv = Real(1) / std::sqrt(var + state.eps);
                const Real gm = state.gamma.data[ch], bt = state.beta.data[ch];
                for (int b = grp * g; b < (grp + 1) * g; ++b) {
                    const Real* p = x.plane(b, ch);
                    Real* q = y.plane(b, ch);
                    Real* xh = cache ? cache->xhat.plane(b, ch) : nullptr;
                    for (int i = 0; i < HW; ++i) {
                        const Real v = (p[i] - mean) * inv;
                        if (xh) xh[i] = v;
                        q[i] = gm * v + bt;
                    }
                }
                if (cache) cache->inv_std[static_cast<std::size_t>(grp) * C + ch] = inv;

                if (update_stats) {
                    // EMA per ghost group, in group order; running variance is unbiased
                    const Real unbiased = cnt > Real(1) ? var * cnt / (cnt - Real(1)) : var;
                    state.running_mean.data[ch] =
                        (Real(1) - state.momentum) * state.running_mean.data[ch] +
                        state.momentum * mean;
                    state.running_var.data[ch] =
                        (Real(1) - state.momentum) * state.running_var.data[ch] +
                        state.momentum * unbiased;
                }
            }
        return y;
    }

    // Eval / Frozen: constant affine transform from tracked statistics.
    if (cache) {
        cache->xhat = Tensor<Real>(x.shape);
        cache->inv_std.assign(C, Real(0));
        cache->n_groups = 1;
        cache->group_size = B;
        cache->mode = state.mode;
    }
    for (int ch = 0; ch < C; ++ch) {
        const Real inv = Real(1) / std::sqrt(state.running_var.data[ch] + state.eps);
        const Real mean = state.running_mean.data[ch];
        const Real gm = state.gamma.data[ch], bt = state.beta.data[ch];
        if (cache) cache->inv_std[ch] = inv;
        for (int b = 0; b < B; ++b) {
            const Real* p = x.plane(b, ch);
            Real* q = y.plane(b, ch);
            Real* xh = cache ? cache->xhat.plane(b, ch) : nullptr;
            for (int i = 0; i < HW; ++i) {
                const Real v = (p[i] - mean) * inv;
                if (xh) xh[i] = v;
                q[i] = gm * v + bt;
            }
        }
    }
    return y;
}

template <typename Real>
void batch_norm_backward(Tensor<Real>& x, NormState<Real>& state, const NormCache<Real>& cache,
                         const Tensor<Real>& grad_out) {
    check_same_shape(x, grad_out, "batch_norm_backward");
    const int C = x.c(), HW = x.h() * x.w();
    x.ensure_grad();
    state.gamma.ensure_grad();
    state.beta.ensure_grad();

    if (cache.mode != NormMode::Train) {
        // y = gamma * (x - rm) * inv + beta with constant statistics
        for (int ch = 0; ch < C; ++ch) {
            const Real k = state.gamma.data[ch] * cache.inv_std[ch];
            Real dg = 0, db = 0;
            for (int b = 0; b < x.n(); ++b) {
                const Real* go = grad_out.plane(b, ch);
                const Real* xh = cache.xhat.plane(b, ch);
                Real* gx = x.grad.data() + x.idx(b, ch, 0, 0);
                for (int i = 0; i < HW; ++i) {
                    gx[i] += k * go[i];
                    dg += go[i] * xh[i];
                    db += go[i];
                }
            }
            state.gamma.grad[ch] += dg;
            state.beta.grad[ch] += db;
        }
        return;
    }

    const int g = cache.group_size;
    const Real cnt = Real(g) * Real(HW);
    for (int grp = 0; grp < cache.n_groups; ++grp)
        for (int ch = 0; ch < C; ++ch) {
            const Real inv = cache.inv_std[static_cast<std::size_t>(grp) * C + ch];
            const Real gm = state.gamma.data[ch];
            Real sum_dy = 0, sum_dy_xhat = 0, dg = 0, db = 0;
            for (int b = grp * g; b < (grp + 1) * g; ++b) {
                const Real* go = grad_out.plane(b, ch);
                const Real* xh = cache.xhat.plane(b, ch);
                for (int i = 0; i < HW; ++i) {
                    sum_dy += go[i];
                    sum_dy_xhat += go[i] * xh[i];
                    dg += go[i] * xh[i];
                    db += go[i];
                }
            }
            for (int b = grp * g; b < (grp + 1) * g; ++b) {
                const Real* go = grad_out.plane(b, ch);
                const Real* xh = cache.xhat.plane(b, ch);
                Real* gx = x.grad.data() + x.idx(b, ch, 0, 0);
                for (int i = 0; i < HW; ++i)
                    gx[i] += gm * inv * (go[i] - sum_dy / cnt - xh[i] * sum_dy_xhat / cnt);
            }
            state.gamma.grad[ch] += dg;
            state.beta.grad[ch] += db;
        }
}

// --- layer / instance norm -----------------------------------------------
//
// Both normalize with statistics computed on the fly; affine is per channel.
// LayerNorm reduces over (C, H, W) per sample, InstanceNorm over (H, W)
// per (sample, channel).

template <typename Real>
struct SampleNormCache {
    Tensor<Real> xhat;
    std::vector<Real> inv_std;  // LN: per sample; IN: per (sample, channel)
};

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-5),
                        SampleNormCache<Real>* cache = nullptr) {
    check_config(gamma.c() == x.c() && beta.c() == x.c(), "layer_norm: affine size mismatch");
    const int B = x.n(), C = x.c(), HW = x.h() * x.w();
    const std::size_t m = static_cast<std::size_t>(C) * HW;
    Tensor<Real> y(x.shape);
    if (cache) {
        cache->xhat = Tensor<Real>(x.shape);
        cache->inv_std.assign(B, Real(0));
    }
    for (int b = 0; b < B; ++b) {
        const Real* p = x.data.data() + x.idx(b, 0, 0, 0);
        Real mean = 0;
        for (std::size_t i = 0; i < m; ++i) mean += p[i];
        mean /= Real(m);
        Real var = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const Real d = p[i] - mean;
            var += d * d;
        }
        var /= Real(m);
        const Real inv = Real(1) / std::sqrt(var + eps);
        if (cache) cache->inv_std[b] = inv;
        for (int ch = 0; ch < C; ++ch) {
            const Real gm = gamma.data[ch], bt = beta.data[ch];
            const Real* px = x.plane(b, ch);
            Real* py = y.plane(b, ch);
            Real* xh = cache ? cache->xhat.plane(b, ch) : nullptr;
            for (int i = 0; i < HW; ++i) {
                const Real v = (px[i] - mean) * inv;
                if (xh) xh[i] = v;
                py[i] = gm * v + bt;
            }
        }
    }
    return y;
}

template <typename Real>
void layer_norm_backward(Tensor<Real>& x, Tensor<Real>& gamma, Tensor<Real>& beta,
                         const SampleNormCache<Real>& cache, const Tensor<Real>& grad_out) {
    const int B = x.n(), C = x.c(), HW = x.h() * x.w();
    const Real m = Real(C) * Real(HW);
    x.ensure_grad();
    gamma.ensure_grad();
    beta.ensure_grad();
    for (int b = 0; b < B; ++b) {
        const Real inv = cache.inv_std[b];
        Real sum_dxh = 0, sum_dxh_xhat = 0;
        for (int ch = 0; ch < C; ++ch) {
            const Real gm = gamma.data[ch];
            const Real* go = grad_out.plane(b, ch);
            const Real* xh = cache.xhat.plane(b, ch);
            for (int i = 0; i < HW; ++i) {
                const Real dxh = go[i] * gm;
                sum_dxh += dxh;
                sum_dxh_xhat += dxh * xh[i];
                gamma.grad[ch] += go[i] * xh[i];
                beta.grad[ch] += go[i];
            }
        }
        for (int ch = 0; ch < C; ++ch) {
            const Real gm = gamma.data[ch];
            const Real* go = grad_out.plane(b, ch);
            const Real* xh = cache.xhat.plane(b, ch);
            Real* gx = x.grad.data() + x.idx(b, ch, 0, 0);
            for (int i = 0; i < HW; ++i) {
                const Real dxh = go[i] * gm;
                gx[i] += inv * (dxh - sum_dxh / m - xh[i] * sum_dxh_xhat / m);
            }
        }
    }
}

template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                           const Tensor<Real>& beta, Real eps = Real(1e-5),
                           SampleNormCache<Real>* cache = nullptr) {
    check_config(gamma.c() == x.c() && beta.c() == x.c(), "instance_norm: affine size mismatch");
    const int B = x.n(), C = x.c(), HW = x.h() * x.w();
    Tensor<Real> y(x.shape);
    if (cache) {
        cache->xhat = Tensor<Real>(x.shape);
        cache->inv_std.assign(static_cast<std::size_t>(B) * C, Real(0));
    }
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch) {
            const Real* p = x.plane(b, ch);
            Real mean = 0;
            for (int i = 0; i < HW; ++i) mean += p[i];
            mean /= Real(HW);
            Real var = 0;
            for (int i = 0; i < HW; ++i) {
                const Real d = p[i] - mean;
                var += d * d;
            }
            var /= Real(HW);
            const Real inv = Real(1) / std::sqrt(var + eps);
            if (cache) cache->inv_std[static_cast<std::size_t>(b) * C + ch] = inv;
            const Real gm = gamma.data[ch], bt = beta.data[ch];
            Real* q = y.plane(b, ch);
            Real* xh = cache ? cache->xhat.plane(b, ch) : nullptr;
            for (int i = 0; i < HW; ++i) {
                const Real v = (p[i] - mean) * inv;
                if (xh) xh[i] = v;
                q[i] = gm * v + bt;
            }
        }
    return y;
}

template <typename Real>
void instance_norm_backward(Tensor<Real>& x, Tensor<Real>& gamma, Tensor<Real>& beta,
                            const SampleNormCache<Real>& cache, const Tensor<Real>& grad_out) {
    const int B = x.n(), C = x.c(), HW = x.h() * x.w();
    const Real m = Real(HW);
    x.ensure_grad();
    gamma.ensure_grad();
    beta.ensure_grad();
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch) {
            const Real inv = cache.inv_std[static_cast<std::size_t>(b) * C + ch];
            const Real gm = gamma.data[ch];
            const Real* go = grad_out.plane(b, ch);
            const Real* xh = cache.xhat.plane(b, ch);
            Real sum_dxh = 0, sum_dxh_xhat = 0, dg = 0, db = 0;
            for (int i = 0; i < HW; ++i) {
                const Real dxh = go[i] * gm;
                sum_dxh += dxh;
                sum_dxh_xhat += dxh * xh[i];
                dg += go[i] * xh[i];
                db += go[i];
            }
            gamma.grad[ch] += dg;
            beta.grad[ch] += db;
            Real* gx = x.grad.data() + x.idx(b, ch, 0, 0);
            for (int i = 0; i < HW; ++i) {
                const Real dxh = go[i] * gm;
                gx[i] += inv * (dxh - sum_dxh / m - xh[i] * sum_dxh_xhat / m);
            }
        }
}

// --- BN folding ------------------------------------------------------------
//
// For a conv that consumes the normalized tensor, returns a single conv
// equal to norm-then-conv: BN in eval/frozen mode is y_c = s_c x_c + t_c,
// which rescales the conv's input-channel slices and shifts its bias.

template <typename Real>
ConvParams<Real> fold_norm_into_conv(const NormState<Real>& state, const ConvParams<Real>& params) {
    check_config(state.mode != NormMode::Train,
                 "fold_norm_into_conv: state must be in eval or frozen mode");
    check_config(state.channels() == params.in_channels(),
                 "fold_norm_into_conv: channel mismatch");

    const int C = state.channels();
    std::vector<Real> scale(C), shift(C);
    for (int ch = 0; ch < C; ++ch) {
        const Real inv = Real(1) / std::sqrt(state.running_var.data[ch] + state.eps);
        scale[ch] = state.gamma.data[ch] * inv;
        shift[ch] = state.beta.data[ch] - state.running_mean.data[ch] * scale[ch];
    }

    ConvParams<Real> folded = make_conv<Real>(params.in_channels(), params.out_channels(),
                                              params.kernel(), params.groups, /*bias=*/true,
                                              params.stride, params.pad);
    const int icg = params.weight.c(), k = params.kernel();
    const int ocg = params.out_channels() / params.groups;
    for (int oc = 0; oc < params.out_channels(); ++oc) {
        const int grp = oc / ocg;
        Real b = params.has_bias ? params.bias.data[oc] : Real(0);
        for (int ic = 0; ic < icg; ++ic) {
            const int in_ch = grp * icg + ic;
            for (int t = 0; t < k * k; ++t) {
                const std::size_t at = params.weight.idx(oc, ic, 0, 0) + t;
                folded.weight.data[at] = params.weight.data[at] * scale[in_ch];
                b += params.weight.data[at] * shift[in_ch];
            }
        }
        folded.bias.data[oc] = b;
    }
    return folded;
}

}  // namespace gunet
