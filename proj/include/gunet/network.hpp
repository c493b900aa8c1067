// SPDX-License-Identifier: Apache-2.0
//
// The full gUNet: stem, encoder stages with shuffle downsampling, a
// bottleneck, decoder stages with shuffle upsampling and skip fusion, and
// a zero-initialized head predicting the global residual.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gunet/config.hpp"
#include "gunet/layers.hpp"

namespace gunet {

enum class ParamKind { ConvWeight, Bias, NormGamma, NormBeta, RunningMean, RunningVar, AttnWeight };

inline bool param_is_learnable(ParamKind k) {
    return k != ParamKind::RunningMean && k != ParamKind::RunningVar;
}
inline bool param_gets_weight_decay(ParamKind k) {
    return k == ParamKind::ConvWeight || k == ParamKind::AttnWeight;
}

template <typename Real>
struct ParamEntry {
    std::string name;
    ParamKind kind;
    Tensor<Real>* tensor;
};

// Named, ordered view over a model's learnable arrays and normalization
// buffers. Entries point into the owning network; keep it alive.
template <typename Real>
struct ParamStore {
    std::vector<ParamEntry<Real>> entries;
    std::array<std::uint8_t, 32> fingerprint{};

    std::size_t learnable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries)
            if (param_is_learnable(e.kind)) n += e.tensor->numel();
        return n;
    }
    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.tensor->numel();
        return n;
    }
    void zero_grads() {
        for (auto& e : entries)
            if (param_is_learnable(e.kind)) {
                e.tensor->ensure_grad();
                e.tensor->zero_grad();
            }
    }
};

template <typename Real>
class GUNet {
public:
    ModelConfig config;

    static GUNet build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        GUNet net;
        net.config = cfg;
        const auto widths = cfg.widths();
        const int h = cfg.half_stages();

        net.stem_ = make_conv<Real>(3, widths[0], 3, 1, true, 1, cfg.pad);
        net.head_ = make_conv<Real>(widths[0], 3, 3, 1, true, 1, cfg.pad);
        net.stages_.resize(cfg.n_stages);
        for (int s = 0; s < cfg.n_stages; ++s)
            for (int j = 0; j < cfg.stage_blocks(s); ++j)
                net.stages_[s].push_back(GConvBlock<Real>::make(widths[s], cfg));
        for (int i = 0; i < h; ++i) {
            net.downs_.push_back(Downsample<Real>::make(widths[i], widths[i + 1], cfg.pad));
            net.ups_.push_back(Upsample<Real>::make(widths[i + 1], widths[i], cfg.pad));
            net.fusions_.push_back(FusionLayer<Real>::make(widths[i], cfg));
        }
        net.init_params(seed);
        return net;
    }

    // Residual prediction on a network-domain input; spatial dims must be
    // divisible by spatial_factor().
    Tensor<Real> forward(const Tensor<Real>& x, const RunFlags& rf) {
        return forward_observed(x, rf, nullptr);
    }

    using Observer = std::function<void(const std::string&, const Tensor<Real>&)>;

    Tensor<Real> forward_observed(const Tensor<Real>& x, const RunFlags& rf,
                                  const Observer* observe) {
        check_shape(x.c() == 3, "gunet: input must have 3 channels");
        check_shape(x.h() % config.spatial_factor() == 0 && x.w() % config.spatial_factor() == 0,
                    "gunet: spatial dims must be divisible by " +
                        std::to_string(config.spatial_factor()));
        const int h = config.half_stages();
        if (rf.want_grad) stem_in_ = x;

        Tensor<Real> feat = conv2d(x, stem_);
        if (observe) (*observe)("stem", feat);

        std::vector<Tensor<Real>> skips(h);
        for (int i = 0; i < h; ++i) {
            feat = run_stage(i, std::move(feat), rf, observe);
            skips[i] = feat;
            feat = downs_[i].forward(feat, rf);
            if (observe) (*observe)("down" + std::to_string(i), feat);
        }
        feat = run_stage(h, std::move(feat), rf, observe);
        for (int i = h - 1; i >= 0; --i) {
            feat = ups_[i].forward(feat, rf);
            if (observe) (*observe)("up" + std::to_string(i), feat);
            feat = fusions_[i].forward(skips[i], feat, rf);
            if (observe) (*observe)("fusion" + std::to_string(i), feat);
            feat = run_stage(config.n_stages - 1 - i, std::move(feat), rf, observe);
        }
        if (rf.want_grad) head_in_ = feat;
        Tensor<Real> residual = conv2d(feat, head_);
        if (observe) (*observe)("head", residual);
        return residual;
    }

    // Reverse pass from d(loss)/d(residual); accumulates parameter grads
    // and returns d(loss)/d(input).
    Tensor<Real> backward(const Tensor<Real>& grad_residual) {
        const int h = config.half_stages();
        conv2d_backward(head_in_, head_, grad_residual);
        Tensor<Real> grad = take_grad(head_in_);

        std::vector<Tensor<Real>> skip_grads(h);
        for (int i = 0; i < h; ++i) {
            grad = stage_backward(config.n_stages - 1 - i, std::move(grad));
            auto [gs, gm] = fusions_[i].backward(grad);
            skip_grads[i] = std::move(gs);
            grad = ups_[i].backward(gm);
        }
        grad = stage_backward(h, std::move(grad));
        for (int i = h - 1; i >= 0; --i) {
            grad = downs_[i].backward(grad);
            for (std::size_t t = 0; t < grad.numel(); ++t) grad.data[t] += skip_grads[i].data[t];
            grad = stage_backward(i, std::move(grad));
        }
        conv2d_backward(stem_in_, stem_, grad);
        return take_grad(stem_in_);
    }

    // Full dehazing pass on a [0,1] image batch: reflect-pad to the stage
    // pyramid's spatial factor, predict the residual, crop, and add half of
    // it (the network runs in the [-1,1] domain, so J = I + R/2 in [0,1]).
    // Output is not clamped; clamp at the image-export boundary.
    Tensor<Real> dehaze(const Tensor<Real>& x01, const RunFlags& rf = {}) {
        check_shape(x01.c() == 3, "dehaze: input must have 3 channels");
        const int f = config.spatial_factor();
        const int ph = (x01.h() + f - 1) / f * f, pw = (x01.w() + f - 1) / f * f;
        Tensor<Real> xin = pad_bottom_right(x01, ph, pw);
        for (std::size_t i = 0; i < xin.numel(); ++i)
            xin.data[i] = Real(2) * xin.data[i] - Real(1);
        Tensor<Real> residual = forward(xin, rf);
        Tensor<Real> out(x01.shape);
        for (int b = 0; b < x01.n(); ++b)
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < x01.h(); ++y)
                    for (int x = 0; x < x01.w(); ++x)
                        out.at(b, ch, y, x) = x01.at(b, ch, y, x) +
                                              Real(0.5) * residual.at(b, ch, y, x);
        return out;
    }

    void set_norm_mode(NormMode m) {
        for (auto& stage : stages_)
            for (auto& blk : stage) blk.norm.mode = m;
    }
    void set_ghost_size(int g) {
        for (auto& stage : stages_)
            for (auto& blk : stage) blk.norm.ghost_size = g;
    }

    // Fold every eval/frozen-mode BatchNorm into the two pointwise convs
    // that consume it. The returned network is inference-only.
    GUNet folded() const {
        check_config(config.norm_kind == NormKind::Batch,
                     "fold: only batch normalization can be folded");
        GUNet net = *this;
        for (auto& stage : net.stages_)
            for (auto& blk : stage) {
                blk.pw1 = fold_norm_into_conv(blk.norm, blk.pw1);
                blk.pw2 = fold_norm_into_conv(blk.norm, blk.pw2);
                blk.norm_folded = true;
            }
        return net;
    }

    // Runs a forward pass probing every layer output; returns the name of
    // the first layer that produced a non-finite value, or "" if none did.
    std::string first_nonfinite_layer(const Tensor<Real>& x, const RunFlags& rf) {
        std::string found;
        Observer obs = [&found](const std::string& name, const Tensor<Real>& t) {
            if (found.empty() && !t.all_finite()) found = name;
        };
        forward_observed(x, rf, &obs);
        return found;
    }

    ParamStore<Real> param_store() {
        ParamStore<Real> store;
        store.fingerprint = config.fingerprint();
        visit_params([&store](const std::string& name, ParamKind kind, Tensor<Real>& t) {
            store.entries.push_back({name, kind, &t});
        });
        return store;
    }

    ConvParams<Real>& stem() { return stem_; }
    ConvParams<Real>& head() { return head_; }
    std::vector<std::vector<GConvBlock<Real>>>& stages() { return stages_; }
    std::vector<FusionLayer<Real>>& fusions() { return fusions_; }

private:
    Tensor<Real> run_stage(int s, Tensor<Real> feat, const RunFlags& rf,
                           const Observer* observe) {
        int j = 0;
        for (auto& blk : stages_[s]) {
            feat = blk.forward(feat, rf);
            if (observe)
                (*observe)("stage" + std::to_string(s) + ".block" + std::to_string(j), feat);
            ++j;
        }
        return feat;
    }
    Tensor<Real> stage_backward(int s, Tensor<Real> grad) {
        for (auto it = stages_[s].rbegin(); it != stages_[s].rend(); ++it)
            grad = it->backward(grad);
        return grad;
    }

    static Tensor<Real> pad_bottom_right(const Tensor<Real>& x, int ph, int pw) {
        if (ph == x.h() && pw == x.w()) return x;
        Tensor<Real> out(x.n(), x.c(), ph, pw);
        for (int b = 0; b < x.n(); ++b)
            for (int ch = 0; ch < x.c(); ++ch) {
                const Real* src = x.plane(b, ch);
                Real* dst = out.plane(b, ch);
                for (int y = 0; y < ph; ++y)
                    for (int xx = 0; xx < pw; ++xx)
                        dst[y * pw + xx] =
                            src[reflect_index(y, x.h()) * x.w() + reflect_index(xx, x.w())];
            }
        return out;
    }

    template <typename Fn>
    void visit_conv(const std::string& name, ConvParams<Real>& p, Fn&& fn) {
        fn(name + ".weight", ParamKind::ConvWeight, p.weight);
        if (p.has_bias) fn(name + ".bias", ParamKind::Bias, p.bias);
    }

    template <typename Fn>
    void visit_block(const std::string& name, GConvBlock<Real>& blk, Fn&& fn) {
        fn(name + ".norm.gamma", ParamKind::NormGamma, blk.norm.gamma);
        fn(name + ".norm.beta", ParamKind::NormBeta, blk.norm.beta);
        if (blk.norm_kind == NormKind::Batch) {
            fn(name + ".norm.running_mean", ParamKind::RunningMean, blk.norm.running_mean);
            fn(name + ".norm.running_var", ParamKind::RunningVar, blk.norm.running_var);
        }
        visit_conv(name + ".pw1", blk.pw1, fn);
        visit_conv(name + ".pw2", blk.pw2, fn);
        visit_conv(name + ".dw", blk.dw, fn);
        visit_conv(name + ".pw3", blk.pw3, fn);
        if (blk.se) {
            visit_conv(name + ".se.reduce", blk.se->reduce, fn);
            visit_conv(name + ".se.expand", blk.se->expand, fn);
        }
        if (blk.eca) fn(name + ".eca.weight", ParamKind::AttnWeight, blk.eca->weight);
    }

    // Walks every parameter in forward-execution order.
    template <typename Fn>
    void visit_params(Fn&& fn) {
        const int h = config.half_stages();
        visit_conv("stem", stem_, fn);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < static_cast<int>(stages_[i].size()); ++j)
                visit_block("stage" + std::to_string(i) + ".block" + std::to_string(j),
                            stages_[i][j], fn);
            visit_conv("down" + std::to_string(i), downs_[i].pw, fn);
        }
        for (int j = 0; j < static_cast<int>(stages_[h].size()); ++j)
            visit_block("stage" + std::to_string(h) + ".block" + std::to_string(j),
                        stages_[h][j], fn);
        for (int i = h - 1; i >= 0; --i) {
            visit_conv("up" + std::to_string(i), ups_[i].pw, fn);
            const std::string fname = "fusion" + std::to_string(i);
            visit_conv(fname + ".proj", fusions_[i].proj, fn);
            if (fusions_[i].kind == FusionKind::Sk) {
                visit_conv(fname + ".mlp1", fusions_[i].mlp1, fn);
                visit_conv(fname + ".mlp2", fusions_[i].mlp2, fn);
            }
            const int s = config.n_stages - 1 - i;
            for (int j = 0; j < static_cast<int>(stages_[s].size()); ++j)
                visit_block("stage" + std::to_string(s) + ".block" + std::to_string(j),
                            stages_[s][j], fn);
        }
        visit_conv("head", head_, fn);
    }

    void init_params(std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x67554e45));  // stream tag for weight init
        visit_params([&rng](const std::string& name, ParamKind kind, Tensor<Real>& t) {
            switch (kind) {
                case ParamKind::ConvWeight:
                case ParamKind::AttnWeight:
                    if (name == "head.weight") {
                        t.fill(Real(0));  // untrained network is the identity map
                    } else {
                        for (auto& v : t.data)
                            v = static_cast<Real>(rng.trunc_normal(0.02));
                    }
                    break;
                case ParamKind::Bias:
                case ParamKind::NormBeta:
                case ParamKind::RunningMean:
                    t.fill(Real(0));
                    break;
                case ParamKind::NormGamma:
                case ParamKind::RunningVar:
                    t.fill(Real(1));
                    break;
            }
        });
    }

    ConvParams<Real> stem_, head_;
    std::vector<std::vector<GConvBlock<Real>>> stages_;
    std::vector<Downsample<Real>> downs_;
    std::vector<Upsample<Real>> ups_;
    std::vector<FusionLayer<Real>> fusions_;
    Tensor<Real> stem_in_, head_in_;
};

}  // namespace gunet
