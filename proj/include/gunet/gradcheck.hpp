// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking. The numeric side uses only
// forward evaluations, so it stays independent of every backward-pass
// implementation it verifies.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gunet/layers.hpp"
#include "gunet/network.hpp"
#include "gunet/norm.hpp"
#include "gunet/ops.hpp"

namespace gunet {

inline double grad_rel_err(double analytic, double numeric) {
    return std::fabs(analytic - numeric) /
           std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
}

// d(loss)/d(t[i]) by central differences, restoring t afterwards.
template <typename Real, typename LossFn>
std::vector<double> numeric_grad(Tensor<Real>& t, LossFn&& loss, double h = 1e-5) {
    std::vector<double> g(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const Real orig = t.data[i];
        t.data[i] = static_cast<Real>(orig + h);
        const double lp = static_cast<double>(loss());
        t.data[i] = static_cast<Real>(orig - h);
        const double lm = static_cast<double>(loss());
        t.data[i] = orig;
        g[i] = (lp - lm) / (2.0 * h);
    }
    return g;
}

template <typename Real>
double max_grad_err(const std::vector<Real>& analytic, const std::vector<double>& numeric) {
    double worst = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i)
        worst = std::max(worst, grad_rel_err(static_cast<double>(analytic[i]), numeric[i]));
    return worst;
}

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 1e-4;
    bool pass() const { return max_rel_err < tolerance; }
};

namespace gradcheck_detail {

template <typename Real>
Tensor<Real> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<Real> t(s);
    for (auto& v : t.data) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
}

// weighted sum of the output against a fixed projection = scalar loss
template <typename Real>
Real project(const Tensor<Real>& proj, const Tensor<Real>& y) {
    Real acc = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += proj.data[i] * y.data[i];
    return acc;
}

}  // namespace gradcheck_detail

// The standard battery. scope: "op", "block", "model" or "all".
inline std::vector<GradCheckResult> run_gradchecks(const std::string& scope,
                                                   std::uint64_t seed = 7) {
    using gradcheck_detail::project;
    using gradcheck_detail::random_tensor;
    using R = double;
    std::vector<GradCheckResult> results;
    Rng rng(mix_seed(seed, 0xfdc));
    const bool do_op = scope == "op" || scope == "all";
    const bool do_block = scope == "block" || scope == "all";
    const bool do_model = scope == "model" || scope == "all";
    check_config(do_op || do_block || do_model,
                 "gradcheck: unknown scope '" + scope + "' (valid: op, block, model, all)");

    auto add = [&results](const std::string& name, double err, double tol = 1e-4) {
        results.push_back({name, err, tol});
    };

    if (do_op) {
        // conv2d variants: dense / depthwise / pointwise / strided zero-pad
        struct ConvCase {
            const char* name;
            int in_ch, out_ch, k, groups, stride;
            PadMode pad;
        };
        const ConvCase conv_cases[] = {
            {"conv2d_dense3x3_reflect", 3, 4, 3, 1, 1, PadMode::Reflect},
            {"conv2d_depthwise5x5_reflect", 4, 4, 5, 4, 1, PadMode::Reflect},
            {"conv2d_pointwise", 4, 6, 1, 1, 1, PadMode::Zero},
            {"conv2d_stride2_zero", 3, 4, 3, 1, 2, PadMode::Zero},
            {"conv2d_grouped", 4, 6, 3, 2, 1, PadMode::Reflect},
        };
        for (const auto& cc : conv_cases) {
            Tensor<R> x = random_tensor<R>({2, cc.in_ch, 6, 6}, rng);
            ConvParams<R> p = make_conv<R>(cc.in_ch, cc.out_ch, cc.k, cc.groups, true,
                                           cc.stride, cc.pad);
            for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
            for (auto& v : p.bias.data) v = rng.uniform(-1, 1);
            Tensor<R> proj = random_tensor<R>(conv2d(x, p).shape, rng);
            auto loss = [&] { return project(proj, conv2d(x, p)); };

            x.ensure_grad();
            p.ensure_grad();
            conv2d_backward(x, p, proj);
            add(std::string(cc.name) + ".input", max_grad_err(x.grad, numeric_grad(x, loss)));
            add(std::string(cc.name) + ".weight",
                max_grad_err(p.weight.grad, numeric_grad(p.weight, loss)));
            add(std::string(cc.name) + ".bias",
                max_grad_err(p.bias.grad, numeric_grad(p.bias, loss)));
        }

        // batch norm, train mode, ghost groups of 2 on a batch of 4
        {
            Tensor<R> x = random_tensor<R>({4, 3, 4, 4}, rng);
            NormState<R> st = make_norm_state<R>(3);
            st.ghost_size = 2;
            for (auto& v : st.gamma.data) v = rng.uniform(0.5, 1.5);
            for (auto& v : st.beta.data) v = rng.uniform(-0.5, 0.5);
            Tensor<R> proj = random_tensor<R>(x.shape, rng);
            auto loss = [&] {
                return project(proj, batch_norm(x, st, static_cast<NormCache<R>*>(nullptr),
                                                /*update_stats=*/false));
            };
            NormCache<R> cache;
            batch_norm(x, st, &cache, false);
            x.ensure_grad();
            st.gamma.ensure_grad();
            st.beta.ensure_grad();
            batch_norm_backward(x, st, cache, proj);
            add("batch_norm_ghost.input", max_grad_err(x.grad, numeric_grad(x, loss)));
            add("batch_norm_ghost.gamma",
                max_grad_err(st.gamma.grad, numeric_grad(st.gamma, loss)));
            add("batch_norm_ghost.beta",
                max_grad_err(st.beta.grad, numeric_grad(st.beta, loss)));
        }

        // layer / instance norm
        for (int which = 0; which < 2; ++which) {
            const std::string name = which == 0 ? "layer_norm" : "instance_norm";
            Tensor<R> x = random_tensor<R>({2, 3, 5, 5}, rng);
            Tensor<R> gamma(1, 3, 1, 1), beta(1, 3, 1, 1);
            for (auto& v : gamma.data) v = rng.uniform(0.5, 1.5);
            for (auto& v : beta.data) v = rng.uniform(-0.5, 0.5);
            Tensor<R> proj = random_tensor<R>(x.shape, rng);
            auto loss = [&] {
                return which == 0 ? project(proj, layer_norm(x, gamma, beta))
                                  : project(proj, instance_norm(x, gamma, beta));
            };
            SampleNormCache<R> cache;
            if (which == 0) layer_norm(x, gamma, beta, R(1e-5), &cache);
            else instance_norm(x, gamma, beta, R(1e-5), &cache);
            x.ensure_grad();
            gamma.ensure_grad();
            beta.ensure_grad();
            if (which == 0) layer_norm_backward(x, gamma, beta, cache, proj);
            else instance_norm_backward(x, gamma, beta, cache, proj);
            add(name + ".input", max_grad_err(x.grad, numeric_grad(x, loss)));
            add(name + ".gamma", max_grad_err(gamma.grad, numeric_grad(gamma, loss)));
            add(name + ".beta", max_grad_err(beta.grad, numeric_grad(beta, loss)));
        }

        // activations; inputs kept away from the relu/hard-sigmoid kinks
        for (Act a : {Act::Sigmoid, Act::HardSigmoid, Act::Tanh, Act::Relu, Act::Gelu}) {
            Tensor<R> x(2, 3, 4, 4);
            for (auto& v : x.data) {
                v = rng.uniform(-2.5, 2.5);
                if (std::fabs(v) < 0.05) v += 0.1;  // relu kink at 0
            }
            Tensor<R> proj = random_tensor<R>(x.shape, rng);
            auto loss = [&] { return project(proj, activate(x, a)); };
            x.ensure_grad();
            activate_backward(x, a, proj);
            add(std::string("act_") + act_name(a) + ".input",
                max_grad_err(x.grad, numeric_grad(x, loss)));
        }

        // global average pooling
        {
            Tensor<R> x = random_tensor<R>({2, 4, 6, 6}, rng);
            Tensor<R> proj = random_tensor<R>({2, 4, 1, 1}, rng);
            auto loss = [&] { return project(proj, global_avg_pool(x)); };
            x.ensure_grad();
            global_avg_pool_backward(x, proj);
            add("global_avg_pool.input", max_grad_err(x.grad, numeric_grad(x, loss)));
        }

        // softmax over branches
        {
            Tensor<R> logits = random_tensor<R>({2, 8, 1, 1}, rng, -2, 2);
            Tensor<R> proj = random_tensor<R>(logits.shape, rng);
            auto loss = [&] { return project(proj, softmax_over_branches(logits, 2)); };
            Tensor<R> wts = softmax_over_branches(logits, 2);
            logits.ensure_grad();
            softmax_over_branches_backward(logits, wts, 2, proj);
            add("softmax_over_branches.input",
                max_grad_err(logits.grad, numeric_grad(logits, loss)));
        }

        // pixel shuffle (gradient is the unshuffle of the upstream gradient)
        {
            Tensor<R> x = random_tensor<R>({2, 8, 3, 3}, rng);
            Tensor<R> proj = random_tensor<R>({2, 2, 6, 6}, rng);
            auto loss = [&] { return project(proj, pixel_shuffle(x, 2)); };
            Tensor<R> analytic = pixel_unshuffle(proj, 2);
            add("pixel_shuffle.input", max_grad_err(analytic.data, numeric_grad(x, loss)));
        }

        // l1 loss, ties avoided
        {
            Tensor<R> pred = random_tensor<R>({2, 3, 4, 4}, rng);
            Tensor<R> target = random_tensor<R>({2, 3, 4, 4}, rng, 2.0, 3.0);
            auto loss = [&] { return l1_loss(pred, target); };
            Tensor<R> analytic = l1_loss_grad(pred, target);
            add("l1_loss.pred", max_grad_err(analytic.data, numeric_grad(pred, loss)));
        }
    }

    if (do_block) {
        // full gConv block on a (1,4,6,6) input, each norm kind
        for (NormKind nk : {NormKind::Batch, NormKind::Layer, NormKind::Instance}) {
            ModelConfig cfg;
            cfg.base_width = 4;
            cfg.dw_kernel = 3;
            cfg.norm_kind = nk;
            GConvBlock<R> blk = GConvBlock<R>::make(4, cfg);
            Rng wrng(mix_seed(seed, 0xb10c));
            for (auto* p : {&blk.pw1, &blk.pw2, &blk.dw, &blk.pw3}) {
                for (auto& v : p->weight.data) v = wrng.uniform(-0.5, 0.5);
                for (auto& v : p->bias.data) v = wrng.uniform(-0.2, 0.2);
            }
            Tensor<R> x = random_tensor<R>({1, 4, 6, 6}, rng);
            Tensor<R> proj = random_tensor<R>(x.shape, rng);
            RunFlags nograd{false, false};
            auto loss = [&] { return project(proj, blk.forward(x, nograd)); };
            blk.forward(x, RunFlags{true, false});
            Tensor<R> gx = blk.backward(proj);
            const std::string name = std::string("gconv_block_") + norm_kind_name(nk);
            add(name + ".input", max_grad_err(gx.data, numeric_grad(x, loss)));
            auto recheck = [&](const char* pname, Tensor<R>& t) {
                blk.forward(x, RunFlags{true, false});
                t.ensure_grad();
                t.zero_grad();
                (void)blk.backward(proj);
                add(name + pname, max_grad_err(t.grad, numeric_grad(t, loss)));
            };
            recheck(".pw1.weight", blk.pw1.weight);
            recheck(".dw.weight", blk.dw.weight);
            recheck(".norm.gamma", blk.norm.gamma);
        }

        // SK fusion: gradient through GAP + MLP + softmax + weighted sum
        {
            ModelConfig cfg;
            FusionLayer<R> fu = FusionLayer<R>::make(4, cfg);
            Rng wrng(mix_seed(seed, 0x5f));
            for (auto* p : {&fu.proj, &fu.mlp1, &fu.mlp2}) {
                for (auto& v : p->weight.data) v = wrng.uniform(-0.5, 0.5);
                for (auto& v : p->bias.data) v = wrng.uniform(-0.2, 0.2);
            }
            Tensor<R> skip = random_tensor<R>({2, 4, 4, 4}, rng);
            Tensor<R> main = random_tensor<R>({2, 4, 4, 4}, rng);
            Tensor<R> proj = random_tensor<R>(skip.shape, rng);
            RunFlags nograd{false, false};
            auto loss = [&] { return project(proj, fu.forward(skip, main, nograd)); };
            fu.forward(skip, main, RunFlags{true, false});
            auto [gs, gm] = fu.backward(proj);
            add("sk_fusion.skip", max_grad_err(gs.data, numeric_grad(skip, loss)));
            add("sk_fusion.main", max_grad_err(gm.data, numeric_grad(main, loss)));
            fu.forward(skip, main, RunFlags{true, false});
            fu.mlp2.zero_grad();
            (void)fu.backward(proj);
            add("sk_fusion.mlp2.weight",
                max_grad_err(fu.mlp2.weight.grad, numeric_grad(fu.mlp2.weight, loss)));
        }

        // SE / ECA modules
        {
            SeModule<R> se = SeModule<R>::make(8, PadMode::Reflect);
            Rng wrng(mix_seed(seed, 0x5e));
            for (auto* p : {&se.reduce, &se.expand}) {
                for (auto& v : p->weight.data) v = wrng.uniform(-0.5, 0.5);
                for (auto& v : p->bias.data) v = wrng.uniform(-0.2, 0.2);
            }
            Tensor<R> x = random_tensor<R>({2, 8, 4, 4}, rng);
            Tensor<R> proj = random_tensor<R>(x.shape, rng);
            RunFlags nograd{false, false};
            auto loss = [&] { return project(proj, se.forward(x, nograd)); };
            se.forward(x, RunFlags{true, false});
            Tensor<R> gx = se.backward(proj);
            add("se_module.input", max_grad_err(gx.data, numeric_grad(x, loss)));

            EcaModule<R> eca = EcaModule<R>::make(8);
            for (auto& v : eca.weight.data) v = wrng.uniform(-0.5, 0.5);
            auto loss2 = [&] { return project(proj, eca.forward(x, nograd)); };
            eca.forward(x, RunFlags{true, false});
            Tensor<R> gx2 = eca.backward(proj);
            add("eca_module.input", max_grad_err(gx2.data, numeric_grad(x, loss2)));
            eca.forward(x, RunFlags{true, false});
            eca.weight.zero_grad();
            (void)eca.backward(proj);
            add("eca_module.weight",
                max_grad_err(eca.weight.grad, numeric_grad(eca.weight, loss2)));
        }
    }

    if (do_model) {
        // end-to-end: micro model (N=4, M=1, 5 stages), L1 loss on a 16x16
        // input, finite differences over every parameter
        ModelConfig cfg;
        cfg.base_blocks = 1;
        cfg.base_width = 4;
        cfg.n_stages = 5;
        GUNet<R> net = GUNet<R>::build(cfg, seed);
        ParamStore<R> store = net.param_store();

        Tensor<R> x = random_tensor<R>({1, 3, 16, 16}, rng, 0.0, 1.0);
        Tensor<R> target = random_tensor<R>({1, 3, 16, 16}, rng, 0.0, 1.0);
        // keep |pred - target| away from the L1 kink
        for (auto& v : target.data) v += 2.0;

        RunFlags nograd{false, false};
        auto loss = [&] {
            Tensor<R> r = net.forward(x, nograd);
            Tensor<R> pred = x;
            for (std::size_t i = 0; i < pred.numel(); ++i)
                pred.data[i] += R(0.5) * r.data[i];
            return l1_loss(pred, target);
        };

        Tensor<R> r = net.forward(x, RunFlags{true, false});
        Tensor<R> pred = x;
        for (std::size_t i = 0; i < pred.numel(); ++i) pred.data[i] += R(0.5) * r.data[i];
        Tensor<R> gl = l1_loss_grad(pred, target);
        for (auto& v : gl.data) v *= R(0.5);
        store.zero_grads();
        (void)net.backward(gl);

        double worst = 0;
        for (auto& e : store.entries) {
            if (!param_is_learnable(e.kind)) continue;
            std::vector<R> analytic = e.tensor->grad;
            const double err = max_grad_err(analytic, numeric_grad(*e.tensor, loss));
            worst = std::max(worst, err);
        }
        add("model_end_to_end.all_params", worst, 1e-3);
    }

    return results;
}

}  // namespace gunet
