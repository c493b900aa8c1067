// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "gunet/conv.hpp"
#include "gunet/core.hpp"
#include "gunet/norm.hpp"

using namespace gunet;

namespace {
template <typename R>
Tensor<R> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<R> t(s);
    for (auto& v : t.data) v = static_cast<R>(rng.uniform(lo, hi));
    return t;
}
}  // namespace

TEST_CASE("batch norm: eval with identity statistics is the identity up to eps") {
    Rng rng(1);
    Tensor<double> x = random_tensor<double>({2, 3, 4, 4}, rng);
    NormState<double> st = make_norm_state<double>(3);
    st.mode = NormMode::Eval;
    Tensor<double> y = batch_norm(x, st);
    for (std::size_t i = 0; i < x.numel(); ++i)
        REQUIRE(y.data[i] == Catch::Approx(x.data[i]).epsilon(1e-5));
}

TEST_CASE("batch norm: two-point batch normalizes to +/-1") {
    // per-channel values {1, 3}: mean 2, biased var 1
    Tensor<double> x(2, 1, 1, 1);
    x.data = {1.0, 3.0};
    NormState<double> st = make_norm_state<double>(1);
    Tensor<double> y = batch_norm(x, st);
    REQUIRE(y.data[0] == Catch::Approx(-1.0).margin(1e-4));
    REQUIRE(y.data[1] == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("batch norm: train-mode pre-affine statistics per ghost group") {
    Rng rng(2);
    Tensor<double> x = random_tensor<double>({8, 3, 5, 5}, rng, -2, 5);
    NormState<double> st = make_norm_state<double>(3);
    st.ghost_size = 4;
    Tensor<double> y = batch_norm(x, st);
    const int g = 4, HW = 25;
    for (int grp = 0; grp < 2; ++grp)
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (int b = grp * g; b < (grp + 1) * g; ++b)
                for (int i = 0; i < HW; ++i) mean += y.plane(b, c)[i];
            mean /= g * HW;
            for (int b = grp * g; b < (grp + 1) * g; ++b)
                for (int i = 0; i < HW; ++i) {
                    const double d = y.plane(b, c)[i] - mean;
                    var += d * d;
                }
            var /= g * HW;
            REQUIRE(std::fabs(mean) < 1e-5);
            REQUIRE(var == Catch::Approx(1.0).margin(1e-4));
        }
}

TEST_CASE("batch norm: ghost_size equal to batch matches full-batch BN bit-for-bit") {
    Rng rng(3);
    Tensor<double> x = random_tensor<double>({8, 4, 3, 3}, rng);
    NormState<double> full = make_norm_state<double>(4);
    NormState<double> ghost = make_norm_state<double>(4);
    ghost.ghost_size = 8;
    Tensor<double> y1 = batch_norm(x, full);
    Tensor<double> y2 = batch_norm(x, ghost);
    REQUIRE(y1.data == y2.data);
    REQUIRE(full.running_mean.data == ghost.running_mean.data);
    REQUIRE(full.running_var.data == ghost.running_var.data);
}

TEST_CASE("batch norm: ghost size must divide the batch") {
    Tensor<double> x(6, 2, 2, 2);
    NormState<double> st = make_norm_state<double>(2);
    st.ghost_size = 4;
    REQUIRE_THROWS_AS(batch_norm(x, st), ConfigError);
}

TEST_CASE("batch norm: eval and frozen modes never mutate running statistics") {
    Rng rng(4);
    Tensor<double> x = random_tensor<double>({4, 2, 3, 3}, rng);
    for (NormMode m : {NormMode::Eval, NormMode::Frozen}) {
        NormState<double> st = make_norm_state<double>(2);
        st.running_mean.data = {0.3, -0.2};
        st.running_var.data = {1.5, 0.7};
        st.mode = m;
        const auto mean_before = st.running_mean.data;
        const auto var_before = st.running_var.data;
        (void)batch_norm(x, st);
        REQUIRE(st.running_mean.data == mean_before);
        REQUIRE(st.running_var.data == var_before);
    }
}

TEST_CASE("batch norm: train mode updates running statistics by EMA") {
    Tensor<double> x(2, 1, 1, 2);
    x.data = {1, 3, 5, 7};  // mean 4, biased var 5, unbiased 20/3
    NormState<double> st = make_norm_state<double>(1);
    (void)batch_norm(x, st);
    REQUIRE(st.running_mean.data[0] == Catch::Approx(0.9 * 0.0 + 0.1 * 4.0));
    REQUIRE(st.running_var.data[0] == Catch::Approx(0.9 * 1.0 + 0.1 * (20.0 / 3)));
}

TEST_CASE("layer/instance norm: constant input collapses to beta") {
    Tensor<double> x(2, 3, 4, 4);
    x.fill(2.7);
    Tensor<double> gamma(1, 3, 1, 1), beta(1, 3, 1, 1);
    gamma.fill(1.4);
    beta.data = {0.1, -0.5, 2.0};
    for (int which = 0; which < 2; ++which) {
        Tensor<double> y = which == 0 ? layer_norm(x, gamma, beta) : instance_norm(x, gamma, beta);
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < 16; ++i)
                    REQUIRE(y.plane(b, c)[i] == Catch::Approx(beta.data[c]).margin(1e-9));
    }
}

TEST_CASE("layer norm: standardized input passes through") {
    // one sample whose (C,H,W) values already have mean 0 and variance 1
    Tensor<double> x(1, 2, 1, 2);
    x.data = {-1, 1, -1, 1};
    Tensor<double> gamma(1, 2, 1, 1), beta(1, 2, 1, 1);
    gamma.fill(1.0);
    Tensor<double> y = layer_norm(x, gamma, beta);
    for (std::size_t i = 0; i < x.numel(); ++i)
        REQUIRE(y.data[i] == Catch::Approx(x.data[i]).epsilon(1e-5));
}

TEST_CASE("fold_norm_into_conv") {
    Rng rng(5);
    SECTION("identity statistics reproduce the conv up to eps scaling") {
        ConvParams<double> p = make_conv<double>(3, 4, 1);
        for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
        NormState<double> st = make_norm_state<double>(3);
        st.mode = NormMode::Eval;
        ConvParams<double> folded = fold_norm_into_conv(st, p);
        for (std::size_t i = 0; i < p.weight.numel(); ++i)
            REQUIRE(folded.weight.data[i] == Catch::Approx(p.weight.data[i]).epsilon(1e-5));
    }
    SECTION("train-mode state is rejected") {
        ConvParams<double> p = make_conv<double>(3, 3, 1);
        NormState<double> st = make_norm_state<double>(3);
        REQUIRE_THROWS_AS(fold_norm_into_conv(st, p), ConfigError);
    }
    SECTION("two-path equivalence on 100 random inputs, single precision") {
        ConvParams<float> p = make_conv<float>(4, 6, 3, 1, true, 1, PadMode::Reflect);
        for (auto& v : p.weight.data) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : p.bias.data) v = static_cast<float>(rng.uniform(-1, 1));
        NormState<float> st = make_norm_state<float>(4);
        st.mode = NormMode::Frozen;
        for (auto& v : st.gamma.data) v = static_cast<float>(rng.uniform(0.5, 1.5));
        for (auto& v : st.beta.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (auto& v : st.running_mean.data) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : st.running_var.data) v = static_cast<float>(rng.uniform(0.2, 2.0));
        ConvParams<float> folded = fold_norm_into_conv(st, p);
        double worst = 0;
        for (int trial = 0; trial < 100; ++trial) {
            Tensor<float> x = random_tensor<float>({1, 4, 6, 6}, rng, -2, 2);
            Tensor<float> two_path = conv2d(batch_norm(x, st), p);
            Tensor<float> one_path = conv2d(x, folded);
            for (std::size_t i = 0; i < two_path.numel(); ++i)
                worst = std::max(worst, std::fabs(static_cast<double>(two_path.data[i]) -
                                                  one_path.data[i]));
        }
        REQUIRE(worst < 1e-5);
    }
    SECTION("beta folds into the bias: zero input, identical outputs") {
        ConvParams<double> p = make_conv<double>(2, 3, 3, 1, /*bias=*/false);
        for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
        NormState<double> st = make_norm_state<double>(2);
        st.mode = NormMode::Eval;
        st.beta.data = {0.4, -1.2};
        Tensor<double> zero(1, 2, 4, 4);
        ConvParams<double> folded = fold_norm_into_conv(st, p);
        Tensor<double> a = conv2d(batch_norm(zero, st), p);
        Tensor<double> b = conv2d(zero, folded);
        REQUIRE(folded.has_bias);
        for (std::size_t i = 0; i < a.numel(); ++i)
            REQUIRE(a.data[i] == Catch::Approx(b.data[i]).margin(1e-12));
    }
    SECTION("depthwise conv folds per channel") {
        ConvParams<double> p = make_conv<double>(3, 3, 3, 3);
        for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
        NormState<double> st = make_norm_state<double>(3);
        st.mode = NormMode::Eval;
        st.running_mean.data = {0.5, -0.3, 1.1};
        st.running_var.data = {2.0, 0.5, 1.3};
        st.gamma.data = {1.2, 0.8, -0.6};
        ConvParams<double> folded = fold_norm_into_conv(st, p);
        Rng rng2(6);
        Tensor<double> x = random_tensor<double>({2, 3, 5, 5}, rng2);
        Tensor<double> a = conv2d(batch_norm(x, st), p);
        Tensor<double> b = conv2d(x, folded);
        for (std::size_t i = 0; i < a.numel(); ++i)
            REQUIRE(a.data[i] == Catch::Approx(b.data[i]).margin(1e-10));
    }
}
