// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "gunet/conv.hpp"
#include "gunet/core.hpp"
#include "gunet/ops.hpp"

using namespace gunet;

namespace {

// Independent brute-force convolution: per output element, direct taps with
// its own padding arithmetic. Reduction order (ic, ky, kx) matches the
// library contract so results must be bit-identical.
template <typename R>
Tensor<R> naive_conv(const Tensor<R>& x, const ConvParams<R>& p) {
    const int k = p.kernel(), s = p.stride, pad = (k - 1) / 2;
    const int icg = p.weight.c(), ocg = p.out_channels() / p.groups;
    const int oh = (x.h() + s - 1) / s, ow = (x.w() + s - 1) / s;
    auto fold = [](int t, int n) {
        if (n == 1) return 0;
        const int period = 2 * n - 2;
        t %= period;
        if (t < 0) t += period;
        return t < n ? t : period - t;
    };
    Tensor<R> y(x.n(), p.out_channels(), oh, ow);
    for (int b = 0; b < x.n(); ++b)
        for (int oc = 0; oc < p.out_channels(); ++oc)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    R acc = p.has_bias ? p.bias.data[oc] : R(0);
                    const int grp = oc / ocg;
                    for (int ic = 0; ic < icg; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sy = yy * s + ky - pad, sx = xx * s + kx - pad;
                                R v;
                                if (p.pad == PadMode::Reflect) {
                                    v = x.at(b, grp * icg + ic, fold(sy, x.h()), fold(sx, x.w()));
                                } else {
                                    v = (sy >= 0 && sy < x.h() && sx >= 0 && sx < x.w())
                                            ? x.at(b, grp * icg + ic, sy, sx)
                                            : R(0);
                                }
                                acc += p.weight.at(oc, ic, ky, kx) * v;
                            }
                    y.at(b, oc, yy, xx) = acc;
                }
    return y;
}

template <typename R>
Tensor<R> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<R> t(s);
    for (auto& v : t.data) v = static_cast<R>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity weight reproduces the input") {
    Rng rng(11);
    Tensor<double> x = random_tensor<double>({2, 4, 5, 5}, rng);
    ConvParams<double> p = make_conv<double>(4, 4, 1);
    for (int oc = 0; oc < 4; ++oc) p.weight.at(oc, oc, 0, 0) = 1.0;
    Tensor<double> y = conv2d(x, p);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.data[i] == x.data[i]);
}

TEST_CASE("conv2d: all-ones depthwise 3x3 on constant input with reflect padding") {
    Tensor<double> x(1, 2, 4, 4);
    x.fill(7.0);
    ConvParams<double> p = make_conv<double>(2, 2, 3, 2);
    p.weight.fill(1.0);
    Tensor<double> y = conv2d(x, p);
    // reflect padding sees the same constant everywhere: 9 taps * 7 = 63
    for (double v : y.data) REQUIRE(v == Catch::Approx(63.0).margin(1e-12));
    // and the brute-force oracle agrees bit-for-bit
    Tensor<double> ref = naive_conv(x, p);
    for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y.data[i] == ref.data[i]);
}

TEST_CASE("conv2d matches the direct-loop reference bit-for-bit") {
    Rng rng(22);
    struct Case {
        int in, out, k, g, stride;
        PadMode pad;
    };
    for (const Case& c : {Case{3, 5, 3, 1, 1, PadMode::Reflect},
                          Case{4, 4, 5, 4, 1, PadMode::Reflect},
                          Case{4, 6, 1, 1, 1, PadMode::Zero},
                          Case{6, 4, 3, 2, 2, PadMode::Zero},
                          Case{3, 2, 3, 1, 2, PadMode::Reflect},
                          Case{2, 2, 5, 1, 1, PadMode::Zero}}) {
        Tensor<double> x = random_tensor<double>({2, c.in, 7, 6}, rng);
        ConvParams<double> p = make_conv<double>(c.in, c.out, c.k, c.g, true, c.stride, c.pad);
        for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
        for (auto& v : p.bias.data) v = rng.uniform(-1, 1);
        Tensor<double> y = conv2d(x, p);
        Tensor<double> ref = naive_conv(x, p);
        REQUIRE(y.shape == ref.shape);
        for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y.data[i] == ref.data[i]);
    }
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(33);
    ConvParams<double> p = make_conv<double>(3, 4, 3, 1, /*bias=*/false);
    for (auto& v : p.weight.data) v = rng.uniform(-1, 1);
    Tensor<double> x = random_tensor<double>({1, 3, 6, 6}, rng);
    Tensor<double> y = random_tensor<double>({1, 3, 6, 6}, rng);
    const double a = 0.7, b = -1.3;
    Tensor<double> mix(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    Tensor<double> lhs = conv2d(mix, p);
    Tensor<double> cx = conv2d(x, p), cy = conv2d(y, p);
    for (std::size_t i = 0; i < lhs.numel(); ++i) {
        const double rhs = a * cx.data[i] + b * cy.data[i];
        REQUIRE(lhs.data[i] == Catch::Approx(rhs).epsilon(1e-6).margin(1e-9));
    }
}

TEST_CASE("conv2d shape and error contracts") {
    Tensor<double> x(1, 3, 5, 5);
    SECTION("stride 2 gives ceil(H/2)") {
        ConvParams<double> p = make_conv<double>(3, 8, 3, 1, true, 2);
        Tensor<double> y = conv2d(x, p);
        REQUIRE(y.shape == Shape{1, 8, 3, 3});
    }
    SECTION("channel mismatch") {
        ConvParams<double> p = make_conv<double>(4, 4, 3);
        REQUIRE_THROWS_AS(conv2d(x, p), ConfigError);
    }
    SECTION("even kernel is rejected") {
        REQUIRE_THROWS_AS(make_conv<double>(3, 3, 2), ConfigError);
    }
    SECTION("in channels not divisible by groups") {
        REQUIRE_THROWS_AS(make_conv<double>(3, 6, 3, 2), ConfigError);
    }
}

TEST_CASE("activation values and ranges") {
    REQUIRE(act_eval(Act::Sigmoid, 0.0) == 0.5);
    REQUIRE(act_eval(Act::HardSigmoid, 0.0) == 0.5);
    REQUIRE(act_eval(Act::Relu, -3.5) == 0.0);
    REQUIRE(act_eval(Act::Relu, 2.25) == 2.25);
    REQUIRE(act_eval(Act::Gelu, 0.0) == 0.0);

    Rng rng(44);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-20, 20);
        const double sg = act_eval(Act::Sigmoid, x);
        const double hs = act_eval(Act::HardSigmoid, x);
        const double th = act_eval(Act::Tanh, x);
        REQUIRE((sg >= 0.0 && sg <= 1.0));
        REQUIRE((hs >= 0.0 && hs <= 1.0));
        REQUIRE((th >= -1.0 && th <= 1.0));
    }
    // hard sigmoid saturates exactly
    REQUIRE(act_eval(Act::HardSigmoid, 3.0) == 1.0);
    REQUIRE(act_eval(Act::HardSigmoid, -3.0) == 0.0);
}

TEST_CASE("global average pooling") {
    Tensor<double> c(1, 2, 3, 3);
    c.fill(4.25);
    Tensor<double> y = global_avg_pool(c);
    REQUIRE(y.shape == Shape{1, 2, 1, 1});
    REQUIRE(y.data[0] == Catch::Approx(4.25));

    Tensor<double> q(1, 1, 2, 2);
    q.data = {1, 2, 3, 4};
    REQUIRE(global_avg_pool(q).data[0] == Catch::Approx(2.5));
}

TEST_CASE("softmax over branches") {
    SECTION("equal logits give uniform weights") {
        Tensor<double> logits(1, 6, 1, 1);
        logits.fill(0.37);
        Tensor<double> w = softmax_over_branches(logits, 3);
        for (double v : w.data) REQUIRE(v == Catch::Approx(1.0 / 3).margin(1e-12));
    }
    SECTION("saturation at +/-20") {
        Tensor<double> logits(1, 2, 1, 1);
        logits.data = {20.0, -20.0};
        Tensor<double> w = softmax_over_branches(logits, 2);
        REQUIRE(w.data[0] == Catch::Approx(1.0).margin(1e-8));
        REQUIRE(w.data[1] == Catch::Approx(0.0).margin(1e-8));
    }
    SECTION("shift invariance and normalization") {
        Rng rng(55);
        Tensor<double> logits(2, 8, 1, 1);
        for (auto& v : logits.data) v = rng.uniform(-3, 3);
        Tensor<double> w1 = softmax_over_branches(logits, 2);
        Tensor<double> shifted = logits;
        for (auto& v : shifted.data) v += 5.21;  // same constant on every branch
        Tensor<double> w2 = softmax_over_branches(shifted, 2);
        for (std::size_t i = 0; i < w1.numel(); ++i)
            REQUIRE(w1.data[i] == Catch::Approx(w2.data[i]).margin(1e-6));
        for (int b = 0; b < 2; ++b)
            for (int s = 0; s < 4; ++s)
                REQUIRE(w1.at(b, s, 0, 0) + w1.at(b, 4 + s, 0, 0) ==
                        Catch::Approx(1.0).margin(1e-6));
    }
    SECTION("indivisible channel count is rejected") {
        Tensor<double> logits(1, 5, 1, 1);
        REQUIRE_THROWS_AS(softmax_over_branches(logits, 2), ShapeError);
    }
}

TEST_CASE("pixel shuffle / unshuffle") {
    SECTION("tiny example") {
        Tensor<double> x(1, 1, 2, 2);
        x.data = {1, 2, 3, 4};
        Tensor<double> u = pixel_unshuffle(x, 2);
        REQUIRE(u.shape == Shape{1, 4, 1, 1});
        REQUIRE(u.data == std::vector<double>{1, 2, 3, 4});
        Tensor<double> back = pixel_shuffle(u, 2);
        REQUIRE(back.data == x.data);
    }
    SECTION("round trip is bit-exact on random data") {
        Rng rng(66);
        Tensor<double> x = random_tensor<double>({2, 3, 6, 8}, rng);
        Tensor<double> rt = pixel_shuffle(pixel_unshuffle(x, 2), 2);
        REQUIRE(rt.data == x.data);
        Tensor<double> rt3 = pixel_unshuffle(pixel_shuffle(random_tensor<double>({1, 18, 2, 2}, rng), 3), 3);
    }
    SECTION("indivisible spatial dims are rejected") {
        Tensor<double> x(1, 1, 3, 4);
        REQUIRE_THROWS_AS(pixel_unshuffle(x, 2), ShapeError);
    }
}

TEST_CASE("l1 loss") {
    Rng rng(77);
    Tensor<double> a = random_tensor<double>({1, 3, 4, 4}, rng);
    REQUIRE(l1_loss(a, a) == 0.0);
    Tensor<double> b = a;
    for (auto& v : b.data) v += 1.0;
    REQUIRE(l1_loss(b, a) == Catch::Approx(1.0).margin(1e-12));

    // subgradient: sign(pred - target)/numel, zero at exact ties
    Tensor<double> g = l1_loss_grad(b, a);
    for (double v : g.data) REQUIRE(v == Catch::Approx(1.0 / a.numel()).margin(1e-15));
    Tensor<double> gz = l1_loss_grad(a, a);
    for (double v : gz.data) REQUIRE(v == 0.0);
}

TEST_CASE("reflect padding handles 1-pixel inputs") {
    Tensor<double> x(1, 1, 1, 1);
    x.data = {5.0};
    ConvParams<double> p = make_conv<double>(1, 1, 3, 1);
    p.weight.fill(1.0);
    Tensor<double> y = conv2d(x, p);
    REQUIRE(y.shape == Shape{1, 1, 1, 1});
    REQUIRE(y.data[0] == Catch::Approx(45.0));  // 9 taps, all folded onto the one pixel
}
