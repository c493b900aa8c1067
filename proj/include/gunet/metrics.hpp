// SPDX-License-Identifier: Apache-2.0
//
// Full-reference quality metrics on [0,1] images: PSNR and mean SSIM
// (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, per channel then
// averaged; windows fully inside the image).

#pragma once

#include <cmath>
#include <vector>

#include "gunet/core.hpp"

namespace gunet {

template <typename Real>
double psnr(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

namespace metrics_detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(size);
    const int half = size / 2;
    double sum = 0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// separable valid-mode Gaussian filter of one HxW plane
inline std::vector<double> gauss_valid(const std::vector<double>& src, int h, int w,
                                       const std::vector<double>& k) {
    const int ks = static_cast<int>(k.size());
    const int oh = h - ks + 1, ow = w - ks + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < ks; ++i) acc += k[i] * src[y * w + x + i];
            tmp[y * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < ks; ++i) acc += k[i] * tmp[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

}  // namespace metrics_detail

template <typename Real>
double ssim(const Tensor<Real>& a, const Tensor<Real>& b, int window = 11, double sigma = 1.5) {
    check_same_shape(a, b, "ssim");
    check_shape(a.h() >= window && a.w() >= window,
                "ssim: image smaller than the " + std::to_string(window) + "px window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;  // L = 1
    const auto kern = metrics_detail::gaussian_kernel(window, sigma);
    const int h = a.h(), w = a.w();

    double total = 0;
    int planes = 0;
    for (int bi = 0; bi < a.n(); ++bi)
        for (int ch = 0; ch < a.c(); ++ch) {
            std::vector<double> x(static_cast<std::size_t>(h) * w), y(x.size()), xx(x.size()),
                yy(x.size()), xy(x.size());
            const Real* pa = a.plane(bi, ch);
            const Real* pb = b.plane(bi, ch);
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = static_cast<double>(pa[i]);
                y[i] = static_cast<double>(pb[i]);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            using metrics_detail::gauss_valid;
            const auto mx = gauss_valid(x, h, w, kern);
            const auto my = gauss_valid(y, h, w, kern);
            const auto mxx = gauss_valid(xx, h, w, kern);
            const auto myy = gauss_valid(yy, h, w, kern);
            const auto mxy = gauss_valid(xy, h, w, kern);
            double acc = 0;
            for (std::size_t i = 0; i < mx.size(); ++i) {
                const double vx = mxx[i] - mx[i] * mx[i];
                const double vy = myy[i] - my[i] * my[i];
                const double cxy = mxy[i] - mx[i] * my[i];
                const double num = (2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2);
                const double den = (mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2);
                acc += num / den;
            }
            total += acc / static_cast<double>(mx.size());
            ++planes;
        }
    return total / planes;
}

}  // namespace gunet
