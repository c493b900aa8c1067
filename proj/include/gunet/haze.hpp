// SPDX-License-Identifier: Apache-2.0
//
// Synthetic haze from the atmospheric scattering model
//     I = J * t + A * (1 - t),   t = exp(-beta * d),
// its analytic inversion, and a procedural desk-scale dataset generator
// (colored gradients plus random rectangles and circles, with ramp /
// radial / value-noise depth maps).

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gunet/core.hpp"
#include "gunet/image_io.hpp"

namespace gunet {

enum class DepthKind { Ramp, Radial, Perlin };

inline DepthKind parse_depth_kind(const std::string& s) {
    if (s == "ramp") return DepthKind::Ramp;
    if (s == "radial") return DepthKind::Radial;
    if (s == "perlin") return DepthKind::Perlin;
    throw ConfigError("unknown depth kind '" + s + "' (valid: ramp, radial, perlin)");
}

struct HazeParams {
    std::array<double, 3> atmos_light{1.0, 1.0, 1.0};  // A, per channel
    double beta = 1.0;                                  // scattering coefficient
    Tensor<double> depth;                               // (1,1,H,W), d(x) >= 0

    Tensor<double> transmission() const {
        Tensor<double> t(depth.shape);
        for (std::size_t i = 0; i < depth.numel(); ++i)
            t.data[i] = std::exp(-beta * depth.data[i]);
        return t;
    }
};

struct ImagePair {
    Tensor<double> clean;  // (1,3,H,W) in [0,1]
    Tensor<double> hazy;   // (1,3,H,W) in [0,1]
    HazeParams params;
};

inline Tensor<double> synthesize_haze(const Tensor<double>& clean, const HazeParams& params) {
    check_shape(clean.c() == 3, "synthesize_haze: need 3 channels");
    check_shape(clean.h() == params.depth.h() && clean.w() == params.depth.w(),
                "synthesize_haze: depth map size mismatch");
    const Tensor<double> t = params.transmission();
    Tensor<double> hazy(clean.shape);
    for (int c = 0; c < 3; ++c) {
        const double A = params.atmos_light[static_cast<std::size_t>(c)];
        for (int y = 0; y < clean.h(); ++y)
            for (int x = 0; x < clean.w(); ++x) {
                const double tv = t.at(0, 0, y, x);
                double v = clean.at(0, c, y, x) * tv + A * (1.0 - tv);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                hazy.at(0, c, y, x) = v;
            }
    }
    return hazy;
}

// J = (I - A*(1-t)) / max(t, t_floor), clamped to [0,1].
inline Tensor<double> invert_haze(const Tensor<double>& hazy, const HazeParams& params,
                                  double t_floor = 0.05) {
    check_config(t_floor > 0.0, "invert_haze: t_floor must be positive");
    check_shape(hazy.c() == 3, "invert_haze: need 3 channels");
    const Tensor<double> t = params.transmission();
    Tensor<double> clean(hazy.shape);
    for (int c = 0; c < 3; ++c) {
        const double A = params.atmos_light[static_cast<std::size_t>(c)];
        for (int y = 0; y < hazy.h(); ++y)
            for (int x = 0; x < hazy.w(); ++x) {
                const double tv = std::max(t.at(0, 0, y, x), t_floor);
                double v = (hazy.at(0, c, y, x) - A * (1.0 - t.at(0, 0, y, x))) / tv;
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                clean.at(0, c, y, x) = v;
            }
    }
    return clean;
}

namespace haze_detail {

// normalize a plane to [0, hi]
inline void normalize_to(Tensor<double>& d, double hi) {
    double lo = d.data[0], mx = d.data[0];
    for (double v : d.data) {
        lo = std::min(lo, v);
        mx = std::max(mx, v);
    }
    const double span = mx - lo;
    for (auto& v : d.data) v = span > 0 ? (v - lo) / span * hi : 0.0;
}

inline Tensor<double> depth_ramp(int h, int w, Rng& rng) {
    Tensor<double> d(1, 1, h, w);
    const double ang = rng.uniform(0, 2.0 * M_PI);
    const double ax = std::cos(ang), ay = std::sin(ang);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d.at(0, 0, y, x) = ax * x + ay * y;
    normalize_to(d, 3.0);
    return d;
}

inline Tensor<double> depth_radial(int h, int w, Rng& rng) {
    Tensor<double> d(1, 1, h, w);
    const double cy = rng.uniform(0, h - 1), cx = rng.uniform(0, w - 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            d.at(0, 0, y, x) = std::hypot(y - cy, x - cx);
    normalize_to(d, 3.0);
    return d;
}

// two octaves of bilinearly upsampled value noise
inline Tensor<double> depth_perlin(int h, int w, Rng& rng) {
    Tensor<double> d(1, 1, h, w);
    for (int octave = 0; octave < 2; ++octave) {
        const int g = octave == 0 ? 4 : 8;
        const double amp = octave == 0 ? 1.0 : 0.5;
        std::vector<double> grid(static_cast<std::size_t>(g + 1) * (g + 1));
        for (auto& v : grid) v = rng.uniform();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double fy = static_cast<double>(y) / h * g;
                const double fx = static_cast<double>(x) / w * g;
                const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                const double ty = fy - y0, tx = fx - x0;
                const double v00 = grid[y0 * (g + 1) + x0];
                const double v01 = grid[y0 * (g + 1) + x0 + 1];
                const double v10 = grid[(y0 + 1) * (g + 1) + x0];
                const double v11 = grid[(y0 + 1) * (g + 1) + x0 + 1];
                d.at(0, 0, y, x) += amp * ((1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                           ty * ((1 - tx) * v10 + tx * v11));
            }
    }
    normalize_to(d, 3.0);
    return d;
}

inline Tensor<double> make_depth(DepthKind kind, int h, int w, Rng& rng) {
    switch (kind) {
        case DepthKind::Ramp: return depth_ramp(h, w, rng);
        case DepthKind::Radial: return depth_radial(h, w, rng);
        case DepthKind::Perlin: return depth_perlin(h, w, rng);
    }
    return depth_ramp(h, w, rng);
}

// gradient background plus random filled rectangles and circles
inline Tensor<double> make_clean_image(int h, int w, Rng& rng) {
    Tensor<double> img(1, 3, h, w);
    std::array<double, 3> c0, c1;
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform();
        c1[c] = rng.uniform();
    }
    const double ang = rng.uniform(0, 2.0 * M_PI);
    const double ax = std::cos(ang), ay = std::sin(ang);
    double lo = 0, hi = 0;
    for (const double v : {0.0, ax * (w - 1), ay * (h - 1), ax * (w - 1) + ay * (h - 1)}) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi - lo) > 0 ? hi - lo : 1.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double t = (ax * x + ay * y - lo) / span;
            for (int c = 0; c < 3; ++c)
                img.at(0, c, y, x) = (1 - t) * c0[c] + t * c1[c];
        }

    const int n_shapes = 4 + static_cast<int>(rng.uniform_int(5));
    for (int s = 0; s < n_shapes; ++s) {
        std::array<double, 3> col;
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform();
        const bool circle = rng.uniform() < 0.5;
        if (circle) {
            const double cy = rng.uniform(0, h - 1), cx = rng.uniform(0, w - 1);
            const double r = rng.uniform(0.05, 0.25) * std::min(h, w);
            const double r2 = r * r;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r2)
                        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = col[c];
        } else {
            const int y0 = static_cast<int>(rng.uniform_int(h));
            const int x0 = static_cast<int>(rng.uniform_int(w));
            const int hh = 2 + static_cast<int>(rng.uniform_int(h / 2));
            const int ww = 2 + static_cast<int>(rng.uniform_int(w / 2));
            for (int y = y0; y < std::min(h, y0 + hh); ++y)
                for (int x = x0; x < std::min(w, x0 + ww); ++x)
                    for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = col[c];
        }
    }
    return img;
}

}  // namespace haze_detail

// Deterministic from (seed, index): each image has its own derived stream.
inline std::vector<ImagePair> generate_dataset(int n, int size, std::uint64_t seed,
                                               DepthKind kind = DepthKind::Perlin) {
    std::vector<ImagePair> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, 0xda7a, static_cast<std::uint64_t>(i)));
        ImagePair pair;
        pair.clean = haze_detail::make_clean_image(size, size, rng);
        pair.params.depth = haze_detail::make_depth(kind, size, size, rng);
        pair.params.beta = rng.uniform(0.5, 2.0);
        for (int c = 0; c < 3; ++c) pair.params.atmos_light[c] = rng.uniform(0.7, 1.0);
        pair.hazy = synthesize_haze(pair.clean, pair.params);
        out.push_back(std::move(pair));
    }
    return out;
}

// Layout: <dir>/{clean,hazy}/NNNN.png plus params.csv (index,beta,A_r,A_g,A_b).
inline void save_dataset(const std::string& dir, const std::vector<ImagePair>& pairs) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "clean");
    fs::create_directories(fs::path(dir) / "hazy");
    std::ofstream csv(fs::path(dir) / "params.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write params.csv in '" + dir + "'");
    csv << "index,beta,A_r,A_g,A_b\n";
    char num[340];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04zu.png", i);
        write_image((fs::path(dir) / "clean" / name).string(),
                    tensor_to_image(pairs[i].clean));
        write_image((fs::path(dir) / "hazy" / name).string(), tensor_to_image(pairs[i].hazy));
        std::snprintf(num, sizeof(num), "%zu,%.17g,%.17g,%.17g,%.17g", i, pairs[i].params.beta,
                      pairs[i].params.atmos_light[0], pairs[i].params.atmos_light[1],
                      pairs[i].params.atmos_light[2]);
        csv << num << "\n";
    }
}

struct Dataset {
    std::vector<Tensor<double>> clean, hazy;  // (1,3,H,W) in [0,1]
    std::size_t size() const { return clean.size(); }
};

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    if (!fs::is_directory(fs::path(dir) / "clean") || !fs::is_directory(fs::path(dir) / "hazy"))
        throw IoError("'" + dir + "' does not contain clean/ and hazy/ subdirectories");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / "clean"))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no images found in '" + dir + "/clean'");
    for (const auto& name : names) {
        ds.clean.push_back(image_to_tensor<double>(read_image((fs::path(dir) / "clean" / name).string())));
        ds.hazy.push_back(image_to_tensor<double>(read_image((fs::path(dir) / "hazy" / name).string())));
        check_shape(ds.clean.back().shape == ds.hazy.back().shape,
                    "dataset: clean/hazy size mismatch for " + name);
    }
    return ds;
}

}  // namespace gunet
