// SPDX-License-Identifier: Apache-2.0
//
// Dense NCHW tensor, error types, and the deterministic RNG used for
// weight init and data generation.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gunet {

// Error taxonomy, mirrored by the CLI exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}
inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense 4-D (batch, channel, height, width) array with an optional
// gradient buffer of the same shape. Row-major, w fastest.
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty unless ensure_grad() was called

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(s.numel(), Real(0)) {}
    Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

    int n() const { return shape.n; }
    int c() const { return shape.c; }
    int h() const { return shape.h; }
    int w() const { return shape.w; }
    std::size_t numel() const { return shape.numel(); }

    std::size_t idx(int b, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape.c + ch) * shape.h + y) * shape.w + x;
    }
    Real& at(int b, int ch, int y, int x) { return data[idx(b, ch, y, x)]; }
    Real at(int b, int ch, int y, int x) const { return data[idx(b, ch, y, x)]; }

    Real* plane(int b, int ch) { return data.data() + idx(b, ch, 0, 0); }
    const Real* plane(int b, int ch) const { return data.data() + idx(b, ch, 0, 0); }

    void fill(Real v) { data.assign(data.size(), v); }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
    void zero_grad() {
        if (has_grad()) grad.assign(grad.size(), Real(0));
    }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
    check_shape(a.shape == b.shape, std::string(what) + ": shape mismatch " +
                                        a.shape.str() + " vs " + b.shape.str());
}

// --- deterministic RNG ------------------------------------------------
//
// splitmix64 core. Self-contained so that streams are bit-stable across
// compilers and standard libraries; std::normal_distribution is not.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Combine stream identifiers (seed, epoch, index, ...) into one 64-bit seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = a;
    splitmix64(s);
    s ^= b + 0x9e3779b97f4a7c15ull;
    splitmix64(s);
    s ^= c + 0x517cc1b727220a95ull;
    std::uint64_t t = s;
    return splitmix64(t);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller (one draw per pair of uniforms)
    double normal() {
        double u1 = uniform();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // normal(0, std) truncated to +/- 2 std, by rejection
    double trunc_normal(double std_dev) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * std_dev;
    }

private:
    std::uint64_t state_;
};

// --- small elementwise helpers ----------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "add");
    Tensor<Real> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape(a, b, "mul");
    Tensor<Real> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

template <typename Real>
void axpy(Real alpha, const Tensor<Real>& x, Tensor<Real>& y) {
    check_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] += alpha * x.data[i];
}

}  // namespace gunet
