// SPDX-License-Identifier: Apache-2.0
//
// ModelConfig: the declarative description of a gUNet variant, plus the
// derived per-stage plan (widths and block counts) shared by the network
// builder and the cost model.

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "gunet/core.hpp"
#include "gunet/norm.hpp"
#include "gunet/ops.hpp"
#include "gunet/sha256.hpp"

namespace gunet {

enum class NonlinKind { Gating, ReluSum, GeluSum };
enum class FusionKind { Sk, Concat, Sum };
enum class AttentionKind { None, Se, Eca };

inline const char* nonlin_name(NonlinKind k) {
    switch (k) {
        case NonlinKind::Gating: return "gating";
        case NonlinKind::ReluSum: return "relu_sum";
        case NonlinKind::GeluSum: return "gelu_sum";
    }
    return "?";
}
inline const char* fusion_name(FusionKind k) {
    switch (k) {
        case FusionKind::Sk: return "sk";
        case FusionKind::Concat: return "concat";
        case FusionKind::Sum: return "sum";
    }
    return "?";
}
inline const char* attention_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::None: return "none";
        case AttentionKind::Se: return "se";
        case AttentionKind::Eca: return "eca";
    }
    return "?";
}

struct ModelConfig {
    int base_blocks = 2;    // M
    int base_width = 24;    // N
    int dw_kernel = 5;      // k
    int n_stages = 7;       // 5, 7 or 9
    NormKind norm_kind = NormKind::Batch;
    Act gate_kind = Act::Sigmoid;
    NonlinKind nonlin = NonlinKind::Gating;
    FusionKind fusion = FusionKind::Sk;
    AttentionKind attention = AttentionKind::None;
    double width_multiplier = 1.0;
    PadMode pad = PadMode::Reflect;

    void validate() const {
        check_config(base_blocks >= 1, "model: base_blocks must be >= 1");
        check_config(base_width >= 2, "model: base_width must be >= 2");
        check_config(dw_kernel >= 1 && dw_kernel % 2 == 1, "model: dw_kernel must be odd");
        check_config(n_stages == 5 || n_stages == 7 || n_stages == 9,
                     "model: n_stages must be one of 5, 7, 9");
        check_config(width_multiplier > 0, "model: width_multiplier must be positive");
    }

    int half_stages() const { return n_stages / 2; }
    int spatial_factor() const { return 1 << half_stages(); }

    // Nearest even integer to width_multiplier * base.
    int stage_width(int stage) const {
        const int level = std::min(stage, n_stages - 1 - stage);
        const double base = static_cast<double>(base_width) * (1 << level);
        long rounded = std::lround(width_multiplier * base / 2.0);
        if (rounded < 1) rounded = 1;
        return static_cast<int>(2 * rounded);
    }

    int stage_blocks(int stage) const {
        return stage == half_stages() ? 2 * base_blocks : base_blocks;
    }

    std::vector<int> widths() const {
        std::vector<int> out(n_stages);
        for (int i = 0; i < n_stages; ++i) out[i] = stage_width(i);
        return out;
    }
    std::vector<int> blocks() const {
        std::vector<int> out(n_stages);
        for (int i = 0; i < n_stages; ++i) out[i] = stage_blocks(i);
        return out;
    }

    // SK fusion / SE hidden width: channels/8, at least 4.
    static int reduced_width(int channels) { return std::max(channels / 8, 4); }

    // ECA 1-D kernel from the adaptive rule k = |log2(C)/2 + 1/2|, odd.
    static int eca_kernel(int channels) {
        const int t = static_cast<int>(std::fabs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5));
        return (t % 2 == 1) ? t : t + 1;
    }

    // Canonical key=value serialization; the fingerprint hashes this.
    std::string canonical() const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", width_multiplier);
        std::string s;
        s += "blocks=" + std::to_string(base_blocks);
        s += ";width=" + std::to_string(base_width);
        s += ";kernel=" + std::to_string(dw_kernel);
        s += ";stages=" + std::to_string(n_stages);
        s += ";norm=" + std::string(norm_kind_name(norm_kind));
        s += ";gate=" + std::string(act_name(gate_kind));
        s += ";nonlin=" + std::string(nonlin_name(nonlin));
        s += ";fusion=" + std::string(fusion_name(fusion));
        s += ";attention=" + std::string(attention_name(attention));
        s += ";width_mult=" + std::string(buf);
        s += ";pad=" + std::string(pad == PadMode::Reflect ? "reflect" : "zero");
        return s;
    }

    std::array<std::uint8_t, 32> fingerprint() const { return Sha256::hash(canonical()); }
};

// The four published variants differ only in depth: M in {2, 4, 8, 16}.
inline ModelConfig preset_config(const std::string& name) {
    ModelConfig cfg;
    if (name == "T" || name == "t") cfg.base_blocks = 2;
    else if (name == "S" || name == "s") cfg.base_blocks = 4;
    else if (name == "B" || name == "b") cfg.base_blocks = 8;
    else if (name == "D" || name == "d") cfg.base_blocks = 16;
    else
        throw ConfigError("unknown preset '" + name + "' (valid: T, S, B, D)");
    return cfg;
}

// --- enum parsing (config files / --ablate flags) ---------------------------

inline NormKind parse_norm_kind(const std::string& s) {
    if (s == "batch" || s == "bn") return NormKind::Batch;
    if (s == "layer" || s == "ln") return NormKind::Layer;
    if (s == "instance" || s == "in") return NormKind::Instance;
    throw ConfigError("unknown norm kind '" + s + "' (valid: batch, layer, instance)");
}
inline Act parse_gate_kind(const std::string& s) {
    if (s == "sigmoid") return Act::Sigmoid;
    if (s == "hard_sigmoid" || s == "hardsig") return Act::HardSigmoid;
    if (s == "tanh") return Act::Tanh;
    throw ConfigError("unknown gate kind '" + s + "' (valid: sigmoid, hard_sigmoid, tanh)");
}
inline NonlinKind parse_nonlin(const std::string& s) {
    if (s == "gating") return NonlinKind::Gating;
    if (s == "relu_sum" || s == "relu") return NonlinKind::ReluSum;
    if (s == "gelu_sum" || s == "gelu") return NonlinKind::GeluSum;
    throw ConfigError("unknown nonlinearity '" + s + "' (valid: gating, relu_sum, gelu_sum)");
}
inline FusionKind parse_fusion(const std::string& s) {
    if (s == "sk") return FusionKind::Sk;
    if (s == "concat" || s == "cat") return FusionKind::Concat;
    if (s == "sum") return FusionKind::Sum;
    throw ConfigError("unknown fusion kind '" + s + "' (valid: sk, concat, sum)");
}
inline AttentionKind parse_attention(const std::string& s) {
    if (s == "none") return AttentionKind::None;
    if (s == "se") return AttentionKind::Se;
    if (s == "eca") return AttentionKind::Eca;
    throw ConfigError("unknown attention kind '" + s + "' (valid: none, se, eca)");
}

// Apply one "key=value" ablation override.
inline void apply_ablation(ModelConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "blocks" || key == "M") cfg.base_blocks = std::stoi(value);
    else if (key == "width" || key == "N") cfg.base_width = std::stoi(value);
    else if (key == "kernel" || key == "k") cfg.dw_kernel = std::stoi(value);
    else if (key == "stages") cfg.n_stages = std::stoi(value);
    else if (key == "norm") cfg.norm_kind = parse_norm_kind(value);
    else if (key == "gate") cfg.gate_kind = parse_gate_kind(value);
    else if (key == "nonlin") cfg.nonlin = parse_nonlin(value);
    else if (key == "fusion") cfg.fusion = parse_fusion(value);
    else if (key == "attention") cfg.attention = parse_attention(value);
    else if (key == "width_mult") cfg.width_multiplier = std::stod(value);
    else if (key == "pad") cfg.pad = (value == "zero") ? PadMode::Zero : PadMode::Reflect;
    else
        throw ConfigError("unknown model option '" + key + "'");
}

}  // namespace gunet
