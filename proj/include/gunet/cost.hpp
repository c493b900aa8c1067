// SPDX-License-Identifier: Apache-2.0
//
// Analytic per-layer parameter and multiply-accumulate counts for any
// ModelConfig at a given input resolution (batch 1).
//
// Accounting conventions:
//   - conv / pointwise: out_elements * (in_ch/groups) * k^2 MACs; the bias
//     add rides along in the accumulate chain and is not charged extra
//     (bias values are still counted as parameters)
//   - eval-mode BatchNorm: one multiply-add per element
//   - LayerNorm/InstanceNorm compute statistics at inference: 6 ops per
//     element (mean 1, variance 2, normalize+affine 3) plus 2 multiplies
//     per square root, one root per statistic instance
//   - activations: free
//   - elementwise mul/add: one op per element; GAP: one add per element
//   - softmax: 3 ops per logit (exp, sum, divide)
//   - pixel shuffle/unshuffle: pure data movement, free

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gunet/config.hpp"

namespace gunet {

struct CostRow {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    int res_h = 256, res_w = 256;
    std::int64_t total_params = 0;
    std::int64_t total_macs = 0;
};

namespace cost_detail {

inline std::int64_t conv_params(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
                                std::int64_t groups = 1, bool bias = true) {
    return out_ch * (in_ch / groups) * k * k + (bias ? out_ch : 0);
}
inline std::int64_t conv_macs(std::int64_t out_elems, std::int64_t in_ch, std::int64_t k,
                              std::int64_t groups = 1) {
    return out_elems * (in_ch / groups) * k * k;
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace cost_detail

inline CostReport build_cost_report(const ModelConfig& cfg, int res_h = 256, int res_w = 256) {
    using namespace cost_detail;
    cfg.validate();
    CostReport rep;
    rep.res_h = res_h;
    rep.res_w = res_w;
    auto row = [&rep](const std::string& name, std::int64_t params, std::int64_t macs) {
        rep.rows.push_back({name, params, macs});
    };

    const int h = cfg.half_stages();
    const auto widths = cfg.widths();
    const int k = cfg.dw_kernel;

    // spatial size at pyramid level l
    auto level_h = [&](int l) {
        int v = res_h;
        for (int i = 0; i < l; ++i) v = ceil_div(v, 2);
        return v;
    };
    auto level_w = [&](int l) {
        int v = res_w;
        for (int i = 0; i < l; ++i) v = ceil_div(v, 2);
        return v;
    };

    auto block_rows = [&](const std::string& name, int stage) {
        const int level = std::min(stage, cfg.n_stages - 1 - stage);
        const std::int64_t C = widths[stage];
        const std::int64_t hw = static_cast<std::int64_t>(level_h(level)) * level_w(level);
        const std::int64_t el = hw * C;

        std::int64_t norm_macs = 0;
        if (cfg.norm_kind == NormKind::Batch) {
            norm_macs = el;  // folded-scale multiply-add per element
        } else {
            const std::int64_t roots = (cfg.norm_kind == NormKind::Layer) ? 1 : C;
            norm_macs = 6 * el + 2 * roots;
        }
        row(name + ".norm", 2 * C, norm_macs);
        row(name + ".pw1", conv_params(C, C, 1), conv_macs(el, C, 1));
        row(name + ".pw2", conv_params(C, C, 1), conv_macs(el, C, 1));
        row(name + ".dw", conv_params(C, C, k, C), conv_macs(el, C, k, C));
        row(name + ".pw3", conv_params(C, C, 1), conv_macs(el, C, 1));
        // branch combine (mul or add) + residual add
        row(name + ".elementwise", 0, 2 * el);
        if (cfg.attention == AttentionKind::Se) {
            const std::int64_t d = ModelConfig::reduced_width(static_cast<int>(C));
            row(name + ".se.reduce", conv_params(C, d, 1), conv_macs(d, C, 1));
            row(name + ".se.expand", conv_params(d, C, 1), conv_macs(C, d, 1));
            row(name + ".se.elementwise", 0, 2 * el);  // GAP + channel scale
        } else if (cfg.attention == AttentionKind::Eca) {
            const std::int64_t ke = ModelConfig::eca_kernel(static_cast<int>(C));
            row(name + ".eca", ke, ke * C + 2 * el);  // 1-D conv + GAP + scale
        }
    };

    row("stem", conv_params(3, widths[0], 3),
        conv_macs(static_cast<std::int64_t>(res_h) * res_w * widths[0], 3, 3));

    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < cfg.stage_blocks(i); ++j)
            block_rows("stage" + std::to_string(i) + ".block" + std::to_string(j), i);
        const std::int64_t out_el =
            static_cast<std::int64_t>(level_h(i + 1)) * level_w(i + 1) * widths[i + 1];
        row("down" + std::to_string(i), conv_params(4 * widths[i], widths[i + 1], 1),
            conv_macs(out_el, 4 * widths[i], 1));
    }
    for (int j = 0; j < cfg.stage_blocks(h); ++j)
        block_rows("stage" + std::to_string(h) + ".block" + std::to_string(j), h);
    for (int i = h - 1; i >= 0; --i) {
        const std::int64_t up_out =
            static_cast<std::int64_t>(level_h(i + 1)) * level_w(i + 1) * 4 * widths[i];
        row("up" + std::to_string(i), conv_params(widths[i + 1], 4 * widths[i], 1),
            conv_macs(up_out, widths[i + 1], 1));

        const std::int64_t C = widths[i];
        const std::int64_t el = static_cast<std::int64_t>(level_h(i)) * level_w(i) * C;
        const std::string fname = "fusion" + std::to_string(i);
        if (cfg.fusion == FusionKind::Concat) {
            row(fname + ".proj", conv_params(2 * C, C, 1), conv_macs(el, 2 * C, 1));
        } else if (cfg.fusion == FusionKind::Sum) {
            row(fname + ".proj", conv_params(C, C, 1), conv_macs(el, C, 1));
            row(fname + ".elementwise", 0, el);
        } else {
            const std::int64_t d = ModelConfig::reduced_width(static_cast<int>(C));
            row(fname + ".proj", conv_params(C, C, 1), conv_macs(el, C, 1));
            row(fname + ".mlp1", conv_params(C, d, 1), conv_macs(d, C, 1));
            row(fname + ".mlp2", conv_params(d, 2 * C, 1), conv_macs(2 * C, d, 1));
            // pre-GAP add, GAP, two-branch weighted sum, softmax on 2C logits
            row(fname + ".elementwise", 0, 4 * el + 3 * 2 * C);
        }
        const int s = cfg.n_stages - 1 - i;
        for (int j = 0; j < cfg.stage_blocks(s); ++j)
            block_rows("stage" + std::to_string(s) + ".block" + std::to_string(j), s);
    }

    row("head", conv_params(widths[0], 3, 3),
        conv_macs(static_cast<std::int64_t>(res_h) * res_w * 3, widths[0], 3));
    row("residual", 0, static_cast<std::int64_t>(res_h) * res_w * 3);

    for (const auto& r : rep.rows) {
        rep.total_params += r.params;
        rep.total_macs += r.macs;
    }
    return rep;
}

inline std::int64_t count_params(const ModelConfig& cfg) {
    return build_cost_report(cfg, 1, 1).total_params;
}

inline std::int64_t count_macs(const ModelConfig& cfg, int res_h = 256, int res_w = 256) {
    return build_cost_report(cfg, res_h, res_w).total_macs;
}

// CSV with header `layer,params,macs`; totals row last; deterministic order.
inline void emit_cost_csv(const CostReport& rep, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "layer,params,macs\n";
    for (const auto& r : rep.rows)
        out << r.name << ',' << r.params << ',' << r.macs << '\n';
    out << "total," << rep.total_params << ',' << rep.total_macs << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace gunet
