// SPDX-License-Identifier: Apache-2.0
//
// Training harness: linear-warmup + cosine-annealing schedule, AdamW with
// decoupled weight decay, global-norm gradient clipping, the FrozenBN
// switchover, random-crop batching, metrics logging and checkpoints.

#pragma once

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gunet/haze.hpp"
#include "gunet/metrics.hpp"
#include "gunet/network.hpp"

namespace gunet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct TrainConfig {
    int epochs = 50;
    int samples_per_epoch = 512;
    int batch_size = 8;
    double lr_init = 4e-4;
    double lr_min = 4e-6;
    int warmup_epochs = 3;
    int frozen_bn_epochs = 10;
    double weight_decay = 0.01;
    double beta1 = 0.9, beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    int crop = 64;
    std::uint64_t seed = 0;
    int ghost_norm_size = 0;  // 0 = full mini-batch
    double val_fraction = 0.1;

    void validate() const {
        check_config(epochs >= 0, "train: epochs must be >= 0");
        check_config(samples_per_epoch >= 1 && batch_size >= 1, "train: bad batch geometry");
        check_config(samples_per_epoch % batch_size == 0,
                     "train: samples_per_epoch must be a multiple of batch_size");
        check_config(warmup_epochs + frozen_bn_epochs <= epochs || epochs == 0,
                     "train: warmup_epochs + frozen_bn_epochs must not exceed epochs");
        check_config(lr_min <= lr_init && lr_init > 0, "train: need 0 < lr_min <= lr_init");
        check_config(weight_decay >= 0, "train: weight_decay must be >= 0");
        check_config(ghost_norm_size >= 0 && ghost_norm_size <= batch_size,
                     "train: ghost_norm_size must be in [0, batch_size]");
        check_config(val_fraction >= 0 && val_fraction < 1, "train: bad val_fraction");
    }
};

// Linear ramp 0 -> lr_init over the warmup, then cosine to lr_min. `step`
// runs in [0, total_steps]; the warmup boundary returns exactly lr_init and
// the final step exactly lr_min.
inline double lr_schedule(long step, long total_steps, long warmup_steps, double lr_init,
                          double lr_min) {
    if (warmup_steps > 0 && step <= warmup_steps)
        return lr_init * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return lr_min;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(M_PI * progress));
}

// --- AdamW ------------------------------------------------------------------

template <typename Real>
class AdamW {
public:
    AdamW(const ParamStore<Real>& store, const TrainConfig& tc)
        : beta1_(tc.beta1), beta2_(tc.beta2), eps_(tc.adam_eps), weight_decay_(tc.weight_decay) {
        for (const auto& e : store.entries)
            if (param_is_learnable(e.kind)) {
                m_.emplace_back(e.tensor->numel(), Real(0));
                v_.emplace_back(e.tensor->numel(), Real(0));
            }
    }

    // Decoupled decay: weights shrink directly, never through the moments.
    // Norm affine parameters and biases are excluded from decay.
    void step(ParamStore<Real>& store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t slot = 0;
        for (auto& e : store.entries) {
            if (!param_is_learnable(e.kind)) continue;
            Tensor<Real>& p = *e.tensor;
            p.ensure_grad();
            auto& m = m_[slot];
            auto& v = v_[slot];
            ++slot;
            const bool decay = weight_decay_ > 0 && param_gets_weight_decay(e.kind);
            for (std::size_t i = 0; i < p.numel(); ++i) {
                if (decay) p.data[i] -= static_cast<Real>(lr * weight_decay_) * p.data[i];
                const double g = static_cast<double>(p.grad[i]);
                m[i] = static_cast<Real>(beta1_ * m[i] + (1.0 - beta1_) * g);
                v[i] = static_cast<Real>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                p.data[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    long step_count() const { return t_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

// Returns the pre-clip global norm; scales grads so the norm is <= max_norm.
template <typename Real>
double clip_grad_norm(ParamStore<Real>& store, double max_norm) {
    double sq = 0;
    for (auto& e : store.entries) {
        if (!param_is_learnable(e.kind) || !e.tensor->has_grad()) continue;
        for (const Real g : e.tensor->grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const Real scale = static_cast<Real>(max_norm / norm);
        for (auto& e : store.entries) {
            if (!param_is_learnable(e.kind) || !e.tensor->has_grad()) continue;
            for (Real& g : e.tensor->grad) g *= scale;
        }
    }
    return norm;
}

// --- checkpoints --------------------------------------------------------------
//
// Layout: magic "GUNT", u32 version, 32-byte config fingerprint, u64 manifest
// length, UTF-8 JSON manifest mapping names to (offset, dtype, shape), then
// the raw little-endian arrays in manifest order.

inline ModelConfig model_config_from_canonical(const std::string& s);

namespace ckpt_detail {

template <typename Real>
const char* dtype_tag() {
    return sizeof(Real) == 4 ? "f32" : "f64";
}

inline const char* param_kind_tag(ParamKind k) {
    switch (k) {
        case ParamKind::ConvWeight: return "weight";
        case ParamKind::Bias: return "bias";
        case ParamKind::NormGamma: return "gamma";
        case ParamKind::NormBeta: return "beta";
        case ParamKind::RunningMean: return "running_mean";
        case ParamKind::RunningVar: return "running_var";
        case ParamKind::AttnWeight: return "attn_weight";
    }
    return "?";
}

}  // namespace ckpt_detail

template <typename Real>
void save_checkpoint(const ParamStore<Real>& store, const ModelConfig& config,
                     const std::string& path) {
    nlohmann::json manifest;
    manifest["dtype"] = ckpt_detail::dtype_tag<Real>();
    manifest["config"] = config.canonical();
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : store.entries) {
        nlohmann::json t;
        t["name"] = e.name;
        t["kind"] = ckpt_detail::param_kind_tag(e.kind);
        t["offset"] = offset;
        t["dtype"] = ckpt_detail::dtype_tag<Real>();
        t["shape"] = {e.tensor->n(), e.tensor->c(), e.tensor->h(), e.tensor->w()};
        tensors.push_back(std::move(t));
        offset += e.tensor->numel() * sizeof(Real);
    }
    manifest["tensors"] = std::move(tensors);
    const std::string mtxt = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint '" + path + "' for writing");
    out.write("GUNT", 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const auto fp = store.fingerprint;
    out.write(reinterpret_cast<const char*>(fp.data()), 32);
    const std::uint64_t mlen = mtxt.size();
    out.write(reinterpret_cast<const char*>(&mlen), 8);
    out.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
    for (const auto& e : store.entries)
        out.write(reinterpret_cast<const char*>(e.tensor->data.data()),
                  static_cast<std::streamsize>(e.tensor->numel() * sizeof(Real)));
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

struct CheckpointInfo {
    std::array<std::uint8_t, 32> fingerprint{};
    std::string dtype;
    ModelConfig config;
    nlohmann::json manifest;
    std::streamoff data_start = 0;
};

inline CheckpointInfo read_checkpoint_header(std::ifstream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "GUNT")
        throw IoError("'" + path + "' is not a GUNT checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw IoError("unsupported checkpoint version in '" + path + "'");
    CheckpointInfo info;
    in.read(reinterpret_cast<char*>(info.fingerprint.data()), 32);
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), 8);
    std::string mtxt(mlen, '\0');
    in.read(mtxt.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    info.manifest = nlohmann::json::parse(mtxt, nullptr, /*allow_exceptions=*/false);
    if (info.manifest.is_discarded()) throw IoError("corrupt manifest in '" + path + "'");
    info.dtype = info.manifest.at("dtype").get<std::string>();
    info.config = model_config_from_canonical(info.manifest.at("config").get<std::string>());
    info.data_start = in.tellg();
    return info;
}

inline CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    return read_checkpoint_header(in, path);
}

// Refuses on fingerprint or dtype mismatch before touching any tensor.
template <typename Real>
void load_checkpoint(ParamStore<Real>& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    const CheckpointInfo info = read_checkpoint_header(in, path);
    if (info.fingerprint != store.fingerprint)
        throw ConfigError("checkpoint '" + path +
                          "' was written for a different model config (fingerprint mismatch)");
    if (info.dtype != ckpt_detail::dtype_tag<Real>())
        throw ConfigError("checkpoint dtype " + info.dtype + " does not match runtime " +
                          ckpt_detail::dtype_tag<Real>());
    const auto& tensors = info.manifest.at("tensors");
    if (tensors.size() != store.entries.size())
        throw ConfigError("checkpoint tensor count mismatch in '" + path + "'");
    for (std::size_t i = 0; i < store.entries.size(); ++i) {
        const auto& t = tensors[i];
        auto& e = store.entries[i];
        if (t.at("name").get<std::string>() != e.name)
            throw ConfigError("checkpoint tensor order mismatch at '" + e.name + "'");
        const auto sh = t.at("shape");
        check_shape(sh[0] == e.tensor->n() && sh[1] == e.tensor->c() && sh[2] == e.tensor->h() &&
                        sh[3] == e.tensor->w(),
                    "checkpoint shape mismatch for '" + e.name + "'");
        in.seekg(info.data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(e.tensor->data.data()),
                static_cast<std::streamsize>(e.tensor->numel() * sizeof(Real)));
    }
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
}

// --- the loop -------------------------------------------------------------------

struct MetricsRow {
    int epoch = 0;
    long step = 0;
    double lr = 0, train_l1 = 0, val_psnr = 0, val_ssim = 0;
};

struct TrainResult {
    std::vector<MetricsRow> log;
    double best_val_psnr = 0;
    int best_epoch = -1;
};

// Per-epoch metrics CSV: epoch,step,lr,train_l1,val_psnr,val_ssim.
inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write metrics log '" + path + "'");
    out << "epoch,step,lr,train_l1,val_psnr,val_ssim\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%ld,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.lr,
                      r.train_l1, r.val_psnr, r.val_ssim);
        out << buf << "\n";
    }
}

template <typename Real>
TrainResult train_loop(GUNet<Real>& net, const Dataset& data, const TrainConfig& tc,
                       const std::string& best_checkpoint_path = "",
                       const std::function<void(const MetricsRow&)>& on_epoch = nullptr) {
    tc.validate();
    check_config(data.size() > 0, "train: empty dataset");

    // held-out split: the trailing ceil(val_fraction * n) images
    const int n_val = std::min<int>(static_cast<int>(data.size()) - 1,
                                    static_cast<int>(std::ceil(tc.val_fraction * data.size())));
    const int n_train = static_cast<int>(data.size()) - n_val;
    check_config(n_train >= 1, "train: no training images after validation split");

    TrainResult result;
    if (tc.epochs == 0) return result;

    ParamStore<Real> store = net.param_store();
    AdamW<Real> opt(store, tc);
    net.set_ghost_size(tc.ghost_norm_size);
    net.set_norm_mode(NormMode::Train);

    const long steps_per_epoch = tc.samples_per_epoch / tc.batch_size;
    const long total_steps = steps_per_epoch * tc.epochs;
    const long warmup_steps = steps_per_epoch * tc.warmup_epochs;
    const int frozen_start = tc.epochs - tc.frozen_bn_epochs;

    long global_step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const bool frozen = epoch >= frozen_start;
        net.set_norm_mode(frozen ? NormMode::Frozen : NormMode::Train);

        double loss_sum = 0;
        double last_lr = 0;
        for (long s = 0; s < steps_per_epoch; ++s) {
            // assemble the batch; crop RNG is derived from (seed, epoch, sample)
            Tensor<Real> hazy(tc.batch_size, 3, tc.crop, tc.crop);
            Tensor<Real> clean(tc.batch_size, 3, tc.crop, tc.crop);
            for (int b = 0; b < tc.batch_size; ++b) {
                const long sample = s * tc.batch_size + b;
                Rng rng(mix_seed(tc.seed, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(sample)));
                const int img = static_cast<int>(rng.uniform_int(n_train));
                const Tensor<double>& ch = data.hazy[img];
                const Tensor<double>& cc = data.clean[img];
                check_config(ch.h() >= tc.crop && ch.w() >= tc.crop,
                             "train: crop larger than dataset images");
                const int y0 = static_cast<int>(rng.uniform_int(ch.h() - tc.crop + 1));
                const int x0 = static_cast<int>(rng.uniform_int(ch.w() - tc.crop + 1));
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < tc.crop; ++y)
                        for (int x = 0; x < tc.crop; ++x) {
                            hazy.at(b, c, y, x) = static_cast<Real>(ch.at(0, c, y0 + y, x0 + x));
                            clean.at(b, c, y, x) = static_cast<Real>(cc.at(0, c, y0 + y, x0 + x));
                        }
            }

            // forward in the [-1,1] domain; J_hat = I + R/2 back in [0,1]
            Tensor<Real> net_in(hazy.shape);
            for (std::size_t i = 0; i < hazy.numel(); ++i)
                net_in.data[i] = Real(2) * hazy.data[i] - Real(1);
            const RunFlags rf{/*want_grad=*/true, /*update_stats=*/!frozen};
            Tensor<Real> residual = net.forward(net_in, rf);
            Tensor<Real> pred = hazy;
            for (std::size_t i = 0; i < pred.numel(); ++i)
                pred.data[i] += Real(0.5) * residual.data[i];
            const double loss = static_cast<double>(l1_loss(pred, clean));

            if (!std::isfinite(loss)) {
                const std::string layer =
                    net.first_nonfinite_layer(net_in, RunFlags{false, false});
                throw NumericError(
                    "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                    std::to_string(s) + "; first non-finite layer: " +
                    (layer.empty() ? "(loss only)" : layer));
            }

            Tensor<Real> grad_residual = l1_loss_grad(pred, clean);
            for (auto& g : grad_residual.data) g *= Real(0.5);
            store.zero_grads();
            (void)net.backward(grad_residual);
            clip_grad_norm(store, tc.grad_clip);

            ++global_step;
            last_lr = lr_schedule(global_step, total_steps, warmup_steps, tc.lr_init, tc.lr_min);
            opt.step(store, last_lr);
            loss_sum += loss;
        }

        // validation on the held-out tail, eval-mode statistics
        net.set_norm_mode(NormMode::Eval);
        double psnr_sum = 0, ssim_sum = 0;
        for (int i = n_train; i < static_cast<int>(data.size()); ++i) {
            Tensor<Real> hazy_img(data.hazy[i].shape);
            for (std::size_t t = 0; t < hazy_img.numel(); ++t)
                hazy_img.data[t] = static_cast<Real>(data.hazy[i].data[t]);
            Tensor<Real> out = net.dehaze(hazy_img);
            Tensor<double> out64(out.shape);
            for (std::size_t t = 0; t < out.numel(); ++t) {
                double v = static_cast<double>(out.data[t]);
                out64.data[t] = v < 0 ? 0 : (v > 1 ? 1 : v);
            }
            psnr_sum += psnr(out64, data.clean[i]);
            ssim_sum += ssim(out64, data.clean[i]);
        }
        net.set_norm_mode(frozen ? NormMode::Frozen : NormMode::Train);

        MetricsRow row;
        row.epoch = epoch;
        row.step = global_step;
        row.lr = last_lr;
        row.train_l1 = loss_sum / static_cast<double>(steps_per_epoch);
        row.val_psnr = n_val > 0 ? psnr_sum / n_val : 0;
        row.val_ssim = n_val > 0 ? ssim_sum / n_val : 0;
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);

        if (n_val == 0 || result.best_epoch < 0 || row.val_psnr > result.best_val_psnr) {
            result.best_val_psnr = row.val_psnr;
            result.best_epoch = epoch;
            if (!best_checkpoint_path.empty())
                save_checkpoint(store, net.config, best_checkpoint_path);
        }
    }
    return result;
}

inline ModelConfig model_config_from_canonical(const std::string& s) {
    ModelConfig cfg;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t end = s.find(';', pos);
        if (end == std::string::npos) end = s.size();
        const std::string kv = s.substr(pos, end - pos);
        const std::size_t eq = kv.find('=');
        if (eq != std::string::npos)
            apply_ablation(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        pos = end + 1;
    }
    cfg.validate();
    return cfg;
}

}  // namespace gunet
