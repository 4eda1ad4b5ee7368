#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optiq/codebook.hpp"
#include "optiq/common.hpp"
#include "optiq/metrics.hpp"
#include "optiq/network.hpp"
#include "optiq/priors.hpp"
#include "optiq/tensor_io.hpp"

namespace optiq {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 4;
    int crop = 64;
    int epochs = 50;
    int halve_every = 50;
    std::uint64_t seed = 0;
    int max_steps = 0;    // stop after this many optimizer steps; 0 = run all epochs
    int val_holdout = 2;  // manifest entries held out from the end for validation
    std::int64_t dead_code_threshold = 1;

    void validate() const {
        require_cfg(lr > 0, "lr must be positive");
        require_cfg(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0,1)");
        require_cfg(epsilon > 0, "epsilon must be positive");
        require_cfg(batch_size >= 1 && crop >= 1 && epochs >= 1 && halve_every >= 1, "sizes must be positive");
        require_cfg(val_holdout >= 0 && max_steps >= 0 && dead_code_threshold >= 0, "counts must be nonnegative");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"batch_size", c.batch_size},
         {"crop", c.crop},
         {"epochs", c.epochs},
         {"halve_every", c.halve_every},
         {"seed", c.seed},
         {"max_steps", c.max_steps},
         {"val_holdout", c.val_holdout},
         {"dead_code_threshold", c.dead_code_threshold}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.crop = j.value("crop", d.crop);
    c.epochs = j.value("epochs", d.epochs);
    c.halve_every = j.value("halve_every", d.halve_every);
    c.seed = j.value("seed", d.seed);
    c.max_steps = j.value("max_steps", d.max_steps);
    c.val_holdout = j.value("val_holdout", d.val_holdout);
    c.dead_code_threshold = j.value("dead_code_threshold", d.dead_code_threshold);
}

inline double lr_at(const TrainConfig& cfg, int epoch) {
    return cfg.lr * std::pow(0.5, epoch / cfg.halve_every);
}

// Adam with bias correction over a fixed parameter list. Parameters that took
// no part in the last backward pass (empty gradient) are treated as zero-grad.
template <typename T = float>
class Adam {
  public:
    Adam(std::vector<std::pair<std::string, Var<T>>> params, double beta1, double beta2, double eps)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& [name, p] : params)
            slots_.push_back({name, p, Tensor<T>(p.value().shape()), Tensor<T>(p.value().shape())});
    }

    long long step_count() const { return step_; }

    void step(double lr_t) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, double(step_));
        const double bc2 = 1.0 - std::pow(beta2_, double(step_));
        for (auto& s : slots_) {
            Tensor<T>& p = s.param.value();
            const Tensor<T>& g = s.param.node()->grad;
            const bool has_grad = g.numel() == p.numel();
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = has_grad ? double(g[i]) : 0.0;
                if (!std::isfinite(gi)) throw NumericError("non-finite gradient in parameter '" + s.name + "'");
                const double m = beta1_ * double(s.m[i]) + (1.0 - beta1_) * gi;
                const double v = beta2_ * double(s.v[i]) + (1.0 - beta2_) * gi * gi;
                s.m[i] = static_cast<T>(m);
                s.v[i] = static_cast<T>(v);
                p[i] = static_cast<T>(double(p[i]) - lr_t * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

  private:
    struct Slot {
        std::string name;
        Var<T> param;
        Tensor<T> m, v;
    };
    std::vector<Slot> slots_;
    long long step_ = 0;
    double beta1_, beta2_, eps_;
};

// ---- dataset -----------------------------------------------------------------

struct DatasetEntry {
    std::string sharp_path;
    std::string degraded_path;
    std::string psf_meta_path;
    std::uint64_t seed = 0;
    std::string sfr_path, fov_path, noise_path, spectral_path;
};

inline std::vector<DatasetEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_array()) throw DataError("manifest " + path + " must be a JSON array");
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        return std::filesystem::path(p).is_absolute() ? p : (base / p).string();
    };
    std::vector<DatasetEntry> entries;
    for (const auto& e : j) {
        DatasetEntry d;
        d.sharp_path = resolve(e.at("sharp_path"));
        d.degraded_path = resolve(e.at("degraded_path"));
        d.psf_meta_path = resolve(e.at("psf_meta_path"));
        d.seed = e.at("seed");
        const auto& pr = e.at("priors");
        d.sfr_path = resolve(pr.at("sfr"));
        d.fov_path = resolve(pr.at("fov"));
        d.noise_path = resolve(pr.at("noise"));
        d.spectral_path = resolve(pr.at("spectral"));
        entries.push_back(std::move(d));
    }
    return entries;
}

template <typename T = float>
struct Sample {
    Tensor<T> sharp;
    Tensor<T> degraded;
    PriorStack<T> priors;
};

template <typename T>
Sample<T> load_sample(const DatasetEntry& e) {
    Sample<T> s;
    s.sharp = load_atsr<T>(e.sharp_path);
    s.degraded = load_atsr<T>(e.degraded_path);
    s.priors.sfr = load_atsr<T>(e.sfr_path);
    s.priors.fov = load_atsr<T>(e.fov_path);
    s.priors.noise = load_atsr<T>(e.noise_path);
    s.priors.spectral = load_atsr<T>(e.spectral_path);
    check_same_shape(s.sharp, s.degraded, "sample images");
    require(s.priors.sfr.dim(1) == s.degraded.dim(1) && s.priors.sfr.dim(2) == s.degraded.dim(2),
            "priors do not match the image size in " + e.degraded_path);
    return s;
}

template <typename T>
Sample<T> crop_sample(const Sample<T>& s, int y, int x, int size) {
    auto cut = [&](const Tensor<T>& t) {
        Tensor<T> out({t.dim(0), size, size});
        for (int c = 0; c < t.dim(0); ++c)
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) out(c, i, j) = t(c, y + i, x + j);
        return out;
    };
    Sample<T> out;
    out.sharp = cut(s.sharp);
    out.degraded = cut(s.degraded);
    out.priors.sfr = cut(s.priors.sfr);
    out.priors.fov = cut(s.priors.fov);
    out.priors.noise = cut(s.priors.noise);
    out.priors.spectral = cut(s.priors.spectral);
    return out;
}

// ---- training loop -----------------------------------------------------------

struct LogRow {
    int epoch = 0;
    double lr = 0, content_loss = 0, align_loss = 0, total_loss = 0;
    double val_psnr = 0, val_ssim = 0;
    int activated_codes = 0;
};

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(8);
    os << v;
    return os.str();
}

inline void write_log_csv(const std::vector<LogRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "epoch,lr,content_loss,align_loss,total_loss,val_psnr,val_ssim,activated_codes\n";
    for (const auto& r : rows)
        out << r.epoch << "," << format_metric(r.lr) << "," << format_metric(r.content_loss) << ","
            << format_metric(r.align_loss) << "," << format_metric(r.total_loss) << "," << format_metric(r.val_psnr)
            << "," << format_metric(r.val_ssim) << "," << r.activated_codes << "\n";
}

template <typename T = float>
struct TrainResult {
    std::vector<LogRow> log;
    std::string checkpoint_dir;
};

// Deterministic single-threaded loop: per step, batch_size random crops are
// drawn from the training split, their mean total loss is backpropagated, and
// Adam updates all parameters including the codebook. Validation runs on the
// held-out tail after every epoch; unused codebook entries are re-seeded from
// the last batch's encoder outputs.
template <typename T = float>
TrainResult<T> train(const std::vector<DatasetEntry>& manifest, const TrainConfig& tcfg, const NetConfig& ncfg,
                     const std::string& out_dir, std::ostream* progress = nullptr) {
    tcfg.validate();
    ncfg.validate();
    if (manifest.empty()) throw DataError("manifest is empty");
    require_cfg(tcfg.crop % ncfg.alignment_unit() == 0, "crop " + std::to_string(tcfg.crop) +
                                                            " not divisible by the alignment unit " +
                                                            std::to_string(ncfg.alignment_unit()));

    std::vector<Sample<T>> samples;
    for (const auto& e : manifest) samples.push_back(load_sample<T>(e));
    const int holdout = std::min<int>(tcfg.val_holdout, static_cast<int>(samples.size()) - 1);
    const int n_train = static_cast<int>(samples.size()) - holdout;
    for (const auto& s : samples)
        require(s.degraded.dim(1) >= tcfg.crop && s.degraded.dim(2) >= tcfg.crop,
                "image smaller than the crop size");

    Rng rng(tcfg.seed);
    PriorChannels pc;
    pc.sfr = samples[0].priors.sfr.dim(0);
    pc.fov = samples[0].priors.fov.dim(0);
    pc.noise = samples[0].priors.noise.dim(0);
    pc.spectral = samples[0].priors.spectral.dim(0);
    RestoreNet<T> net(ncfg, pc, rng);
    Codebook<T> book = make_codebook<T>(ncfg.K, ncfg.d_z, rng);

    auto opt_params = net.params().items;
    opt_params.emplace_back("codebook", book.entries);
    Adam<T> adam(opt_params, tcfg.beta1, tcfg.beta2, tcfg.epsilon);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream crops_log(fs::path(out_dir) / "crops.csv");
    crops_log << "step,entry,crop_y,crop_x\n";

    TrainResult<T> result;
    const int steps_per_epoch = (n_train + tcfg.batch_size - 1) / tcfg.batch_size;
    int step = 0;
    bool stop = false;

    for (int epoch = 0; epoch < tcfg.epochs && !stop; ++epoch) {
        const double lr_t = lr_at(tcfg, epoch);
        double sum_content = 0, sum_align = 0, sum_total = 0;
        int logged_steps = 0;
        Tensor<T> last_batch_codes;

        for (int bs = 0; bs < steps_per_epoch && !stop; ++bs) {
            Var<T> batch_loss;
            double batch_content = 0, batch_align = 0;
            std::vector<Tensor<T>> code_fields;
            for (int b = 0; b < tcfg.batch_size; ++b) {
                const int ei = n_train == 1 ? 0 : rng.uniform_int(0, n_train - 1);
                const Sample<T>& s = samples[ei];
                const int maxy = s.degraded.dim(1) - tcfg.crop, maxx = s.degraded.dim(2) - tcfg.crop;
                const int cy = maxy > 0 ? rng.uniform_int(0, maxy) : 0;
                const int cx = maxx > 0 ? rng.uniform_int(0, maxx) : 0;
                crops_log << step << "," << ei << "," << cy << "," << cx << "\n";
                Sample<T> crop = crop_sample(s, cy, cx, tcfg.crop);

                ForwardResult<T> fwd = net.forward(crop.degraded, crop.priors, book);
                Var<T> closs = content_loss(fwd.outputs, build_pyramid(crop.sharp, ncfg.scales));
                Var<T> aloss = alignment_loss(fwd.z_hat, fwd.indices, book);
                Var<T> tloss = total_loss(closs, aloss);
                batch_content += double(closs.value()[0]);
                batch_align += double(aloss.value()[0]);
                batch_loss = b == 0 ? tloss : batch_loss + tloss;
                code_fields.push_back(fwd.z_hat.value());
            }
            batch_loss = batch_loss * (T(1) / T(tcfg.batch_size));
            backward(batch_loss);
            adam.step(lr_t);

            // flatten the batch's encoder outputs to [n, d_z] for dead-code reseeding
            const int dz = ncfg.d_z;
            int n_codes = 0;
            for (const auto& f : code_fields) n_codes += f.dim(1) * f.dim(2);
            last_batch_codes = Tensor<T>({n_codes, dz});
            int row = 0;
            for (const auto& f : code_fields)
                for (int y = 0; y < f.dim(1); ++y)
                    for (int x = 0; x < f.dim(2); ++x, ++row)
                        for (int c = 0; c < dz; ++c) last_batch_codes(row, c) = f(c, y, x);

            sum_content += batch_content / tcfg.batch_size;
            sum_align += batch_align / tcfg.batch_size;
            sum_total += double(batch_loss.value()[0]);
            ++logged_steps;
            ++step;
            if (tcfg.max_steps > 0 && step >= tcfg.max_steps) stop = true;
        }

        LogRow row;
        row.epoch = epoch;
        row.lr = lr_t;
        row.content_loss = sum_content / std::max(1, logged_steps);
        row.align_loss = sum_align / std::max(1, logged_steps);
        row.total_loss = sum_total / std::max(1, logged_steps);

        if (holdout > 0) {
            double psnr_sum = 0, ssim_sum = 0;
            std::vector<Tensor<int32_t>> index_fields;
            for (int v = n_train; v < static_cast<int>(samples.size()); ++v) {
                const Sample<T>& s = samples[v];
                ForwardResult<T> fwd = net.forward(s.degraded, s.priors, book);
                Tensor<T> restored = clamp01(fwd.outputs[0].value());
                psnr_sum += psnr(restored, s.sharp);
                ssim_sum += ssim(restored, s.sharp);
                index_fields.push_back(fwd.indices);
            }
            row.val_psnr = psnr_sum / holdout;
            row.val_ssim = ssim_sum / holdout;
            row.activated_codes = count_activated(index_fields, book);
        } else {
            row.val_psnr = std::nan("");
            row.val_ssim = std::nan("");
            row.activated_codes = 0;
        }

        if (last_batch_codes.numel() > 0) reset_dead_codes(book, last_batch_codes, tcfg.dead_code_threshold, rng);

        result.log.push_back(row);
        if (progress)
            *progress << "epoch " << epoch << " lr " << format_metric(row.lr) << " total " << format_metric(row.total_loss)
                      << " val_psnr " << format_metric(row.val_psnr) << " codes " << row.activated_codes << "\n";
    }

    write_log_csv(result.log, (fs::path(out_dir) / "log.csv").string());
    result.checkpoint_dir = (fs::path(out_dir) / "checkpoint").string();
    save_checkpoint(net, book, result.checkpoint_dir);
    write_usage_csv(book, (fs::path(out_dir) / "codebook_usage.csv").string());
    return result;
}

}  // namespace optiq
