#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optiq/common.hpp"
#include "optiq/image_io.hpp"
#include "optiq/metrics.hpp"
#include "optiq/network.hpp"
#include "optiq/optics.hpp"
#include "optiq/priors.hpp"
#include "optiq/scene.hpp"
#include "optiq/train.hpp"

namespace optiq {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) ok = true;
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T = float>
struct SimulateConfig {
    int count = 4;
    int height = 96;
    int width = 96;
    int bands = 8;
    int kernel_size = 9;
    int field_rows = 3;
    int field_cols = 3;
    int spectral_bands = 4;       // channels of the per-pixel spectral summary
    std::string scene = "random";  // "random" | "checkerboard"
    std::uint64_t seed = 0;
    PsfModelParams<T> psf;
    NoiseParams<T> noise;

    void validate() const {
        require_cfg(count >= 1, "count must be >= 1");
        require_cfg(height >= 8 && width >= 8, "scene must be at least 8x8");
        require_cfg(scene == "random" || scene == "checkerboard", "scene must be 'random' or 'checkerboard'");
        require_cfg(spectral_bands >= 1 && spectral_bands <= bands, "spectral_bands must lie in [1, bands]");
    }
};

template <typename T>
void from_json(const nlohmann::json& j, SimulateConfig<T>& c) {
    check_keys(j,
               {"count", "height", "width", "bands", "kernel_size", "field_rows", "field_cols", "spectral_bands",
                "scene", "seed", "psf", "noise"},
               "simulate config");
    SimulateConfig<T> d;
    c.count = j.value("count", d.count);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.bands = j.value("bands", d.bands);
    c.kernel_size = j.value("kernel_size", d.kernel_size);
    c.field_rows = j.value("field_rows", d.field_rows);
    c.field_cols = j.value("field_cols", d.field_cols);
    c.spectral_bands = j.value("spectral_bands", d.spectral_bands);
    c.scene = j.value("scene", d.scene);
    c.seed = j.value("seed", d.seed);
    if (j.contains("psf")) {
        const auto& p = j.at("psf");
        check_keys(p, {"sigma_center", "sigma_slope", "astig_ratio", "chroma_shift_slope"}, "psf");
        c.psf.sigma_center = p.value("sigma_center", double(d.psf.sigma_center));
        c.psf.sigma_slope = p.value("sigma_slope", double(d.psf.sigma_slope));
        c.psf.astig_ratio = p.value("astig_ratio", double(d.psf.astig_ratio));
        c.psf.chroma_shift_slope = p.value("chroma_shift_slope", double(d.psf.chroma_shift_slope));
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        check_keys(n, {"shot_gain", "read_sigma"}, "noise");
        c.noise.shot_gain = n.value("shot_gain", double(d.noise.shot_gain));
        c.noise.read_sigma = n.value("read_sigma", double(d.noise.read_sigma));
    }
}

template <typename T>
void to_json(nlohmann::json& j, const SimulateConfig<T>& c) {
    j = {{"count", c.count},
         {"height", c.height},
         {"width", c.width},
         {"bands", c.bands},
         {"kernel_size", c.kernel_size},
         {"field_rows", c.field_rows},
         {"field_cols", c.field_cols},
         {"spectral_bands", c.spectral_bands},
         {"scene", c.scene},
         {"seed", c.seed},
         {"psf",
          {{"sigma_center", c.psf.sigma_center},
           {"sigma_slope", c.psf.sigma_slope},
           {"astig_ratio", c.psf.astig_ratio},
           {"chroma_shift_slope", c.psf.chroma_shift_slope}}},
         {"noise", {{"shot_gain", c.noise.shot_gain}, {"read_sigma", c.noise.read_sigma}}}};
}

// ---- dataset synthesis ---------------------------------------------------------

// Renders `count` scene/degraded pairs with their prior stacks into out_dir and
// writes manifest.json. Fully deterministic in cfg.seed. Inputs are validated
// and the optical model built before anything is written.
template <typename T = float>
std::string simulate(const SimulateConfig<T>& cfg, const std::string& out_dir) {
    cfg.validate();
    PsfGrid<T> grid = build_psf_grid(cfg.psf, cfg.field_rows, cfg.field_cols, cfg.bands, cfg.kernel_size);
    validate_psf_grid(grid);
    SpectralResponse<T> resp = make_spectral_response<T>(cfg.bands);
    SfrSpec<T> sfr_spec;

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path base(out_dir);

    save_atsr(base / "psf_grid.atsr", grid.kernels);
    nlohmann::json resp_rows = nlohmann::json::array();
    for (int c = 0; c < 3; ++c) {
        nlohmann::json row = nlohmann::json::array();
        for (int b = 0; b < cfg.bands; ++b) row.push_back(double(resp.weights(c, b)));
        resp_rows.push_back(row);
    }
    nlohmann::json meta = {{"psf",
                            {{"sigma_center", cfg.psf.sigma_center},
                             {"sigma_slope", cfg.psf.sigma_slope},
                             {"astig_ratio", cfg.psf.astig_ratio},
                             {"chroma_shift_slope", cfg.psf.chroma_shift_slope}}},
                           {"noise", {{"shot_gain", cfg.noise.shot_gain}, {"read_sigma", cfg.noise.read_sigma}}},
                           {"bands", cfg.bands},
                           {"kernel_size", cfg.kernel_size},
                           {"field_rows", cfg.field_rows},
                           {"field_cols", cfg.field_cols},
                           {"response", resp_rows},
                           {"grid_path", "psf_grid.atsr"},
                           {"warnings", grid.warnings}};
    {
        std::ofstream out(base / "psf_meta.json");
        out << meta.dump(2) << "\n";
    }

    Rng master(cfg.seed);
    nlohmann::json manifest = nlohmann::json::array();
    for (int i = 0; i < cfg.count; ++i) {
        const std::uint64_t scene_seed = master.raw();
        const std::uint64_t noise_seed = master.raw();
        Tensor<T> sharp;
        if (cfg.scene == "checkerboard") {
            sharp = checkerboard<T>(cfg.height, cfg.width, 4 + i % 5);
        } else {
            Rng srng(scene_seed);
            sharp = random_scene<T>(cfg.height, cfg.width, srng);
        }
        RenderedPair<T> pair = make_pair(sharp, grid, resp, cfg.noise, noise_seed);
        PriorStack<T> priors =
            make_priors(grid, cfg.noise, pair.degraded, pair.spectral, sfr_spec, cfg.spectral_bands);
        validate_prior_stack(priors);

        std::ostringstream tag;
        tag << "item_" << std::setw(3) << std::setfill('0') << i;
        const std::string t = tag.str();
        write_png_rgb8((base / (t + "_sharp.png")).string(), pair.sharp);
        write_png_rgb8((base / (t + "_degraded.png")).string(), pair.degraded);
        save_atsr(base / (t + "_sharp.atsr"), pair.sharp);
        save_atsr(base / (t + "_degraded.atsr"), pair.degraded);
        save_atsr(base / (t + "_sfr.atsr"), priors.sfr);
        save_atsr(base / (t + "_fov.atsr"), priors.fov);
        save_atsr(base / (t + "_noise.atsr"), priors.noise);
        save_atsr(base / (t + "_spectral.atsr"), priors.spectral);

        nlohmann::json pj = nlohmann::json::array();
        auto describe = [&](const char* name, const Tensor<T>& tn, const char* role) {
            nlohmann::json shape = nlohmann::json::array();
            for (int d = 0; d < tn.ndim(); ++d) shape.push_back(tn.dim(d));
            pj.push_back(
                {{"name", name}, {"shape", shape}, {"role", role}, {"path", t + "_" + name + ".atsr"}});
        };
        describe("sfr", priors.sfr, "frequency response sampled per field position");
        describe("fov", priors.fov, "normalized field coordinates");
        describe("noise", priors.noise, "per-channel noise standard deviation");
        describe("spectral", priors.spectral, "band-averaged spectral energy fractions");
        {
            std::ofstream out(base / (t + "_priors.json"));
            out << pj.dump(2) << "\n";
        }

        manifest.push_back({{"sharp_path", t + "_sharp.atsr"},
                            {"degraded_path", t + "_degraded.atsr"},
                            {"psf_meta_path", "psf_meta.json"},
                            {"seed", noise_seed},
                            {"priors",
                             {{"sfr", t + "_sfr.atsr"},
                              {"fov", t + "_fov.atsr"},
                              {"noise", t + "_noise.atsr"},
                              {"spectral", t + "_spectral.atsr"}}}});
    }

    const std::string manifest_path = (base / "manifest.json").string();
    std::ofstream out(manifest_path);
    out << manifest.dump(2) << "\n";
    return manifest_path;
}

// ---- inference -----------------------------------------------------------------

// Loads a prior stack from its JSON manifest (entries {name, shape, role,
// path}); paths resolve relative to the manifest location. A missing entry or
// file is reported by prior name.
template <typename T = float>
PriorStack<T> load_prior_stack(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot read prior manifest " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("prior manifest " + json_path + " is not valid JSON: " + e.what());
    }
    if (!j.is_array()) throw DataError("prior manifest " + json_path + " must be a JSON array");
    const std::filesystem::path base = std::filesystem::path(json_path).parent_path();
    PriorStack<T> stack;
    for (const auto& name : prior_names()) {
        std::string rel;
        for (const auto& e : j)
            if (e.value("name", "") == name) rel = e.value("path", "");
        if (rel.empty()) throw DataError("prior manifest " + json_path + " is missing prior '" + name + "'");
        const auto p = std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel) : base / rel;
        if (!std::filesystem::exists(p)) throw DataError("prior '" + name + "' file not found: " + p.string());
        Tensor<T> t = load_atsr<T>(p);
        if (name == "sfr")
            stack.sfr = std::move(t);
        else if (name == "fov")
            stack.fov = std::move(t);
        else if (name == "noise")
            stack.noise = std::move(t);
        else
            stack.spectral = std::move(t);
    }
    return stack;
}

template <typename T>
Tensor<T> pad_replicate_to(const Tensor<T>& t, int unit) {
    const int H = t.dim(1), W = t.dim(2);
    const int Hp = (H + unit - 1) / unit * unit;
    const int Wp = (W + unit - 1) / unit * unit;
    if (Hp == H && Wp == W) return t;
    Tensor<T> out({t.dim(0), Hp, Wp});
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < Hp; ++y)
            for (int x = 0; x < Wp; ++x) out(c, y, x) = t(c, std::min(y, H - 1), std::min(x, W - 1));
    return out;
}

template <typename T>
Tensor<T> crop_to(const Tensor<T>& t, int H, int W) {
    if (t.dim(1) == H && t.dim(2) == W) return t;
    Tensor<T> out({t.dim(0), H, W});
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out(c, y, x) = t(c, y, x);
    return out;
}

// Runs the network at full resolution: pads input and priors to the alignment
// unit (replicating edges), restores, crops back, clamps to [0,1]. The code
// assignments made during inference are returned for activated-code counting.
template <typename T>
Tensor<T> restore_image(const RestoreNet<T>& net, Codebook<T>& book, const Tensor<T>& degraded,
                        const PriorStack<T>& priors, Tensor<int32_t>* indices_out = nullptr) {
    require(degraded.ndim() == 3 && degraded.dim(0) == 3, "restore expects a [3,H,W] image");
    const int H = degraded.dim(1), W = degraded.dim(2);
    const int unit = net.config().alignment_unit();
    PriorStack<T> padded;
    padded.sfr = pad_replicate_to(priors.sfr, unit);
    padded.fov = pad_replicate_to(priors.fov, unit);
    padded.noise = pad_replicate_to(priors.noise, unit);
    padded.spectral = pad_replicate_to(priors.spectral, unit);
    ForwardResult<T> fwd = net.forward(pad_replicate_to(degraded, unit), padded, book);
    if (indices_out) *indices_out = fwd.indices;
    return clamp01(crop_to(fwd.outputs[0].value(), H, W));
}

// ---- prior-correlation analysis --------------------------------------------------

struct AnalysisRow {
    std::string prior;
    int activated_codes = 0;
    double mean_psnr = 0;
    double mean_ssim = 0;
    double psnr_delta_vs_none = 0;
    double ssim_delta_vs_none = 0;
};

// Ablation sweep: restores every manifest image once per prior subset
// (everything, each prior alone, nothing) and reports distinct codebook usage
// plus mean quality. Deltas are against the all-zero baseline.
template <typename T = float>
std::vector<AnalysisRow> analyze_priors(const RestoreNet<T>& net, Codebook<T>& book,
                                        const std::vector<DatasetEntry>& manifest) {
    require(!manifest.empty(), "manifest is empty");
    std::vector<Sample<T>> samples;
    for (const auto& e : manifest) samples.push_back(load_sample<T>(e));

    const std::vector<std::string> modes = {"all", "sfr", "fov", "noise", "spectral", "none"};
    std::vector<AnalysisRow> rows;
    for (const auto& mode : modes) {
        AnalysisRow row;
        row.prior = mode;
        std::vector<Tensor<int32_t>> fields;
        double psum = 0, ssum = 0;
        for (const auto& s : samples) {
            Tensor<int32_t> idx;
            Tensor<T> restored = restore_image(net, book, s.degraded, zero_out(s.priors, mode), &idx);
            fields.push_back(idx);
            psum += psnr(restored, s.sharp);
            ssum += ssim(restored, s.sharp);
        }
        row.activated_codes = count_activated(fields, book);
        row.mean_psnr = psum / samples.size();
        row.mean_ssim = ssum / samples.size();
        rows.push_back(row);
    }
    const AnalysisRow& none = rows.back();
    for (auto& r : rows) {
        r.psnr_delta_vs_none = r.mean_psnr - none.mean_psnr;
        r.ssim_delta_vs_none = r.mean_ssim - none.mean_ssim;
    }
    return rows;
}

inline void write_analysis_csv(const std::vector<AnalysisRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "prior,activated_codes,mean_psnr,mean_ssim,psnr_delta_vs_none,ssim_delta_vs_none\n";
    for (const auto& r : rows)
        out << r.prior << "," << r.activated_codes << "," << format_metric(r.mean_psnr) << ","
            << format_metric(r.mean_ssim) << "," << format_metric(r.psnr_delta_vs_none) << ","
            << format_metric(r.ssim_delta_vs_none) << "\n";
}

}  // namespace optiq
