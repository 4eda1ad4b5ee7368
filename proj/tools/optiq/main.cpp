#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "optiq/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw optiq::DataError("cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw optiq::ConfigError(path + " is not valid JSON: " + e.what());
    }
    return j;
}

// images load by extension: .png as 8-bit RGB, anything else as an ATSR tensor
optiq::Tensor<float> read_image(const std::string& path) {
    if (!fs::exists(path)) throw optiq::DataError("file not found: " + path);
    if (fs::path(path).extension() == ".png") return optiq::read_png_rgb8(path);
    return optiq::load_atsr<float>(path);
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, bool seed_set, std::uint64_t seed) {
    json j = read_json_file(config_path);
    optiq::SimulateConfig<float> cfg;
    try {
        cfg = j.get<optiq::SimulateConfig<float>>();
    } catch (const json::exception& e) {
        throw optiq::ConfigError(std::string("bad value in ") + config_path + ": " + e.what());
    }
    if (seed_set) cfg.seed = seed;
    const std::string manifest = optiq::simulate(cfg, out_dir);
    std::cout << manifest << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path, const std::string& out_dir,
              bool seed_set, std::uint64_t seed) {
    optiq::TrainConfig tcfg;
    optiq::NetConfig ncfg;
    if (!config_path.empty()) {
        json j = read_json_file(config_path);
        optiq::check_keys(j, {"train", "net"}, "train config");
        try {
            if (j.contains("train")) {
                optiq::check_keys(j.at("train"),
                                  {"lr", "beta1", "beta2", "epsilon", "batch_size", "crop", "epochs", "halve_every",
                                   "seed", "max_steps", "val_holdout", "dead_code_threshold"},
                                  "train section");
                tcfg = j.at("train").get<optiq::TrainConfig>();
            }
            if (j.contains("net")) {
                optiq::check_keys(j.at("net"),
                                  {"scales", "base_channels", "prior_hidden", "d_z", "K", "mff_channels", "use_mff"},
                                  "net section");
                ncfg = j.at("net").get<optiq::NetConfig>();
            }
        } catch (const json::exception& e) {
            throw optiq::ConfigError(std::string("bad value in ") + config_path + ": " + e.what());
        }
    }
    if (seed_set) tcfg.seed = seed;
    tcfg.validate();
    ncfg.validate();
    auto manifest = optiq::load_manifest(manifest_path);
    optiq::TrainResult<float> result = optiq::train<float>(manifest, tcfg, ncfg, out_dir, &std::cout);
    std::cout << result.checkpoint_dir << "\n";
    return 0;
}

int cmd_restore(const std::string& degraded_path, const std::string& priors_path, const std::string& checkpoint,
                const std::string& out_path, const std::string& keep_prior) {
    optiq::Tensor<float> degraded = read_image(degraded_path);
    optiq::PriorStack<float> priors = optiq::load_prior_stack<float>(priors_path);
    if (keep_prior != "all") priors = optiq::zero_out(priors, keep_prior);
    optiq::Checkpoint<float> ckpt = optiq::load_checkpoint<float>(checkpoint);
    optiq::Tensor<float> restored = optiq::restore_image(ckpt.net, ckpt.book, degraded, priors);
    const fs::path out(out_path);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    if (out.extension() == ".png") {
        optiq::write_png_rgb8(out.string(), restored);
        optiq::save_atsr(fs::path(out).replace_extension(".atsr"), restored);
    } else {
        optiq::save_atsr(out, restored);
        optiq::write_png_rgb8(fs::path(out).replace_extension(".png").string(), restored);
    }
    return 0;
}

int cmd_analyze(const std::string& checkpoint, const std::string& manifest_path, const std::string& out_path) {
    auto manifest = optiq::load_manifest(manifest_path);
    optiq::Checkpoint<float> ckpt = optiq::load_checkpoint<float>(checkpoint);
    auto rows = optiq::analyze_priors(ckpt.net, ckpt.book, manifest);
    const fs::path out(out_path);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    optiq::write_analysis_csv(rows, out_path);
    std::cout << out_path << "\n";
    return 0;
}

int cmd_metrics(const std::string& restored_path, const std::string& reference_path) {
    optiq::Tensor<float> a = read_image(restored_path);
    optiq::Tensor<float> b = read_image(reference_path);
    const double p = optiq::psnr(a, b);
    const double s = optiq::ssim(a, b);
    json j;
    if (std::isinf(p))
        j["psnr"] = "inf";
    else
        j["psnr"] = p;
    j["ssim"] = s;
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prior-guided optical aberration correction toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, manifest_path, checkpoint, keep_prior = "all";
    std::string degraded_path, priors_path, restored_path, reference_path;
    std::uint64_t seed = 0;
    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "override the config seed"); };

    CLI::App* sim = app.add_subcommand("simulate", "render a degraded dataset with prior stacks");
    sim->add_option("--config", config_path, "simulate config JSON")->required();
    sim->add_option("--out", out_path, "output directory")->required();
    add_seed(sim);

    CLI::App* tr = app.add_subcommand("train", "train the restoration network");
    tr->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
    tr->add_option("--config", config_path, "train/net config JSON");
    tr->add_option("--out", out_path, "output directory")->required();
    add_seed(tr);

    CLI::App* re = app.add_subcommand("restore", "restore one degraded image");
    re->add_option("degraded", degraded_path, "degraded image (.png or .atsr)")->required();
    re->add_option("priors", priors_path, "prior stack JSON manifest")->required();
    re->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    re->add_option("--out", out_path, "output image path")->required();
    re->add_option("--keep-prior", keep_prior, "zero all priors except this one (all|none|sfr|fov|noise|spectral)");

    CLI::App* an = app.add_subcommand("analyze-priors", "prior ablation report over a dataset");
    an->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    an->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
    an->add_option("--out", out_path, "output CSV path")->required();

    CLI::App* me = app.add_subcommand("metrics", "psnr/ssim between two images");
    me->add_option("restored", restored_path, "restored image")->required();
    me->add_option("reference", reference_path, "reference image")->required();

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return cmd_simulate(config_path, out_path, sim->count("--seed") > 0, seed);
        if (tr->parsed()) return cmd_train(manifest_path, config_path, out_path, tr->count("--seed") > 0, seed);
        if (re->parsed()) return cmd_restore(degraded_path, priors_path, checkpoint, out_path, keep_prior);
        if (an->parsed()) return cmd_analyze(checkpoint, manifest_path, out_path);
        if (me->parsed()) return cmd_metrics(restored_path, reference_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const optiq::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const optiq::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const optiq::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const optiq::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
