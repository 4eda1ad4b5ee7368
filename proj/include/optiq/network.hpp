#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optiq/autodiff.hpp"
#include "optiq/codebook.hpp"
#include "optiq/common.hpp"
#include "optiq/priors.hpp"
#include "optiq/tensor.hpp"
#include "optiq/tensor_io.hpp"

namespace optiq {

struct NetConfig {
    int scales = 3;
    int base_channels = 16;
    int prior_hidden = 8;  // hidden width inside each prior encoder
    int d_z = 64;
    int K = 128;
    int mff_channels = 16;
    bool use_mff = true;

    int channels(int s) const { return base_channels << s; }
    // the code field always sits at input/8 (three stride-2 prior-encoder
    // stages), so the restoration bottleneck needs 4-scales extra stride-2
    // steps to reach it
    int bottleneck_steps() const { return 4 - scales; }
    int alignment_unit() const { return 8 * (1 << (scales - 1)); }

    void validate() const {
        require_cfg(scales >= 2 && scales <= 4, "scales must be in [2,4]");
        require_cfg(base_channels > 0 && prior_hidden > 0 && d_z > 0 && K > 0 && mff_channels > 0,
                    "channel counts must be positive");
        require_cfg(d_z % 4 == 0, "d_z must divide evenly across the 4 prior encoders");
        if (use_mff) {
            const int max_ratio = 1 << (scales - 1);
            require_cfg(mff_channels % (max_ratio * max_ratio) == 0,
                        "mff_channels must be divisible by " + std::to_string(max_ratio * max_ratio) +
                            " for the deepest shuffle ratio");
        }
    }
};

inline void to_json(nlohmann::json& j, const NetConfig& c) {
    j = {{"scales", c.scales},   {"base_channels", c.base_channels}, {"prior_hidden", c.prior_hidden},
         {"d_z", c.d_z},         {"K", c.K},                         {"mff_channels", c.mff_channels},
         {"use_mff", c.use_mff}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
    c.scales = j.value("scales", 3);
    c.base_channels = j.value("base_channels", 16);
    c.prior_hidden = j.value("prior_hidden", 8);
    c.d_z = j.value("d_z", 64);
    c.K = j.value("K", 128);
    c.mff_channels = j.value("mff_channels", 16);
    c.use_mff = j.value("use_mff", true);
}

template <typename T = float>
struct ScalePyramid {
    std::vector<Tensor<T>> images;  // [3, H/2^k, W/2^k] for k = 0..scales-1
};

// non-differentiating 2x box average, for ground-truth pyramids
template <typename T>
Tensor<T> downsample_area2_t(const Tensor<T>& x) {
    require(x.ndim() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, "downsample needs even dims");
    const int C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
    Tensor<T> out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                out(c, h, w) = static_cast<T>(
                    (double(x(c, 2 * h, 2 * w)) + double(x(c, 2 * h, 2 * w + 1)) + double(x(c, 2 * h + 1, 2 * w)) +
                     double(x(c, 2 * h + 1, 2 * w + 1))) /
                    4.0);
    return out;
}

template <typename T>
ScalePyramid<T> build_pyramid(const Tensor<T>& img, int scales) {
    ScalePyramid<T> pyr;
    pyr.images.push_back(img);
    for (int s = 1; s < scales; ++s) pyr.images.push_back(downsample_area2_t(pyr.images.back()));
    return pyr;
}

template <typename T = float>
struct ParamStore {
    std::vector<std::pair<std::string, Var<T>>> items;

    Var<T> add(const std::string& name, Tensor<T> init) {
        for (const auto& [n, v] : items) require(n != name, "duplicate parameter " + name);
        items.emplace_back(name, Var<T>::leaf(std::move(init), true, name));
        return items.back().second;
    }
    const Var<T>& get(const std::string& name) const {
        for (const auto& [n, v] : items)
            if (n == name) return v;
        throw ShapeError("unknown parameter " + name);
    }
    std::size_t count() const { return items.size(); }
};

template <typename T = float>
struct ForwardResult {
    std::vector<Var<T>> outputs;  // scale 0 (full res) .. scales-1
    Tensor<int32_t> indices;      // code assignments at the bottleneck
    Var<T> z_hat;                 // concatenated prior-encoder output [d_z, H/8, W/8]

    ScalePyramid<T> pyramid() const {
        ScalePyramid<T> p;
        for (const auto& o : outputs) p.images.push_back(o.value());
        return p;
    }
};

// channel counts of the four priors, in canonical order (sfr, fov, noise, spectral)
struct PriorChannels {
    int sfr = 0;
    int fov = 2;
    int noise = 1;
    int spectral = 0;

    std::vector<std::pair<std::string, int>> list() const {
        return {{"sfr", sfr}, {"fov", fov}, {"noise", noise}, {"spectral", spectral}};
    }
};

inline void to_json(nlohmann::json& j, const PriorChannels& p) {
    j = {{"sfr", p.sfr}, {"fov", p.fov}, {"noise", p.noise}, {"spectral", p.spectral}};
}

inline void from_json(const nlohmann::json& j, PriorChannels& p) {
    p.sfr = j.at("sfr");
    p.fov = j.at("fov");
    p.noise = j.at("noise");
    p.spectral = j.at("spectral");
}

// Multi-scale restoration model: four prior encoders feed a quantized code
// field that is fused into the restoration branch at its lowest scale; the
// decoder emits a residual-corrected image at every scale.
template <typename T = float>
class RestoreNet {
  public:
    RestoreNet(NetConfig cfg, PriorChannels priors, Rng& rng) : cfg_(cfg), priors_(priors) {
        cfg_.validate();
        require(priors_.sfr > 0 && priors_.fov > 0 && priors_.noise > 0 && priors_.spectral > 0,
                "all prior channel counts must be positive");
        build(rng);
    }

    const NetConfig& config() const { return cfg_; }
    const PriorChannels& prior_channels() const { return priors_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    // three stride-2 conv+relu stages per prior, concatenated to d_z channels
    Var<T> encode_priors(const PriorStack<T>& stack) const {
        const Tensor<T>* planes[4] = {&stack.sfr, &stack.fov, &stack.noise, &stack.spectral};
        std::vector<Var<T>> parts;
        int pi = 0;
        for (const auto& [name, ch] : priors_.list()) {
            const Tensor<T>& t = *planes[pi++];
            require(t.dim(0) == ch, "prior '" + name + "' has " + std::to_string(t.dim(0)) + " planes, expected " +
                                        std::to_string(ch));
            Var<T> x = constant(t);
            for (int s = 0; s < 3; ++s) x = relu(conv_layer(x, "pe." + name + "." + std::to_string(s), 2));
            parts.push_back(x);
        }
        return concat(parts, 0);
    }

    ForwardResult<T> forward(const Tensor<T>& degraded, const PriorStack<T>& stack, Codebook<T>& book) const {
        require(degraded.ndim() == 3 && degraded.dim(0) == 3, "forward expects a [3,H,W] image");
        const int H = degraded.dim(1), W = degraded.dim(2);
        const int unit = cfg_.alignment_unit();
        if (H % unit != 0 || W % unit != 0)
            throw ShapeError("input dims " + std::to_string(H) + "x" + std::to_string(W) +
                             " not divisible by alignment unit " + std::to_string(unit));
        require(stack.sfr.dim(1) == H && stack.sfr.dim(2) == W, "prior stack does not match the input size");
        require(book.dim() == cfg_.d_z, "codebook dimension mismatch");
        const int S = cfg_.scales;

        ForwardResult<T> res;
        res.z_hat = encode_priors(stack);
        QuantizeResult<T> q = quantize(chw_to_hwc(res.z_hat.value()), book);
        res.indices = q.indices;
        Var<T> zst = straight_through(res.z_hat, hwc_to_chw(q.z_q));

        // restoration encoder
        std::vector<Var<T>> f(S);
        Var<T> x = res_block(relu(conv_layer(constant(degraded), "enc0", 1)), "enc0.rb");
        f[0] = x;
        for (int s = 1; s < S; ++s) {
            x = res_block(relu(conv_layer(x, "enc" + std::to_string(s), 2)), "enc" + std::to_string(s) + ".rb");
            f[s] = x;
        }

        // bottleneck: descend to the code field, fuse the quantized priors
        for (int i = 0; i < cfg_.bottleneck_steps(); ++i)
            x = relu(conv_layer(x, "bneck" + std::to_string(i), 2));
        x = res_block(relu(conv_layer(concat<T>({x, zst}, 0), "fuse", 1)), "fuse.rb");
        for (int i = 0; i < cfg_.bottleneck_steps(); ++i)
            x = relu(pixel_shuffle(conv_layer(x, "bup" + std::to_string(i), 1), 2));

        // decoder with per-scale fused skips and residual heads
        const ScalePyramid<T> base = build_pyramid(degraded, S);
        res.outputs.resize(S);
        for (int s = S - 1; s >= 0; --s) {
            Var<T> skip = cfg_.use_mff ? mff(f, s) : f[s];
            x = res_block(relu(conv_layer(concat<T>({x, skip}, 0), "dec" + std::to_string(s) + ".red", 1)),
                          "dec" + std::to_string(s) + ".rb");
            res.outputs[s] = conv_layer(x, "head" + std::to_string(s), 1) + constant(base.images[s]);
            if (s > 0) x = relu(pixel_shuffle(conv_layer(x, "up" + std::to_string(s), 1), 2));
        }
        return res;
    }

    // every encoder scale channel-adjusted, resampled to scale s, concatenated
    // and reduced by a 3x3 conv
    Var<T> mff(const std::vector<Var<T>>& f, int s) const {
        std::vector<Var<T>> parts;
        for (int t = 0; t < cfg_.scales; ++t) {
            Var<T> a = conv_layer(f[t], "mff" + std::to_string(s) + ".adj" + std::to_string(t), 1);
            if (t < s)
                a = pixel_unshuffle(a, 1 << (s - t));
            else if (t > s)
                a = pixel_shuffle(a, 1 << (t - s));
            parts.push_back(a);
        }
        return conv_layer(concat(parts, 0), "mff" + std::to_string(s) + ".red", 1);
    }

  private:
    NetConfig cfg_;
    PriorChannels priors_;
    ParamStore<T> store_;

    Var<T> conv_layer(const Var<T>& x, const std::string& name, int stride) const {
        return bias_add(conv2d(x, store_.get(name + ".w"), stride), store_.get(name + ".b"));
    }

    Var<T> res_block(const Var<T>& x, const std::string& name) const {
        return x + conv_layer(relu(conv_layer(x, name + ".c1", 1)), name + ".c2", 1);
    }

    void add_conv(Rng& rng, const std::string& name, int cout, int cin, int k, T gain = T(1)) {
        // fan-in uniform bound sized for relu chains (keeps activation variance
        // roughly constant with depth); `gain` shrinks the residual heads
        const T bound = gain * static_cast<T>(std::sqrt(6.0 / (double(cin) * k * k)));
        store_.add(name + ".w", random_uniform<T>({cout, cin, k, k}, rng, -bound, bound));
        store_.add(name + ".b", Tensor<T>({cout}, T(0)));
    }

    void add_res_block(Rng& rng, const std::string& name, int c) {
        add_conv(rng, name + ".c1", c, c, 3);
        add_conv(rng, name + ".c2", c, c, 3);
    }

    void build(Rng& rng) {
        const int S = cfg_.scales, dz = cfg_.d_z, ph = cfg_.prior_hidden;

        for (const auto& [name, ch] : priors_.list()) {
            add_conv(rng, "pe." + name + ".0", ph, ch, 3);
            add_conv(rng, "pe." + name + ".1", ph, ph, 3);
            add_conv(rng, "pe." + name + ".2", dz / 4, ph, 3);
        }

        add_conv(rng, "enc0", cfg_.channels(0), 3, 3);
        add_res_block(rng, "enc0.rb", cfg_.channels(0));
        for (int s = 1; s < S; ++s) {
            add_conv(rng, "enc" + std::to_string(s), cfg_.channels(s), cfg_.channels(s - 1), 3);
            add_res_block(rng, "enc" + std::to_string(s) + ".rb", cfg_.channels(s));
        }

        int bc = cfg_.channels(S - 1);
        for (int i = 0; i < cfg_.bottleneck_steps(); ++i) {
            add_conv(rng, "bneck" + std::to_string(i), dz, bc, 3);
            bc = dz;
        }
        add_conv(rng, "fuse", dz, bc + dz, 1);
        add_res_block(rng, "fuse.rb", dz);
        int uc = dz;
        for (int i = 0; i < cfg_.bottleneck_steps(); ++i) {
            const int out = i == cfg_.bottleneck_steps() - 1 ? cfg_.channels(S - 1) : dz;
            add_conv(rng, "bup" + std::to_string(i), out * 4, uc, 1);
            uc = out;
        }

        if (cfg_.use_mff)
            for (int s = 0; s < S; ++s) {
                for (int t = 0; t < S; ++t) {
                    int adj = cfg_.mff_channels;
                    if (t < s) adj /= 1 << (2 * (s - t));        // unshuffle multiplies channels back
                    else if (t > s) adj *= 1 << (2 * (t - s));   // shuffle divides them
                    add_conv(rng, "mff" + std::to_string(s) + ".adj" + std::to_string(t), adj, cfg_.channels(t), 1);
                }
                add_conv(rng, "mff" + std::to_string(s) + ".red", cfg_.channels(s), cfg_.scales * cfg_.mff_channels, 3);
            }

        for (int s = S - 1; s >= 0; --s) {
            // both skip variants (mff reduce / identity passthrough) carry channels(s)
            const int c = cfg_.channels(s);
            add_conv(rng, "dec" + std::to_string(s) + ".red", c, c + c, 1);
            add_res_block(rng, "dec" + std::to_string(s) + ".rb", c);
            add_conv(rng, "head" + std::to_string(s), 3, c, 3, T(0.1));  // small heads: start near the identity
            if (s > 0) add_conv(rng, "up" + std::to_string(s), cfg_.channels(s - 1) * 4, c, 1);
        }
    }
};

// Multi-scale content loss: per scale, mean L1 plus lambda times the L1 of
// the per-channel DFT difference, both normalized by the scale's element count.
template <typename T>
Var<T> content_loss(const std::vector<Var<T>>& preds, const ScalePyramid<T>& gt, T lambda = T(0.1)) {
    require(!preds.empty() && preds.size() == gt.images.size(), "pyramid length mismatch");
    Var<T> total;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        check_same_shape(preds[k].value(), gt.images[k], "content_loss");
        const int C = gt.images[k].dim(0), H = gt.images[k].dim(1), W = gt.images[k].dim(2);
        Var<T> diff = preds[k] - constant(gt.images[k]);
        Var<T> term = sum(abs_val(diff));
        for (int c = 0; c < C; ++c) {
            Var<T> plane = reshape(slice_channels(diff, c, c + 1), {H, W});
            term = term + sum(abs_val(fft2(plane))) * lambda;
        }
        term = term * (T(1) / static_cast<T>(gt.images[k].numel()));
        total = k == 0 ? term : total + term;
    }
    return total;
}

template <typename T>
Var<T> total_loss(const Var<T>& content, const Var<T>& align) {
    return content + align;
}

// ---- checkpointing -----------------------------------------------------------

namespace netdetail {
inline std::string param_file(const std::string& name) {
    std::string f = name;
    for (auto& c : f)
        if (c == '.') c = '_';
    return f + ".atsr";
}
}  // namespace netdetail

template <typename T>
void save_checkpoint(const RestoreNet<T>& net, const Codebook<T>& book, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = net.config();
    manifest["prior_channels"] = net.prior_channels();
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& [name, var] : net.params().items) {
        const std::string file = netdetail::param_file(name);
        save_atsr(fs::path(dir) / file, var.value());
        plist.push_back({{"name", name}, {"shape", var.value().shape()}, {"file", file}});
    }
    manifest["params"] = plist;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(2) << "\n";
    save_codebook(book, (fs::path(dir) / "codebook.atsr").string(), (fs::path(dir) / "codebook.json").string());
}

template <typename T = float>
struct Checkpoint {
    RestoreNet<T> net;
    Codebook<T> book;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw DataError("cannot read checkpoint manifest in " + dir);
    nlohmann::json manifest;
    in >> manifest;
    NetConfig cfg = manifest.at("config");
    PriorChannels pc = manifest.at("prior_channels");
    Rng rng(0);  // values are overwritten below
    Checkpoint<T> ck{RestoreNet<T>(cfg, pc, rng),
                     load_codebook<T>((fs::path(dir) / "codebook.atsr").string(), (fs::path(dir) / "codebook.json").string())};
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name");
        Tensor<T> t = load_atsr<T>((fs::path(dir) / std::string(entry.at("file"))).string());
        Var<T> var = ck.net.params().get(name);
        if (t.shape() != var.value().shape())
            throw DataError("checkpoint parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                            shape_str(var.value().shape()));
        var.value() = std::move(t);
    }
    require(ck.book.dim() == cfg.d_z && ck.book.K() == cfg.K, "codebook does not match the net config");
    return ck;
}

}  // namespace optiq
