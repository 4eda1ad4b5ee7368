#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "optiq/common.hpp"
#include "optiq/fft.hpp"
#include "optiq/optics.hpp"
#include "optiq/tensor.hpp"

namespace optiq {

template <typename T = float>
struct PriorStack {
    Tensor<T> sfr;       // [n_sfr, H, W]
    Tensor<T> fov;       // [2, H, W]
    Tensor<T> noise;     // [1, H, W]
    Tensor<T> spectral;  // [n_sp, H, W]
};

inline const std::vector<std::string>& prior_names() {
    static const std::vector<std::string> names = {"sfr", "fov", "noise", "spectral"};
    return names;
}

template <typename T = float>
struct SfrSpec {
    std::vector<T> frequencies = {T(0.125), T(0.25), T(0.375), T(0.5)};  // cycles/pixel
    bool horizontal = true;
    bool vertical = true;

    int orientation_count() const { return (horizontal ? 1 : 0) + (vertical ? 1 : 0); }
    void validate() const {
        require(!frequencies.empty(), "SFR spec needs at least one frequency");
        require(orientation_count() > 0, "SFR spec needs at least one orientation");
        for (std::size_t i = 0; i < frequencies.size(); ++i) {
            require(frequencies[i] > 0 && frequencies[i] <= T(0.5),
                    "SFR frequency " + std::to_string(double(frequencies[i])) + " outside (0, 0.5]");
            if (i > 0) require(frequencies[i] > frequencies[i - 1], "SFR frequencies must be strictly increasing");
        }
    }
};

namespace priordetail {
constexpr int kMtfPad = 64;  // kernels are zero-padded to this size before the MTF transform
}

// Per grid node and band, the kernel's MTF (|DFT| / DC) sampled at the spec's
// frequencies along each orientation axis, then bilinearly interpolated to
// pixel resolution with the same node weights the renderer uses. Channel
// order: band-major, then frequency, then orientation (horizontal first).
template <typename T>
Tensor<T> sfr_cube(const PsfGrid<T>& grid, const SfrSpec<T>& spec, int H, int W) {
    spec.validate();
    const int pad = priordetail::kMtfPad;
    require(grid.k <= pad, "kernel size " + std::to_string(grid.k) + " exceeds MTF pad " + std::to_string(pad));
    const int nf = static_cast<int>(spec.frequencies.size());
    const int no = spec.orientation_count();
    const int n_sfr = grid.bands * nf * no;

    std::vector<int> bins(nf);
    for (int f = 0; f < nf; ++f) {
        bins[f] = static_cast<int>(std::lround(double(spec.frequencies[f]) * pad));
        require(bins[f] >= 1 && bins[f] <= pad / 2, "frequency maps outside the padded spectrum");
    }

    // node_vals[(i,j), channel]
    Tensor<double> node_vals({grid.field_rows, grid.field_cols, n_sfr});
    Tensor<double> padded({pad, pad});
    for (int i = 0; i < grid.field_rows; ++i)
        for (int j = 0; j < grid.field_cols; ++j)
            for (int b = 0; b < grid.bands; ++b) {
                padded.fill(0.0);
                for (int y = 0; y < grid.k; ++y)
                    for (int x = 0; x < grid.k; ++x) padded(y, x) = grid.kernels(i, j, b, y, x);
                Tensor<double> F = fft2(padded);  // [2, pad, pad]
                auto mag = [&](int fy, int fx) {
                    return std::hypot(F(0, fy, fx), F(1, fy, fx));
                };
                const double dc = mag(0, 0);
                for (int f = 0; f < nf; ++f) {
                    int ch = (b * nf + f) * no;
                    if (spec.horizontal) node_vals(i, j, ch++) = mag(0, bins[f]) / dc;
                    if (spec.vertical) node_vals(i, j, ch) = mag(bins[f], 0) / dc;
                }
            }

    const Tensor<T> wy = bilinear_node_weights<T>(grid.field_rows, H);
    const Tensor<T> wx = bilinear_node_weights<T>(grid.field_cols, W);
    Tensor<T> cube({n_sfr, H, W}, T(0));
    for (int ch = 0; ch < n_sfr; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = 0;
                for (int i = 0; i < grid.field_rows; ++i) {
                    if (wy(i, y) == 0) continue;
                    for (int j = 0; j < grid.field_cols; ++j) {
                        if (wx(j, x) == 0) continue;
                        v += double(wy(i, y)) * double(wx(j, x)) * node_vals(i, j, ch);
                    }
                }
                cube(ch, y, x) = static_cast<T>(v < 0 ? 0 : (v > 1 ? 1 : v));
            }
    return cube;
}

// plane 0: row coordinate in [-1,1]; plane 1: column coordinate
template <typename T = float>
Tensor<T> fov_map(int H, int W) {
    require(H >= 1 && W >= 1, "fov_map needs positive dims");
    Tensor<T> fov({2, H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            fov(0, h, w) = H > 1 ? static_cast<T>(2.0 * h / (H - 1) - 1.0) : T(0);
            fov(1, h, w) = W > 1 ? static_cast<T>(2.0 * w / (W - 1) - 1.0) : T(0);
        }
    return fov;
}

// predicted per-pixel noise std from the channel-mean signal level
template <typename T>
Tensor<T> noise_map(const NoiseParams<T>& noise, const Tensor<T>& degraded) {
    require(degraded.ndim() == 3 && degraded.dim(0) == 3, "noise_map expects [3,H,W]");
    const int H = degraded.dim(1), W = degraded.dim(2);
    Tensor<T> out({1, H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const double m = (double(degraded(0, h, w)) + double(degraded(1, h, w)) + double(degraded(2, h, w))) / 3.0;
            out(0, h, w) = static_cast<T>(
                std::sqrt(double(noise.shot_gain) * m + double(noise.read_sigma) * double(noise.read_sigma)));
        }
    return out;
}

// band energies averaged into n_sp contiguous groups, normalized per pixel so
// the planes sum to ~1
template <typename T>
Tensor<T> spectral_prior(const Tensor<T>& spectral, int n_sp) {
    require(spectral.ndim() == 3, "spectral_prior expects [bands,H,W]");
    const int bands = spectral.dim(0), H = spectral.dim(1), W = spectral.dim(2);
    require(n_sp >= 1 && n_sp <= bands, "n_sp must be in [1, bands]");
    Tensor<T> out({n_sp, H, W});
    const double eps = 1e-6;
    std::vector<double> groups(n_sp);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            double total = 0;
            for (int g = 0; g < n_sp; ++g) {
                const int lo = g * bands / n_sp, hi = (g + 1) * bands / n_sp;
                double s = 0;
                for (int b = lo; b < hi; ++b) s += double(spectral(b, h, w));
                groups[g] = s / (hi - lo);
                total += groups[g];
            }
            for (int g = 0; g < n_sp; ++g) out(g, h, w) = static_cast<T>(groups[g] / (total + eps));
        }
    return out;
}

template <typename T>
PriorStack<T> make_priors(const PsfGrid<T>& grid, const NoiseParams<T>& noise, const Tensor<T>& degraded,
                          const Tensor<T>& spectral, const SfrSpec<T>& spec, int n_sp) {
    const int H = degraded.dim(1), W = degraded.dim(2);
    PriorStack<T> stack;
    stack.sfr = sfr_cube(grid, spec, H, W);
    stack.fov = fov_map<T>(H, W);
    stack.noise = noise_map(noise, degraded);
    stack.spectral = spectral_prior(spectral, n_sp);
    return stack;
}

template <typename T>
void validate_prior_stack(const PriorStack<T>& stack) {
    require(stack.sfr.ndim() == 3 && stack.fov.ndim() == 3 && stack.noise.ndim() == 3 && stack.spectral.ndim() == 3,
            "prior planes must be [C,H,W]");
    const int H = stack.sfr.dim(1), W = stack.sfr.dim(2);
    require(stack.fov.dim(0) == 2 && stack.noise.dim(0) == 1, "fov must have 2 planes, noise 1");
    for (const Tensor<T>* t : {&stack.fov, &stack.noise, &stack.spectral})
        require(t->dim(1) == H && t->dim(2) == W, "prior planes must share spatial dims");
    for (std::size_t i = 0; i < stack.sfr.numel(); ++i)
        require(stack.sfr[i] >= 0 && stack.sfr[i] <= 1, "sfr values must lie in [0,1]");
    for (std::size_t i = 0; i < stack.fov.numel(); ++i)
        require(stack.fov[i] >= -1 && stack.fov[i] <= 1, "fov values must lie in [-1,1]");
    for (std::size_t i = 0; i < stack.noise.numel(); ++i) require(stack.noise[i] >= 0, "noise map must be nonnegative");
}

// Zeroes every prior except `keep`; keep="all" passes through, "none" zeroes
// everything.
template <typename T>
PriorStack<T> zero_out(const PriorStack<T>& stack, const std::string& keep) {
    bool known = keep == "all" || keep == "none";
    for (const auto& n : prior_names()) known = known || keep == n;
    if (!known) throw ConfigError("unknown prior name '" + keep + "'");
    PriorStack<T> out;
    auto pick = [&](const Tensor<T>& t, const std::string& name) {
        return (keep == "all" || keep == name) ? t : Tensor<T>(t.shape(), T(0));
    };
    out.sfr = pick(stack.sfr, "sfr");
    out.fov = pick(stack.fov, "fov");
    out.noise = pick(stack.noise, "noise");
    out.spectral = pick(stack.spectral, "spectral");
    return out;
}

}  // namespace optiq
