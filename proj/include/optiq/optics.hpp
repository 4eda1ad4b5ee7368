#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "optiq/common.hpp"
#include "optiq/tensor.hpp"

namespace optiq {

template <typename T = float>
struct PsfModelParams {
    T sigma_center = T(1.2);      // base Gaussian std at field center, pixels
    T sigma_slope = T(0.8);       // std growth per unit normalized field radius
    T astig_ratio = T(1.4);       // tangential elongation factor, >= 1
    T chroma_shift_slope = T(0.8);  // radial centroid shift per unit radius per band offset
};

template <typename T = float>
struct NoiseParams {
    T shot_gain = T(0.001);  // variance per unit signal
    T read_sigma = T(0.01);  // signal-independent std
};

template <typename T = float>
struct PsfGrid {
    int field_rows = 0;
    int field_cols = 0;
    int bands = 0;
    int k = 0;
    Tensor<T> kernels;  // [field_rows, field_cols, bands, k, k]
    std::vector<std::string> warnings;

    // copies one kernel out as [k, k]
    Tensor<T> kernel_at(int i, int j, int b) const {
        Tensor<T> out({k, k});
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) out(y, x) = kernels(i, j, b, y, x);
        return out;
    }
};

template <typename T = float>
struct SpectralResponse {
    Tensor<T> weights;  // [3, bands], rows sum to 1
    int bands() const { return weights.dim(1); }
};

namespace optdetail {

// reference band: spectral shifts are measured relative to it
inline int reference_band(int bands) { return static_cast<int>(std::lround((bands - 1) / 2.0)); }

// Nonnegative RGB->spectrum basis over band positions t in [0,1] (red at 0,
// blue at 1, green at the reference band). Cosine-squared crossfades between
// the three anchor positions, with a 0.4 plateau margin on each segment so
// bands near an anchor carry exactly one channel. Rows form a partition of
// unity, so a grayscale input lifts to a flat spectrum, and bands=3 reduces to
// the identity.
template <typename T>
Tensor<T> lift_basis(int bands) {
    require(bands >= 3, "spectral lift needs at least 3 bands, got " + std::to_string(bands));
    const double tg = reference_band(bands) / double(bands - 1);
    const double margin = 0.4;
    auto blend = [&](double s) {  // 0 -> first channel, 1 -> second
        double u = (s - margin) / (1.0 - 2.0 * margin);
        u = u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
        const double w2 = std::sin(0.5 * M_PI * u);
        return w2 * w2;
    };
    Tensor<T> L({bands, 3});  // columns: R, G, B
    for (int b = 0; b < bands; ++b) {
        const double t = bands == 1 ? 0.0 : b / double(bands - 1);
        double r = 0, g = 0, bl = 0;
        if (t <= tg) {
            const double s = tg > 0 ? t / tg : 1.0;
            g = blend(s);
            r = 1.0 - g;
        } else {
            const double s = (t - tg) / (1.0 - tg);
            bl = blend(s);
            g = 1.0 - bl;
        }
        L(b, 0) = static_cast<T>(r);
        L(b, 1) = static_cast<T>(g);
        L(b, 2) = static_cast<T>(bl);
    }
    return L;
}

}  // namespace optdetail

// Sensor response recovering RGB from a lifted spectrum. Each channel's row is
// uniform over the bands whose lift weight for that channel is exactly 1, so
// the response applied to spectral_lift output reproduces the input.
template <typename T = float>
SpectralResponse<T> make_spectral_response(int bands) {
    Tensor<T> L = optdetail::lift_basis<T>(bands);
    Tensor<T> W({3, bands}, T(0));
    for (int c = 0; c < 3; ++c) {
        std::vector<int> pure;
        for (int b = 0; b < bands; ++b)
            if (std::abs(double(L(b, c)) - 1.0) < 1e-12) pure.push_back(b);
        require(!pure.empty(), "no pure band for channel " + std::to_string(c));
        for (int b : pure) W(c, b) = T(1) / T(pure.size());
    }
    return SpectralResponse<T>{std::move(W)};
}

template <typename T>
Tensor<T> spectral_lift(const Tensor<T>& rgb, int bands) {
    require(rgb.ndim() == 3 && rgb.dim(0) == 3, "spectral_lift expects [3,H,W], got " + shape_str(rgb.shape()));
    Tensor<T> L = optdetail::lift_basis<T>(bands);
    const int H = rgb.dim(1), W = rgb.dim(2);
    Tensor<T> out({bands, H, W});
    for (int b = 0; b < bands; ++b)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double v = 0;
                for (int c = 0; c < 3; ++c) v += double(L(b, c)) * double(rgb(c, h, w));
                out(b, h, w) = static_cast<T>(v);
            }
    return out;
}

// discrete stand-in for the response integral over wavelength
template <typename T>
Tensor<T> integrate_response(const Tensor<T>& spectral, const SpectralResponse<T>& resp) {
    require(spectral.ndim() == 3, "integrate_response expects [bands,H,W]");
    const int bands = spectral.dim(0), H = spectral.dim(1), W = spectral.dim(2);
    require(resp.bands() == bands, "response has " + std::to_string(resp.bands()) + " bands, image has " +
                                       std::to_string(bands));
    Tensor<T> rgb({3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double v = 0;
                for (int b = 0; b < bands; ++b) v += double(resp.weights(c, b)) * double(spectral(b, h, w));
                rgb(c, h, w) = static_cast<T>(v);
            }
    return rgb;
}

namespace optdetail {

// normalized field coordinates of a grid node: (-1,-1) top-left, (1,1) bottom-right
template <typename T>
void node_field_coords(int i, int j, int rows, int cols, T& u, T& v) {
    u = cols > 1 ? T(2) * T(j) / T(cols - 1) - T(1) : T(0);
    v = rows > 1 ? T(2) * T(i) / T(rows - 1) - T(1) : T(0);
}

}  // namespace optdetail

// Anisotropic Gaussian PSF field: std grows linearly with field radius, the
// tangential axis is elongated by astig_ratio, and each band's centroid is
// shifted radially in proportion to its offset from the reference band.
template <typename T>
PsfGrid<T> build_psf_grid(const PsfModelParams<T>& params, int field_rows, int field_cols, int bands, int k) {
    require_cfg(params.sigma_center > 0, "sigma_center must be positive");
    require_cfg(params.sigma_slope >= 0 && params.chroma_shift_slope >= 0, "slopes must be nonnegative");
    require_cfg(params.astig_ratio >= 1, "astig_ratio must be >= 1");
    require_cfg(field_rows >= 1 && field_cols >= 1 && bands >= 1, "grid dims must be positive");
    require_cfg(k >= 1 && k % 2 == 1, "kernel size must be odd and positive, got " + std::to_string(k));

    PsfGrid<T> grid;
    grid.field_rows = field_rows;
    grid.field_cols = field_cols;
    grid.bands = bands;
    grid.k = k;
    grid.kernels = Tensor<T>({field_rows, field_cols, bands, k, k});
    const int c = k / 2;
    const int b_ref = optdetail::reference_band(bands);

    for (int i = 0; i < field_rows; ++i)
        for (int j = 0; j < field_cols; ++j) {
            T u, v;
            optdetail::node_field_coords(i, j, field_rows, field_cols, u, v);
            const double r = std::sqrt(double(u) * u + double(v) * v);
            const double sig_r = double(params.sigma_center) + double(params.sigma_slope) * r;
            const double sig_t = sig_r * (r > 1e-12 ? double(params.astig_ratio) : 1.0);
            double eru = 0, erv = 0;  // radial unit vector in (x, y) pixel axes
            if (r > 1e-12) {
                eru = u / r;
                erv = v / r;
            }
            for (int b = 0; b < bands; ++b) {
                const double shift = double(params.chroma_shift_slope) * r * (b - b_ref);
                const double cx = shift * eru, cy = shift * erv;
                double mass = 0;
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x) {
                        const double px = (x - c) - cx, py = (y - c) - cy;
                        // decompose into radial/tangential components
                        const double a = r > 1e-12 ? px * eru + py * erv : px;
                        const double t = r > 1e-12 ? -px * erv + py * eru : py;
                        const double val = std::exp(-0.5 * (a * a / (sig_r * sig_r) + t * t / (sig_t * sig_t))) /
                                           (2.0 * M_PI * sig_r * sig_t);
                        grid.kernels(i, j, b, y, x) = static_cast<T>(val);
                        mass += val;
                    }
                if (k > 1 && mass < 0.99)
                    grid.warnings.push_back("node (" + std::to_string(i) + "," + std::to_string(j) + ") band " +
                                            std::to_string(b) + " truncates " +
                                            std::to_string((1.0 - mass) * 100.0) + "% of PSF mass");
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x) grid.kernels(i, j, b, y, x) = static_cast<T>(grid.kernels(i, j, b, y, x) / mass);
            }
        }
    return grid;
}

template <typename T>
void validate_psf_grid(const PsfGrid<T>& grid) {
    require(grid.kernels.ndim() == 5, "PsfGrid kernels must be 5-D");
    for (int i = 0; i < grid.field_rows; ++i)
        for (int j = 0; j < grid.field_cols; ++j)
            for (int b = 0; b < grid.bands; ++b) {
                double s = 0;
                for (int y = 0; y < grid.k; ++y)
                    for (int x = 0; x < grid.k; ++x) {
                        const double v = grid.kernels(i, j, b, y, x);
                        require(v >= 0, "negative kernel value");
                        s += v;
                    }
                require(std::abs(s - 1.0) <= 1e-6, "kernel not normalized: sum " + std::to_string(s));
            }
}

// 1-D bilinear hat weights of each grid node over a pixel axis; rows sum to 1
// per pixel. Shared by the renderer and the SFR cube so their interpolation
// geometry is identical.
template <typename T>
Tensor<T> bilinear_node_weights(int n_nodes, int length) {
    require(n_nodes >= 1 && length >= 1, "bad node weight request");
    Tensor<T> w({n_nodes, length}, T(0));
    for (int p = 0; p < length; ++p) {
        if (n_nodes == 1) {
            w(0, p) = T(1);
            continue;
        }
        const double f = length > 1 ? double(p) * (n_nodes - 1) / double(length - 1) : 0.0;
        int i0 = static_cast<int>(f);
        if (i0 > n_nodes - 2) i0 = n_nodes - 2;
        const double t = f - i0;
        w(i0, p) = static_cast<T>(1.0 - t);
        w(i0 + 1, p) = static_cast<T>(t);
    }
    return w;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& clean, const NoiseParams<T>& noise, uint64_t seed) {
    require(noise.shot_gain >= 0 && noise.read_sigma >= 0, "noise params must be nonnegative");
    Rng rng(seed);
    Tensor<T> out(clean.shape());
    for (std::size_t i = 0; i < clean.numel(); ++i) {
        const double var = double(noise.shot_gain) * double(clean[i]) + double(noise.read_sigma) * double(noise.read_sigma);
        const double v = double(clean[i]) + rng.normal() * std::sqrt(var > 0 ? var : 0);
        out[i] = static_cast<T>(v < 0 ? 0 : (v > 1 ? 1 : v));
    }
    return out;
}

// Spatially-varying blur: per band, each node kernel is applied as a true
// convolution (kernel flipped, replicate borders) over that node's bilinear
// support, and the per-pixel result is the hat-weighted blend of the four
// surrounding nodes. Then bands are integrated to RGB and noise is added.
template <typename T>
Tensor<T> render_degraded(const Tensor<T>& sharp_spectral, const PsfGrid<T>& grid, const SpectralResponse<T>& resp,
                          const NoiseParams<T>& noise, uint64_t seed) {
    require(sharp_spectral.ndim() == 3, "render expects [bands,H,W]");
    const int bands = sharp_spectral.dim(0), H = sharp_spectral.dim(1), W = sharp_spectral.dim(2);
    require(grid.bands == bands, "grid bands " + std::to_string(grid.bands) + " != image bands " + std::to_string(bands));
    require(resp.bands() == bands, "response bands " + std::to_string(resp.bands()) + " != image bands " + std::to_string(bands));

    const int k = grid.k, c = k / 2;
    const Tensor<T> wy = bilinear_node_weights<T>(grid.field_rows, H);
    const Tensor<T> wx = bilinear_node_weights<T>(grid.field_cols, W);

    Tensor<double> blurred({bands, H, W}, 0.0);
    for (int i = 0; i < grid.field_rows; ++i) {
        int y0 = H, y1 = -1;
        for (int p = 0; p < H; ++p)
            if (wy(i, p) > 0) {
                y0 = std::min(y0, p);
                y1 = std::max(y1, p);
            }
        for (int j = 0; j < grid.field_cols; ++j) {
            int x0 = W, x1 = -1;
            for (int p = 0; p < W; ++p)
                if (wx(j, p) > 0) {
                    x0 = std::min(x0, p);
                    x1 = std::max(x1, p);
                }
            if (y1 < y0 || x1 < x0) continue;
            for (int b = 0; b < bands; ++b)
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const double wgt = double(wy(i, y)) * double(wx(j, x));
                        if (wgt == 0) continue;
                        double acc = 0;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int sy = y - (ky - c), sx = x - (kx - c);  // flipped kernel: true convolution
                                sy = sy < 0 ? 0 : (sy >= H ? H - 1 : sy);
                                sx = sx < 0 ? 0 : (sx >= W ? W - 1 : sx);
                                acc += double(grid.kernels(i, j, b, ky, kx)) * double(sharp_spectral(b, sy, sx));
                            }
                        blurred(b, y, x) += wgt * acc;
                    }
        }
    }

    Tensor<T> clean({3, H, W});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = 0;
                for (int b = 0; b < bands; ++b) v += double(resp.weights(ch, b)) * blurred(b, y, x);
                clean(ch, y, x) = static_cast<T>(v < 0 ? 0 : (v > 1 ? 1 : v));
            }
    if (noise.shot_gain == 0 && noise.read_sigma == 0) return clean;
    return add_noise(clean, noise, seed);
}

template <typename T = float>
struct RenderedPair {
    Tensor<T> sharp;     // [3,H,W]
    Tensor<T> degraded;  // [3,H,W]
    Tensor<T> spectral;  // [bands,H,W], the lifted sharp image
};

template <typename T>
RenderedPair<T> make_pair(const Tensor<T>& sharp_rgb, const PsfGrid<T>& grid, const SpectralResponse<T>& resp,
                          const NoiseParams<T>& noise, uint64_t seed) {
    RenderedPair<T> pair;
    pair.sharp = sharp_rgb;
    pair.spectral = spectral_lift(sharp_rgb, grid.bands);
    pair.degraded = render_degraded(pair.spectral, grid, resp, noise, seed);
    return pair;
}

}  // namespace optiq
