#pragma once

#include <cmath>

#include "optiq/common.hpp"
#include "optiq/tensor.hpp"

namespace optiq {

template <typename T = float>
Tensor<T> checkerboard(int H, int W, int period, T lo = T(0.1), T hi = T(0.9)) {
    require(H >= 1 && W >= 1 && period >= 1, "bad checkerboard request");
    Tensor<T> img({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const T v = ((y / period + x / period) % 2 == 0) ? hi : lo;
            for (int c = 0; c < 3; ++c) img(c, y, x) = v;
        }
    return img;
}

// Procedural test scene: smooth color gradient background with random
// rectangles, disks and stripe patches layered on top. Sharp edges at varied
// orientations give the deblurring task signal at all field positions.
template <typename T = float>
Tensor<T> random_scene(int H, int W, Rng& rng) {
    require(H >= 1 && W >= 1, "bad scene request");
    Tensor<T> img({3, H, W});

    double g0[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        g0[c] = rng.uniform(0.2, 0.7);
        gx[c] = rng.uniform(-0.25, 0.25);
        gy[c] = rng.uniform(-0.25, 0.25);
    }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img(c, y, x) = static_cast<T>(g0[c] + gx[c] * x / std::max(1, W - 1) + gy[c] * y / std::max(1, H - 1));

    const int n_shapes = rng.uniform_int(6, 10);
    for (int s = 0; s < n_shapes; ++s) {
        const int kind = rng.uniform_int(0, 2);
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform(0.05, 0.95);
        const int cx = rng.uniform_int(0, W - 1), cy = rng.uniform_int(0, H - 1);
        const int rx = rng.uniform_int(W / 16 + 1, W / 4 + 1), ry = rng.uniform_int(H / 16 + 1, H / 4 + 1);
        if (kind == 0) {  // rectangle
            for (int y = std::max(0, cy - ry); y <= std::min(H - 1, cy + ry); ++y)
                for (int x = std::max(0, cx - rx); x <= std::min(W - 1, cx + rx); ++x)
                    for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<T>(col[c]);
        } else if (kind == 1) {  // disk
            const int r = std::min(rx, ry);
            for (int y = std::max(0, cy - r); y <= std::min(H - 1, cy + r); ++y)
                for (int x = std::max(0, cx - r); x <= std::min(W - 1, cx + r); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                        for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<T>(col[c]);
        } else {  // stripe patch
            const double angle = rng.uniform(0.0, M_PI);
            const double freq = 2.0 * M_PI / rng.uniform(4.0, 12.0);
            const double ca = std::cos(angle), sa = std::sin(angle);
            double col2[3];
            for (int c = 0; c < 3; ++c) col2[c] = rng.uniform(0.05, 0.95);
            for (int y = std::max(0, cy - ry); y <= std::min(H - 1, cy + ry); ++y)
                for (int x = std::max(0, cx - rx); x <= std::min(W - 1, cx + rx); ++x) {
                    const bool a = std::sin((x * ca + y * sa) * freq) >= 0;
                    for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<T>(a ? col[c] : col2[c]);
                }
        }
    }

    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = std::min(T(1), std::max(T(0), img[i]));
    return img;
}

}  // namespace optiq
