#pragma once

#include <cmath>
#include <limits>

#include "optiq/common.hpp"
#include "optiq/tensor.hpp"

namespace optiq {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    check_same_shape(a, b, "psnr");
    double se = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        se += d * d;
    }
    const double mse = se / a.numel();
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace metricdetail {

inline const std::vector<double>& ssim_window() {  // 11-tap Gaussian, sigma 1.5
    static const std::vector<double> w = [] {
        std::vector<double> v(11);
        double s = 0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            s += v[i];
        }
        for (auto& x : v) x /= s;
        return v;
    }();
    return w;
}

// separable valid-region Gaussian filter of one plane
template <typename T>
Tensor<double> ssim_blur(const Tensor<T>& img, int c) {
    const auto& w = ssim_window();
    const int H = img.dim(1), W = img.dim(2);
    Tensor<double> rows({H, W - 10});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W - 10; ++x) {
            double s = 0;
            for (int t = 0; t < 11; ++t) s += w[t] * double(img(c, y, x + t));
            rows(y, x) = s;
        }
    Tensor<double> out({H - 10, W - 10});
    for (int y = 0; y < H - 10; ++y)
        for (int x = 0; x < W - 10; ++x) {
            double s = 0;
            for (int t = 0; t < 11; ++t) s += w[t] * rows(y + t, x);
            out(y, x) = s;
        }
    return out;
}

}  // namespace metricdetail

// Mean local SSIM over the valid region, 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range 1; channels averaged.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "ssim");
    require(a.ndim() == 3, "ssim expects [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    require(H >= 11 && W >= 11, "image smaller than the 11x11 SSIM window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    double total = 0;
    for (int c = 0; c < C; ++c) {
        using metricdetail::ssim_blur;
        Tensor<T> aa(a.shape()), bb(b.shape()), ab(a.shape());
        for (std::size_t i = 0; i < a.numel(); ++i) {
            aa[i] = a[i] * a[i];
            bb[i] = b[i] * b[i];
            ab[i] = a[i] * b[i];
        }
        const Tensor<double> mu_a = ssim_blur(a, c), mu_b = ssim_blur(b, c);
        const Tensor<double> m_aa = ssim_blur(aa, c), m_bb = ssim_blur(bb, c), m_ab = ssim_blur(ab, c);
        double acc = 0;
        for (std::size_t i = 0; i < mu_a.numel(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_aa[i] - ma * ma;
            const double vb = m_bb[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            acc += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
        total += acc / mu_a.numel();
    }
    return total / C;
}

}  // namespace optiq
