#pragma once

#include <complex>
#include <vector>

#include "optiq/tensor.hpp"

// 2-D DFT on dense tensors. Forward is the unnormalized DFT
//   X[u,v] = sum_{h,w} x[h,w] exp(-2*pi*i*(u*h/H + v*w/W)),
// inverse carries the 1/(H*W). Power-of-two lengths run radix-2
// Cooley-Tukey; everything else goes through Bluestein's chirp-z, so crops of
// arbitrary size transform exactly.

namespace optiq {
namespace fftdetail {

template <typename T>
using cvec = std::vector<std::complex<T>>;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// in-place iterative radix-2, length must be a power of two
template <typename T>
void fft_pow2(cvec<T>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<T> u = a[i + k];
                const std::complex<double> vd = std::complex<double>(a[i + k + len / 2]) * w;
                const std::complex<T> v(static_cast<T>(vd.real()), static_cast<T>(vd.imag()));
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

template <typename T>
void fft_any(cvec<T>& a);

// Bluestein chirp-z: arbitrary N as one cyclic convolution at a padded
// power-of-two length.
template <typename T>
void fft_bluestein(cvec<T>& a) {
    const std::size_t n = a.size();
    const std::size_t m = next_pow2(2 * n - 1);
    cvec<T> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle small
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = -3.14159265358979323846 * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = std::complex<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    }
    cvec<T> fa(m, std::complex<T>(0, 0)), fb(m, std::complex<T>(0, 0));
    for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
    fb[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
    fft_pow2(fa);
    fft_pow2(fb);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    // unnormalized inverse via conjugation
    for (auto& c : fa) c = std::conj(c);
    fft_pow2(fa);
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = std::conj(fa[k]) * inv_m * chirp[k];
}

template <typename T>
void fft_any(cvec<T>& a) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a);
    else
        fft_bluestein(a);
}

template <typename T>
void ifft_any(cvec<T>& a, bool normalize) {
    for (auto& c : a) c = std::conj(c);
    fft_any(a);
    const T scale = normalize ? T(1) / static_cast<T>(a.size()) : T(1);
    for (auto& c : a) c = std::conj(c) * scale;
}

// 2-D transform over a row-major complex buffer, rows then columns.
template <typename T>
void fft2_buffer(cvec<T>& buf, int H, int W, bool inverse, bool normalize) {
    cvec<T> line;
    line.resize(static_cast<std::size_t>(W));
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) line[static_cast<std::size_t>(w)] = buf[static_cast<std::size_t>(h) * W + w];
        if (inverse)
            ifft_any(line, false);
        else
            fft_any(line);
        for (int w = 0; w < W; ++w) buf[static_cast<std::size_t>(h) * W + w] = line[static_cast<std::size_t>(w)];
    }
    line.resize(static_cast<std::size_t>(H));
    for (int w = 0; w < W; ++w) {
        for (int h = 0; h < H; ++h) line[static_cast<std::size_t>(h)] = buf[static_cast<std::size_t>(h) * W + w];
        if (inverse)
            ifft_any(line, false);
        else
            fft_any(line);
        for (int h = 0; h < H; ++h) buf[static_cast<std::size_t>(h) * W + w] = line[static_cast<std::size_t>(h)];
    }
    if (inverse && normalize) {
        const T scale = T(1) / static_cast<T>(static_cast<std::size_t>(H) * W);
        for (auto& c : buf) c *= scale;
    }
}

}  // namespace fftdetail

// [H,W] real input -> [2,H,W] with plane 0 = Re, plane 1 = Im.
template <typename T>
Tensor<T> fft2(const Tensor<T>& x) {
    require(x.ndim() == 2, "fft2: expected [H,W], got " + shape_str(x.shape()));
    const int H = x.dim(0), W = x.dim(1);
    // butterflies run in double regardless of T: each output coefficient is
    // then a single rounding of the full transform, which keeps 32-bit-mode
    // spectra (and the losses summed from them) near 1 ulp of exact
    fftdetail::cvec<double> buf(static_cast<std::size_t>(H) * W);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = std::complex<double>(static_cast<double>(x[i]), 0.0);
    fftdetail::fft2_buffer(buf, H, W, /*inverse=*/false, /*normalize=*/false);
    Tensor<T> out({2, H, W});
    for (std::size_t i = 0; i < buf.size(); ++i) {
        out[i] = static_cast<T>(buf[i].real());
        out[buf.size() + i] = static_cast<T>(buf[i].imag());
    }
    return out;
}

// [2,H,W] -> [2,H,W], normalized inverse.
template <typename T>
Tensor<T> ifft2(const Tensor<T>& X) {
    require(X.ndim() == 3 && X.dim(0) == 2, "ifft2: expected [2,H,W], got " + shape_str(X.shape()));
    const int H = X.dim(1), W = X.dim(2);
    const std::size_t n = static_cast<std::size_t>(H) * W;
    fftdetail::cvec<double> buf(n);
    for (std::size_t i = 0; i < n; ++i)
        buf[i] = std::complex<double>(static_cast<double>(X[i]), static_cast<double>(X[n + i]));
    fftdetail::fft2_buffer(buf, H, W, /*inverse=*/true, /*normalize=*/true);
    Tensor<T> out({2, H, W});
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<T>(buf[i].real());
        out[n + i] = static_cast<T>(buf[i].imag());
    }
    return out;
}

// real part of the normalized inverse, for real-signal round trips
template <typename T>
Tensor<T> ifft2_real(const Tensor<T>& X) {
    Tensor<T> c = ifft2(X);
    const int H = c.dim(1), W = c.dim(2);
    Tensor<T> out({H, W});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c[i];
    return out;
}

}  // namespace optiq
