#pragma once

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "optiq/common.hpp"
#include "optiq/tensor.hpp"

namespace optiq {

// 8-bit RGB PNG -> [3,H,W] float in [0,1]; grayscale/palette/alpha inputs are
// normalized to RGB
template <typename T = float>
Tensor<T> read_png_rgb8(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw DataError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);          // palette/low-bit-depth/tRNS to full bytes
    png_set_strip_16(png);        // 16-bit to 8
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int H = png_get_image_height(png, info);
    const int W = png_get_image_width(png, info);
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(W) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unexpected row layout in " + path);
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(H) * W * 3);
    std::vector<png_bytep> rows(H);
    for (int y = 0; y < H; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * W * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<T> img({3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                img(c, y, x) = static_cast<T>(raw[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0);
    return img;
}

template <typename T>
void write_png_rgb8(const std::string& path, const Tensor<T>& img) {
    require(img.ndim() == 3 && img.dim(0) == 3, "write_png_rgb8 expects [3,H,W]");
    const int H = img.dim(1), W = img.dim(2);

    std::vector<unsigned char> raw(static_cast<std::size_t>(H) * W * 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = double(img(c, y, x));
                v = v < 0 ? 0 : (v > 1 ? 1 : v);
                raw[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }

    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(H);
    for (int y = 0; y < H; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * W * 3;
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

}  // namespace optiq
