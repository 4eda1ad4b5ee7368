#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "optiq/tensor.hpp"

// ATSR tensor container:
//   magic "ATSR",
//   u32 LE: version(=1), ndim, dims[ndim], dtype (0 = f32, 1 = f64),
//   raw little-endian element data.
// Round-trips are bitwise; every checkpoint and intermediate dump uses it.

namespace optiq {

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("ATSR: truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
constexpr std::uint32_t atsr_dtype() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "ATSR stores f32 or f64");
    return std::is_same_v<T, float> ? 0u : 1u;
}

}  // namespace detail

template <typename T>
void save_atsr(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("ATSR: cannot open for writing: " + path.string());
    os.write("ATSR", 4);
    detail::write_u32(os, 1u);
    detail::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) detail::write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    detail::write_u32(os, detail::atsr_dtype<T>());
    // host is little-endian; elements go out verbatim
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!os) throw DataError("ATSR: write failed: " + path.string());
}

template <typename T = float>
Tensor<T> load_atsr(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("ATSR: cannot open: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ATSR", 4) != 0)
        throw DataError("ATSR: bad magic in " + path.string());
    const std::uint32_t version = detail::read_u32(is, path.string());
    if (version != 1) throw DataError("ATSR: unsupported version in " + path.string());
    const std::uint32_t ndim = detail::read_u32(is, path.string());
    if (ndim == 0 || ndim > 16) throw DataError("ATSR: implausible ndim in " + path.string());
    Shape shape(ndim);
    for (auto& d : shape) {
        d = static_cast<int>(detail::read_u32(is, path.string()));
        if (d <= 0) throw DataError("ATSR: nonpositive dim in " + path.string());
    }
    const std::uint32_t dtype = detail::read_u32(is, path.string());
    if (dtype != detail::atsr_dtype<T>()) {
        // transparent widening/narrowing between f32 and f64
        if (dtype == 0) {
            Tensor<float> raw(shape);
            if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.numel() * sizeof(float))))
                throw DataError("ATSR: truncated data in " + path.string());
            return raw.template cast<T>();
        }
        if (dtype == 1) {
            Tensor<double> raw(shape);
            if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.numel() * sizeof(double))))
                throw DataError("ATSR: truncated data in " + path.string());
            return raw.template cast<T>();
        }
        throw DataError("ATSR: unknown dtype in " + path.string());
    }
    Tensor<T> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T))))
        throw DataError("ATSR: truncated data in " + path.string());
    return t;
}

}  // namespace optiq
