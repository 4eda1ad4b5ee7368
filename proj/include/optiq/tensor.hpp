#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include "optiq/common.hpp"

namespace optiq {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        require(d > 0, "tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense n-dimensional array, row-major, value semantics. Images follow the
// channel-first [C,H,W] convention everywhere in this library.
template <typename T = float>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(shape_numel(shape_) == data_.size(), "shape/data size mismatch");
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    template <typename... Ix>
    T& operator()(Ix... ix) {
        return data_[offset(ix...)];
    }
    template <typename... Ix>
    const T& operator()(Ix... ix) const {
        return data_[offset(ix...)];
    }

    template <typename... Ix>
    std::size_t offset(Ix... ix) const {
        const int idx[] = {static_cast<int>(ix)...};
        constexpr std::size_t n = sizeof...(Ix);
        std::size_t off = 0;
        for (std::size_t i = 0; i < n; ++i) off = off * static_cast<std::size_t>(shape_[i]) + static_cast<std::size_t>(idx[i]);
        return off;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    static Tensor constant(Shape shape, T v) { return Tensor(std::move(shape), v); }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// ---- plain (non-differentiated) elementwise helpers ------------------------

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
    return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
    check_same_shape(a, b, "zip");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x + y; });
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x - y; });
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
    return zip(a, b, [](T x, T y) { return x * y; });
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) {
    return map(a, [s](T x) { return x * s; });
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& a) {
    return map(a, [](T x) { return std::min(T(1), std::max(T(0), x)); });
}

// Accumulation always happens in double; the float graph benefits from the
// extra headroom and the oracle tests rely on it.
template <typename T>
double sum_d(const Tensor<T>& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]);
    return s;
}

template <typename T>
double mean_d(const Tensor<T>& a) {
    return a.numel() ? sum_d(a) / static_cast<double>(a.numel()) : 0.0;
}

template <typename T>
double max_abs(const Tensor<T>& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
    return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// max_i |a_i - b_i| / max(1e-12, max_i |b_i|)
template <typename T>
double rel_error(const Tensor<T>& a, const Tensor<T>& b) {
    return max_abs_diff(a, b) / std::max(1e-12, max_abs(b));
}

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
    return out;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, T mean = T(0), T sigma = T(1)) {
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = mean + sigma * static_cast<T>(rng.normal());
    return out;
}

}  // namespace optiq
