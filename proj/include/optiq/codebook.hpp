#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optiq/autodiff.hpp"
#include "optiq/common.hpp"
#include "optiq/tensor.hpp"
#include "optiq/tensor_io.hpp"

namespace optiq {

template <typename T = float>
struct Codebook {
    Var<T> entries;                   // [K, d_z] leaf parameter
    std::vector<std::int64_t> usage;  // assignments per entry since last reset

    int K() const { return entries.value().dim(0); }
    int dim() const { return entries.value().dim(1); }
};

template <typename T>
Codebook<T> make_codebook(int K, int d_z, Rng& rng) {
    require(K >= 1 && d_z >= 1, "codebook needs positive K and d_z");
    Codebook<T> book;
    book.entries = Var<T>::leaf(random_uniform<T>({K, d_z}, rng, T(-1.0) / T(K), T(1.0) / T(K)), true, "codebook");
    book.usage.assign(K, 0);
    return book;
}

template <typename T = float>
struct QuantizeResult {
    Tensor<T> z_q;            // [h, w, d_z]
    Tensor<int32_t> indices;  // [h, w]
};

// layout bridges between image features [C,H,W] and code fields [H,W,C]
template <typename T>
Tensor<T> chw_to_hwc(const Tensor<T>& t) {
    require(t.ndim() == 3, "chw_to_hwc expects rank 3");
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Tensor<T> out({H, W, C});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) out(h, w, c) = t(c, h, w);
    return out;
}

template <typename T>
Tensor<T> hwc_to_chw(const Tensor<T>& t) {
    require(t.ndim() == 3, "hwc_to_chw expects rank 3");
    const int H = t.dim(0), W = t.dim(1), C = t.dim(2);
    Tensor<T> out({C, H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out(c, h, w) = t(h, w, c);
    return out;
}

// Nearest-entry assignment per code position; ties go to the lowest index.
template <typename T>
QuantizeResult<T> quantize(const Tensor<T>& z_hat, Codebook<T>& book) {
    require(book.K() >= 1, "empty codebook");
    require(z_hat.ndim() == 3 && z_hat.dim(2) == book.dim(),
            "quantize expects [h,w,d_z] with d_z=" + std::to_string(book.dim()) + ", got " + shape_str(z_hat.shape()));
    const int h = z_hat.dim(0), w = z_hat.dim(1), d = book.dim(), K = book.K();
    const Tensor<T>& E = book.entries.value();
    QuantizeResult<T> res{Tensor<T>({h, w, d}), Tensor<int32_t>({h, w})};
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            int best = 0;
            double best_d2 = -1;
            for (int k = 0; k < K; ++k) {
                double d2 = 0;
                for (int c = 0; c < d; ++c) {
                    const double diff = double(z_hat(i, j, c)) - double(E(k, c));
                    d2 += diff * diff;
                }
                if (best_d2 < 0 || d2 < best_d2) {
                    best_d2 = d2;
                    best = k;
                }
            }
            res.indices(i, j) = best;
            ++book.usage[best];
            for (int c = 0; c < d; ++c) res.z_q(i, j, c) = E(best, c);
        }
    return res;
}

// Two-term code alignment loss over a channel-first code field [d_z,h,w].
// Term 1 moves the selected entries toward the (frozen) encoder output; term 2
// commits the encoder output to the (frozen) selected entries. Normalized by
// the number of code positions.
template <typename T>
Var<T> alignment_loss(const Var<T>& z_hat, const Tensor<int32_t>& indices, Codebook<T>& book) {
    require(z_hat.value().ndim() == 3 && z_hat.value().dim(0) == book.dim(), "alignment_loss expects [d_z,h,w]");
    const int h = z_hat.value().dim(1), w = z_hat.value().dim(2);
    require(indices.ndim() == 2 && indices.dim(0) == h && indices.dim(1) == w, "index field shape mismatch");
    std::vector<int> flat(indices.vec().begin(), indices.vec().end());

    auto z_q = gather_codes(book.entries, flat, h, w);  // [d_z,h,w], grads reach entries only
    const T norm = T(1.0) / T(std::size_t(h) * w);

    auto d1 = constant(z_hat.value()) - z_q;
    auto term1 = sum(d1 * d1) * norm;
    auto d2 = z_hat - constant(z_q.value());
    auto term2 = sum(d2 * d2) * norm;
    return term1 + term2;
}

// distinct entries selected across one or more index fields
template <typename T>
int count_activated(const std::vector<Tensor<int32_t>>& index_fields, const Codebook<T>& book) {
    std::vector<char> seen(book.K(), 0);
    int n = 0;
    for (const auto& f : index_fields)
        for (std::size_t i = 0; i < f.numel(); ++i) {
            const int32_t k = f[i];
            require(k >= 0 && k < book.K(), "code index " + std::to_string(k) + " out of range");
            if (!seen[k]) {
                seen[k] = 1;
                ++n;
            }
        }
    return n;
}

template <typename T>
int count_activated(const Tensor<int32_t>& indices, const Codebook<T>& book) {
    return count_activated(std::vector<Tensor<int32_t>>{indices}, book);
}

// Entries selected fewer than `threshold` times since the last reset are
// re-seeded to random rows of the given encoder-output batch [n, d_z]; all
// usage counters restart. Returns the number of re-seeded entries.
template <typename T>
int reset_dead_codes(Codebook<T>& book, const Tensor<T>& z_hat_batch, std::int64_t threshold, Rng& rng) {
    require(threshold >= 0, "threshold must be nonnegative");
    require(z_hat_batch.ndim() == 2 && z_hat_batch.dim(1) == book.dim(),
            "reset_dead_codes expects a [n,d_z] batch, got " + shape_str(z_hat_batch.shape()));
    const int n = z_hat_batch.dim(0);
    int reseeded = 0;
    Tensor<T>& E = book.entries.value();
    for (int k = 0; k < book.K(); ++k) {
        if (book.usage[k] >= threshold) continue;
        const int row = rng.uniform_int(0, n - 1);
        for (int c = 0; c < book.dim(); ++c) E(k, c) = z_hat_batch(row, c);
        ++reseeded;
    }
    std::fill(book.usage.begin(), book.usage.end(), 0);
    return reseeded;
}

template <typename T>
void save_codebook(const Codebook<T>& book, const std::string& atsr_path, const std::string& json_path) {
    save_atsr(atsr_path, book.entries.value());
    nlohmann::json j;
    j["K"] = book.K();
    j["d_z"] = book.dim();
    j["usage"] = book.usage;
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write " + json_path);
    out << j.dump(2) << "\n";
}

template <typename T>
Codebook<T> load_codebook(const std::string& atsr_path, const std::string& json_path) {
    Codebook<T> book;
    book.entries = Var<T>::leaf(load_atsr<T>(atsr_path), true, "codebook");
    require(book.entries.value().ndim() == 2, "codebook entries must be [K,d_z]");
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot read " + json_path);
    nlohmann::json j;
    in >> j;
    if (int(j.at("K")) != book.K() || int(j.at("d_z")) != book.dim())
        throw DataError("codebook JSON disagrees with entries tensor shape");
    book.usage = j.at("usage").get<std::vector<std::int64_t>>();
    if (int(book.usage.size()) != book.K()) throw DataError("usage length mismatch");
    return book;
}

template <typename T>
void write_usage_csv(const Codebook<T>& book, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "entry_index,count\n";
    for (int k = 0; k < book.K(); ++k) out << k << "," << book.usage[k] << "\n";
}

}  // namespace optiq
