#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "optiq/fft.hpp"
#include "optiq/tensor.hpp"

// Reverse-mode differentiation over Tensor<T>. Graphs are built eagerly: each
// op computes its value immediately and records a closure that pushes the
// output gradient into its parents. backward(loss) zero-initializes the
// gradients of every node reachable from `loss` and then accumulates fresh --
// repeated backward calls recompute, they never accumulate across calls.

namespace optiq {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string name;  // nonempty for named parameters
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T = float>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad, std::string name = "") {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->name = std::move(name);
        return Var(n);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    NodePtr<T> node() const { return node_; }

private:
    NodePtr<T> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>::leaf(std::move(value), false);
}

namespace addetail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bp) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(bp);
    }
    // constant subgraphs are pruned: no parents, no closure
    return Var<T>(n);
}

template <typename T>
void accum(Node<T>& parent, std::size_t i, T delta) {
    parent.grad[i] += delta;
}

template <typename T>
bool wants(const Node<T>& n) {
    return n.requires_grad;
}

}  // namespace addetail

// pre: loss is scalar. Gradients of all reachable requires_grad nodes are
// zeroed and recomputed.
template <typename T>
void backward(const Var<T>& loss) {
    require(loss.defined() && loss.value().numel() == 1, "backward: loss must be a scalar");
    // iterative post-order DFS; list ends up parents-before-children
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order)
        if (n->requires_grad) n->grad = Tensor<T>(n->value.shape());
    if (!loss.node()->requires_grad) return;
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

// ---- elementwise ------------------------------------------------------------

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a.value(), b.value(), "add");
    return addetail::make_op<T>(a.value() + b.value(), {a, b}, [](Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[static_cast<std::size_t>(k)];
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a.value(), b.value(), "sub");
    return addetail::make_op<T>(a.value() - b.value(), {a, b}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (pa.requires_grad) pa.grad[i] += n.grad[i];
            if (pb.requires_grad) pb.grad[i] -= n.grad[i];
        }
    });
}

template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a.value(), b.value(), "mul");
    return addetail::make_op<T>(a.value() * b.value(), {a, b}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.value[i];
            if (pb.requires_grad) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

template <typename T>
Var<T> operator*(const Var<T>& a, T s) {
    return addetail::make_op<T>(a.value() * s, {a}, [s](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i] * s;
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = map(a.value(), [](T x) { return x > T(0) ? x : T(0); });
    return addetail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (p.value[i] > T(0)) p.grad[i] += n.grad[i];
    });
}

template <typename T>
Var<T> abs_val(const Var<T>& a) {
    Tensor<T> out = map(a.value(), [](T x) { return x < T(0) ? -x : x; });
    return addetail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const T x = p.value[i];
            if (x > T(0))
                p.grad[i] += n.grad[i];
            else if (x < T(0))
                p.grad[i] -= n.grad[i];
        }
    });
}

// identity value, gradient blocked
template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
    return constant(a.value());
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
    Tensor<T> out({1});
    out[0] = static_cast<T>(sum_d(a.value()));
    return addetail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        const T g = n.grad[0];
        for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const std::size_t count = a.value().numel();
    Tensor<T> out({1});
    out[0] = static_cast<T>(mean_d(a.value()));
    return addetail::make_op<T>(std::move(out), {a}, [count](Node<T>& n) {
        auto& p = *n.parents[0];
        const T g = n.grad[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += g;
    });
}

// ---- structure ops ----------------------------------------------------------

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].value().shape();
    const int nd = static_cast<int>(s0.size());
    require(axis >= 0 && axis < nd, "concat: bad axis");
    Shape out_shape = s0;
    int axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.value().shape();
        require(static_cast<int>(s.size()) == nd, "concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            require(d == axis || s[static_cast<std::size_t>(d)] == s0[static_cast<std::size_t>(d)],
                    "concat: non-axis dims must match");
        axis_total += s[static_cast<std::size_t>(axis)];
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;

    // row-major: treat as [outer, axis, inner]
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);

    Tensor<T> out(out_shape);
    std::vector<int> axis_sizes;
    for (const auto& p : parts) axis_sizes.push_back(p.value().shape()[static_cast<std::size_t>(axis)]);
    {
        std::size_t dst_axis_off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const Tensor<T>& src = parts[pi].value();
            const std::size_t alen = static_cast<std::size_t>(axis_sizes[pi]);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t a = 0; a < alen; ++a)
                    for (std::size_t i = 0; i < inner; ++i)
                        out[(o * static_cast<std::size_t>(axis_total) + dst_axis_off + a) * inner + i] =
                            src[(o * alen + a) * inner + i];
            dst_axis_off += alen;
        }
    }
    return addetail::make_op<T>(std::move(out), parts, [outer, inner, axis_total, axis_sizes](Node<T>& n) {
        std::size_t dst_axis_off = 0;
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
            auto& p = *n.parents[pi];
            const std::size_t alen = static_cast<std::size_t>(axis_sizes[pi]);
            if (p.requires_grad) {
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t a = 0; a < alen; ++a)
                        for (std::size_t i = 0; i < inner; ++i)
                            p.grad[(o * alen + a) * inner + i] +=
                                n.grad[(o * static_cast<std::size_t>(axis_total) + dst_axis_off + a) * inner + i];
            }
            dst_axis_off += alen;
        }
    });
}

// same data, new shape (element count must match)
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    require(shape_numel(shape) == a.value().numel(),
            "reshape: " + shape_str(a.value().shape()) + " -> " + shape_str(shape) + " changes element count");
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i];
    return addetail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
    });
}

// contiguous channel slice [from, to) along axis 0
template <typename T>
Var<T> slice_channels(const Var<T>& a, int from, int to) {
    const Shape& s = a.value().shape();
    require(!s.empty() && from >= 0 && to > from && to <= s[0], "slice_channels: bad range");
    std::size_t inner = 1;
    for (std::size_t d = 1; d < s.size(); ++d) inner *= static_cast<std::size_t>(s[d]);
    Shape out_shape = s;
    out_shape[0] = to - from;
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[static_cast<std::size_t>(from) * inner + i];
    return addetail::make_op<T>(std::move(out), {a}, [from, inner](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p.grad[static_cast<std::size_t>(from) * inner + i] += n.grad[i];
    });
}

// ---- resampling -------------------------------------------------------------

// 2x box average, [C,H,W] -> [C,H/2,W/2]; H and W must be even
template <typename T>
Var<T> downsample_area2(const Var<T>& a) {
    const Shape& s = a.value().shape();
    require(s.size() == 3 && s[1] % 2 == 0 && s[2] % 2 == 0, "downsample_area2: expected [C,even,even]");
    const int C = s[0], H = s[1], W = s[2];
    Tensor<T> out({C, H / 2, W / 2});
    const Tensor<T>& x = a.value();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H / 2; ++y)
            for (int xo = 0; xo < W / 2; ++xo)
                out(c, y, xo) = (x(c, 2 * y, 2 * xo) + x(c, 2 * y, 2 * xo + 1) + x(c, 2 * y + 1, 2 * xo) +
                                 x(c, 2 * y + 1, 2 * xo + 1)) *
                                T(0.25);
    return addetail::make_op<T>(std::move(out), {a}, [C, H, W](Node<T>& n) {
        auto& p = *n.parents[0];
        Tensor<T>& g = p.grad;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H / 2; ++y)
                for (int xo = 0; xo < W / 2; ++xo) {
                    const T gv = n.grad(c, y, xo) * T(0.25);
                    g(c, 2 * y, 2 * xo) += gv;
                    g(c, 2 * y, 2 * xo + 1) += gv;
                    g(c, 2 * y + 1, 2 * xo) += gv;
                    g(c, 2 * y + 1, 2 * xo + 1) += gv;
                }
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& a) {
    const Shape& s = a.value().shape();
    require(s.size() == 3, "upsample_nearest2: expected [C,H,W]");
    const int C = s[0], H = s[1], W = s[2];
    Tensor<T> out({C, 2 * H, 2 * W});
    const Tensor<T>& x = a.value();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int xo = 0; xo < 2 * W; ++xo) out(c, y, xo) = x(c, y / 2, xo / 2);
    return addetail::make_op<T>(std::move(out), {a}, [C, H, W](Node<T>& n) {
        auto& p = *n.parents[0];
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int xo = 0; xo < 2 * W; ++xo) p.grad(c, y / 2, xo / 2) += n.grad(c, y, xo);
    });
}

// pixel shuffle: [C*r^2,H,W] -> [C,rH,rW], out(c, r*h+dy, r*w+dx) = in(c*r^2 + dy*r + dx, h, w)
template <typename T>
Var<T> pixel_shuffle(const Var<T>& a, int r) {
    const Shape& s = a.value().shape();
    require(s.size() == 3, "pixel_shuffle: expected [C,H,W]");
    require(r >= 1 && s[0] % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
    const int C = s[0] / (r * r), H = s[1], W = s[2];
    Tensor<T> out({C, r * H, r * W});
    const Tensor<T>& x = a.value();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        out(c, r * h + dy, r * w + dx) = x(c * r * r + dy * r + dx, h, w);
    return addetail::make_op<T>(std::move(out), {a}, [C, H, W, r](Node<T>& n) {
        auto& p = *n.parents[0];
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            p.grad(c * r * r + dy * r + dx, h, w) += n.grad(c, r * h + dy, r * w + dx);
    });
}

// exact inverse of pixel_shuffle: [C,rH,rW] -> [C*r^2,H,W]
template <typename T>
Var<T> pixel_unshuffle(const Var<T>& a, int r) {
    const Shape& s = a.value().shape();
    require(s.size() == 3, "pixel_unshuffle: expected [C,H,W]");
    require(r >= 1 && s[1] % r == 0 && s[2] % r == 0, "pixel_unshuffle: spatial dims not divisible by r");
    const int C = s[0], H = s[1] / r, W = s[2] / r;
    Tensor<T> out({C * r * r, H, W});
    const Tensor<T>& x = a.value();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        out(c * r * r + dy * r + dx, h, w) = x(c, r * h + dy, r * w + dx);
    return addetail::make_op<T>(std::move(out), {a}, [C, H, W, r](Node<T>& n) {
        auto& p = *n.parents[0];
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            p.grad(c, r * h + dy, r * w + dx) += n.grad(c * r * r + dy * r + dx, h, w);
    });
}

// ---- convolution ------------------------------------------------------------

namespace addetail {

// clamped source index tables for replicate padding
inline std::vector<int> conv_index_table(int out_len, int in_len, int k, int stride) {
    const int pad = (k - 1) / 2;
    std::vector<int> t(static_cast<std::size_t>(out_len) * k);
    for (int o = 0; o < out_len; ++o)
        for (int j = 0; j < k; ++j) {
            int idx = o * stride - pad + j;
            t[static_cast<std::size_t>(o) * k + j] = std::min(in_len - 1, std::max(0, idx));
        }
    return t;
}

inline int conv_out_len(int in_len, int k, int stride) {
    const int pad = (k - 1) / 2;
    return (in_len + 2 * pad - k) / stride + 1;
}

// Output-column range [lo, hi] whose source index o*stride+off stays inside
// [0, in_len); columns outside it read the clamped border sample.
inline void conv_col_range(int out_len, int in_len, int off, int stride, int& lo, int& hi) {
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    hi = (in_len - 1 - off) >= 0 ? std::min(out_len - 1, (in_len - 1 - off) / stride) : -1;
    if (lo > out_len) lo = out_len;
}

}  // namespace addetail

// Cross-correlation with replicate padding (learned-filter convention, no
// kernel flip). input [Cin,H,W], kernel [Cout,Cin,kh,kw], kh/kw odd,
// stride >= 1. Output [Cout, ceil(H/stride), ceil(W/stride)].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int stride = 1) {
    const Shape& xs = input.value().shape();
    const Shape& ws = kernel.value().shape();
    require(xs.size() == 3, "conv2d: input must be [Cin,H,W]");
    require(ws.size() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw]");
    require(ws[2] % 2 == 1 && ws[3] % 2 == 1, "conv2d: kernel dims must be odd");
    require(stride >= 1, "conv2d: bad stride");
    if (xs[0] != ws[1])
        throw ShapeError("conv2d: input channels " + std::to_string(xs[0]) + " != kernel Cin " + std::to_string(ws[1]));
    const int Cin = xs[0], H = xs[1], W = xs[2];
    const int Cout = ws[0], kh = ws[2], kw = ws[3];
    const int Ho = addetail::conv_out_len(H, kh, stride);
    const int Wo = addetail::conv_out_len(W, kw, stride);

    const auto iy = addetail::conv_index_table(Ho, H, kh, stride);

    // Tap-ordered loops: for each (co,ci,ky,kx) the weight is a scalar and the
    // inner loop runs contiguously over output columns, accumulating into a
    // double row buffer. Border columns (clamped source index) are handled
    // outside the vectorizable interior range.
    Tensor<T> out({Cout, Ho, Wo});
    const T* x = input.value().data();
    const T* wgt = kernel.value().data();
    const int pad_w = (kw - 1) / 2;
    std::vector<double> plane(static_cast<std::size_t>(Ho) * Wo);
    for (int co = 0; co < Cout; ++co) {
        std::fill(plane.begin(), plane.end(), 0.0);
        for (int ci = 0; ci < Cin; ++ci) {
            const T* xc = x + static_cast<std::size_t>(ci) * H * W;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wgt[((static_cast<std::size_t>(co) * Cin + ci) * kh + ky) * kw + kx];
                    if (wv == 0.0) continue;
                    const int off = kx - pad_w;
                    int lo, hi;
                    addetail::conv_col_range(Wo, W, off, stride, lo, hi);
                    for (int yo = 0; yo < Ho; ++yo) {
                        const T* xrow = xc + static_cast<std::size_t>(iy[static_cast<std::size_t>(yo) * kh + ky]) * W;
                        double* orow = plane.data() + static_cast<std::size_t>(yo) * Wo;
                        for (int xo = 0; xo < lo; ++xo) orow[xo] += wv * static_cast<double>(xrow[0]);
                        if (stride == 1)
                            for (int xo = lo; xo <= hi; ++xo) orow[xo] += wv * static_cast<double>(xrow[xo + off]);
                        else
                            for (int xo = lo; xo <= hi; ++xo)
                                orow[xo] += wv * static_cast<double>(xrow[xo * stride + off]);
                        for (int xo = hi + 1; xo < Wo; ++xo) orow[xo] += wv * static_cast<double>(xrow[W - 1]);
                    }
                }
        }
        T* oc = out.data() + static_cast<std::size_t>(co) * Ho * Wo;
        for (std::size_t i = 0; i < plane.size(); ++i) oc[i] = static_cast<T>(plane[i]);
    }

    return addetail::make_op<T>(std::move(out), {input, kernel},
                                [Cin, H, W, Cout, kh, kw, Ho, Wo, stride, iy, pad_w](Node<T>& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        const bool wx = px.requires_grad, ww = pw.requires_grad;
        const T* g = n.grad.data();
        for (int co = 0; co < Cout; ++co)
            for (int ci = 0; ci < Cin; ++ci) {
                const T* xc = px.value.data() + static_cast<std::size_t>(ci) * H * W;
                T* gx = wx ? px.grad.data() + static_cast<std::size_t>(ci) * H * W : nullptr;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::size_t widx = ((static_cast<std::size_t>(co) * Cin + ci) * kh + ky) * kw + kx;
                        const T wv = pw.value[widx];
                        const int off = kx - pad_w;
                        int lo, hi;
                        addetail::conv_col_range(Wo, W, off, stride, lo, hi);
                        double wacc = 0.0;
                        for (int yo = 0; yo < Ho; ++yo) {
                            const int ysrc = iy[static_cast<std::size_t>(yo) * kh + ky];
                            const T* xrow = xc + static_cast<std::size_t>(ysrc) * W;
                            const T* grow = g + (static_cast<std::size_t>(co) * Ho + yo) * Wo;
                            if (ww) {
                                double s = 0.0;
                                for (int xo = 0; xo < lo; ++xo) s += static_cast<double>(grow[xo]) * xrow[0];
                                if (stride == 1)
                                    for (int xo = lo; xo <= hi; ++xo)
                                        s += static_cast<double>(grow[xo]) * xrow[xo + off];
                                else
                                    for (int xo = lo; xo <= hi; ++xo)
                                        s += static_cast<double>(grow[xo]) * xrow[xo * stride + off];
                                for (int xo = hi + 1; xo < Wo; ++xo) s += static_cast<double>(grow[xo]) * xrow[W - 1];
                                wacc += s;
                            }
                            if (wx) {
                                T* gxrow = gx + static_cast<std::size_t>(ysrc) * W;
                                for (int xo = 0; xo < lo; ++xo) gxrow[0] += wv * grow[xo];
                                if (stride == 1)
                                    for (int xo = lo; xo <= hi; ++xo) gxrow[xo + off] += wv * grow[xo];
                                else
                                    for (int xo = lo; xo <= hi; ++xo) gxrow[xo * stride + off] += wv * grow[xo];
                                for (int xo = hi + 1; xo < Wo; ++xo) gxrow[W - 1] += wv * grow[xo];
                            }
                        }
                        if (ww) pw.grad[widx] += static_cast<T>(wacc);
                    }
            }
    });
}

// per-channel bias: x [C,H,W] + b [C]
template <typename T>
Var<T> bias_add(const Var<T>& x, const Var<T>& b) {
    const Shape& xs = x.value().shape();
    require(xs.size() == 3, "bias_add: expected [C,H,W]");
    require(b.value().ndim() == 1 && b.value().dim(0) == xs[0], "bias_add: bias must be [C]");
    const int C = xs[0], H = xs[1], W = xs[2];
    Tensor<T> out = x.value();
    for (int c = 0; c < C; ++c) {
        const T bv = b.value()[static_cast<std::size_t>(c)];
        T* plane = out.data() + static_cast<std::size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) plane[i] += bv;
    }
    return addetail::make_op<T>(std::move(out), {x, b}, [C, H, W](Node<T>& n) {
        auto& px = *n.parents[0];
        auto& pb = *n.parents[1];
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const T* gplane = n.grad.data() + static_cast<std::size_t>(c) * H * W;
            for (int i = 0; i < H * W; ++i) {
                if (px.requires_grad) px.grad[static_cast<std::size_t>(c) * H * W + i] += gplane[i];
                s += static_cast<double>(gplane[i]);
            }
            if (pb.requires_grad) pb.grad[static_cast<std::size_t>(c)] += static_cast<T>(s);
        }
    });
}

// ---- spectral ---------------------------------------------------------------

// Differentiable unnormalized 2-D DFT, [H,W] -> [2,H,W] (Re, Im). The DFT is
// linear in its input, so the pullback is the real part of the unnormalized
// inverse transform applied to the output gradient.
template <typename T>
Var<T> fft2(const Var<T>& a) {
    Tensor<T> out = fft2(a.value());
    const int H = a.value().dim(0), W = a.value().dim(1);
    return addetail::make_op<T>(std::move(out), {a}, [H, W](Node<T>& n) {
        auto& p = *n.parents[0];
        const std::size_t sz = static_cast<std::size_t>(H) * W;
        fftdetail::cvec<double> buf(sz);
        for (std::size_t i = 0; i < sz; ++i)
            buf[i] = std::complex<double>(static_cast<double>(n.grad[i]), static_cast<double>(n.grad[sz + i]));
        fftdetail::fft2_buffer(buf, H, W, /*inverse=*/true, /*normalize=*/false);
        for (std::size_t i = 0; i < sz; ++i) p.grad[i] += static_cast<T>(buf[i].real());
    });
}

// ---- discrete-code plumbing ---------------------------------------------------

// entries [K,d], indices flat over h*w positions -> [d,h,w]; the pullback
// scatter-adds into the selected rows only.
template <typename T>
Var<T> gather_codes(const Var<T>& entries, const std::vector<int>& indices, int h, int w) {
    const Shape& es = entries.value().shape();
    require(es.size() == 2, "gather_codes: entries must be [K,d]");
    require(static_cast<int>(indices.size()) == h * w, "gather_codes: index count mismatch");
    const int K = es[0], d = es[1];
    for (int idx : indices) require(idx >= 0 && idx < K, "gather_codes: index out of range");
    Tensor<T> out({d, h, w});
    for (int pos = 0; pos < h * w; ++pos)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j) * h * w + pos] = entries.value()(indices[static_cast<std::size_t>(pos)], j);
    return addetail::make_op<T>(std::move(out), {entries}, [indices, h, w, d](Node<T>& n) {
        auto& p = *n.parents[0];
        for (int pos = 0; pos < h * w; ++pos)
            for (int j = 0; j < d; ++j)
                p.grad(indices[static_cast<std::size_t>(pos)], j) += n.grad[static_cast<std::size_t>(j) * h * w + pos];
    });
}

// Straight-through estimator: value is z_q, gradient passes to z_hat with an
// identity Jacobian. The codebook sees nothing through this path.
template <typename T>
Var<T> straight_through(const Var<T>& z_hat, const Tensor<T>& z_q) {
    check_same_shape(z_hat.value(), z_q, "straight_through");
    return addetail::make_op<T>(Tensor<T>(z_q), {z_hat}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
    });
}

}  // namespace optiq
