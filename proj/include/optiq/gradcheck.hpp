#pragma once

#include <functional>
#include <vector>

#include "optiq/autodiff.hpp"

// Central finite-difference gradient checker. `build` must reconstruct the
// scalar loss graph from the current leaf values on every call.

namespace optiq {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // leaf name / flat index of the worst element
};

// Checks d(loss)/d(leaf) element by element against (L(+eps)-L(-eps)) / (2 eps).
// Relative error uses |fd|+|ad| as scale with `abs_floor` guarding the
// denominator for near-zero gradients. `max_per_leaf` < 0 checks every element.
template <typename T, typename BuildLoss>
GradCheckReport grad_check(BuildLoss&& build, const std::vector<Var<T>>& leaves, T eps, double abs_floor = 1e-4,
                           int max_per_leaf = -1, Rng* rng = nullptr) {
    Var<T> loss = build();
    backward(loss);
    std::vector<Tensor<T>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) analytic.push_back(l.grad());

    GradCheckReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Var<T> leaf = leaves[li];
        const std::size_t n = leaf.value().numel();
        std::vector<std::size_t> picks;
        if (max_per_leaf < 0 || static_cast<std::size_t>(max_per_leaf) >= n) {
            picks.resize(n);
            for (std::size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            for (int i = 0; i < max_per_leaf; ++i)
                picks.push_back(static_cast<std::size_t>(rng ? rng->uniform_int(0, static_cast<int>(n) - 1) : i));
        }
        for (std::size_t i : picks) {
            const T saved = leaf.value()[i];
            leaf.value()[i] = saved + eps;
            const double lp = static_cast<double>(build().value()[0]);
            leaf.value()[i] = saved - eps;
            const double lm = static_cast<double>(build().value()[0]);
            leaf.value()[i] = saved;
            const double fd = (lp - lm) / (2.0 * static_cast<double>(eps));
            const double ad = static_cast<double>(analytic[li][i]);
            const double err = std::abs(fd - ad) / std::max(std::abs(fd) + std::abs(ad), abs_floor);
            ++rep.checked;
            if (err > rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst = leaf.name() + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace optiq
