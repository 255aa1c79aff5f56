// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "echodiff/ops.hpp"
#include "echodiff/tensor.hpp"

namespace echodiff {

/// Compares the reverse-mode gradient of a pure scalar-valued function
/// against central differences. Returns the worst relative error
/// |analytic - central| / max(|analytic|, |central|, 1e-8) over the checked
/// components (all of x by default). Non-finite intermediates are reported
/// with the offending operator name.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double step,
                  const std::vector<std::int64_t>& components = {}) {
    for (T v : x.data()) {
        if (!std::isfinite(static_cast<double>(v))) throw UsageError("grad_check: input is not finite");
    }

    auto graph = make_graph<T>();
    graph->check_finite = true;
    Tensor<T> leaf = x.detached();
    leaf.set_requires_grad(true);
    Tensor<T> loss = f(leaf.attached(graph));
    if (loss.numel() != 1) throw UsageError("grad_check: f must return a scalar");
    backward(loss);
    std::vector<T> analytic(x.numel(), T(0));
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());

    std::vector<std::int64_t> idx = components;
    if (idx.empty()) {
        idx.resize(static_cast<std::size_t>(x.numel()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
    }

    double worst = 0.0;
    for (auto i : idx) {
        Tensor<T> xp = x.detached();
        Tensor<T> xm = x.detached();
        xp.mutable_data()[static_cast<std::size_t>(i)] += static_cast<T>(step);
        xm.mutable_data()[static_cast<std::size_t>(i)] -= static_cast<T>(step);
        const double fp = static_cast<double>(f(xp).item());
        const double fm = static_cast<double>(f(xm).item());
        const double central = (fp - fm) / (2.0 * step);
        const double a = static_cast<double>(analytic[static_cast<std::size_t>(i)]);
        const double denom = std::max({std::fabs(a), std::fabs(central), 1e-8});
        worst = std::max(worst, std::fabs(a - central) / denom);
    }
    return worst;
}

}  // namespace echodiff
