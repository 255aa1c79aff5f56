// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "echodiff/ops.hpp"
#include "echodiff/tensor.hpp"

namespace echodiff {

/// Forward-chain constants: per-step variances beta_t, their running
/// signal products alpha_bar_t, and the clamp bounds applied to the learned
/// reverse variance. The reverse pass jumps in spans of `span` fine steps
/// and therefore visits total_steps/span learned steps.
struct NoiseSchedule {
    int total_steps = 1000;              // T
    int span = 250;                      // k; divides T
    double beta_min = 1e-4;
    double beta_max = 0.02;
    std::vector<double> beta;            // beta[t-1] is the step-t variance, t = 1..T
    std::vector<double> alpha_bar;       // alpha_bar[t-1] = prod_{s<=t} (1 - beta_s)
    double variance_floor_scale = 1e-4;  // reverse variance >= scale * beta_span
    double variance_ceiling_scale = 1.0; // reverse variance <= scale * beta_span

    int reverse_steps() const { return total_steps / span; }

    /// alpha_bar with the t = 0 convention alpha_bar(0) = 1.
    double alpha_bar_at(int t) const;
};

/// Per-span closed-form Gaussian quantities for one reverse step at fine
/// index t (a multiple of the span size).
struct SpanCoefficients {
    int t = 0;
    double alpha_span = 0.0;   // alpha_bar(t) / alpha_bar(t-k)
    double beta_span = 0.0;    // 1 - alpha_span
    double posterior_mean_coeff_x0 = 0.0;
    double posterior_mean_coeff_xt = 0.0;
    double posterior_variance = 0.0;  // clamped to the schedule's bounds
    double variance_floor = 0.0;      // sigma_floor^2 for this span
    double variance_ceiling = 0.0;    // sigma_ceiling^2 for this span
};

/// Linear beta ramp from beta_min to beta_max over T steps with running
/// alpha_bar products.
NoiseSchedule make_schedule(int total_steps, int span, double beta_min, double beta_max,
                            double variance_floor_scale = 1e-4, double variance_ceiling_scale = 1.0);

/// Gaussian-Bayes coefficients for q(x_{t-k} | x_t, x0) under the span
/// parameterization; throws unless t is a positive multiple of the span.
SpanCoefficients span_coefficients(const NoiseSchedule& sched, int t);

/// Closed-form t-step marginal: sqrt(alpha_bar_t) x0 + sqrt(1-alpha_bar_t) eps.
template <typename T>
Tensor<T> forward_marginal(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.total_steps) {
        throw UsageError("forward_marginal: t = " + std::to_string(t) + " out of range 1.." +
                         std::to_string(sched.total_steps));
    }
    detail::check_same_shape("forward_marginal", x0, eps);
    const double ab = sched.alpha_bar_at(t);
    return add(scale(x0, static_cast<T>(std::sqrt(ab))), scale(eps, static_cast<T>(std::sqrt(1.0 - ab))));
}

/// One k-sized forward jump from a sample at fine step t-k to fine step t.
/// Uses the composed span variance so that chaining spans reproduces the
/// closed-form marginal exactly.
template <typename T>
Tensor<T> forward_span(const Tensor<T>& x_prev, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
    const auto c = span_coefficients(sched, t);
    detail::check_same_shape("forward_span", x_prev, eps);
    return add(scale(x_prev, static_cast<T>(std::sqrt(c.alpha_span))),
               scale(eps, static_cast<T>(std::sqrt(c.beta_span))));
}

/// Reverse-step posterior evaluated at a predicted clean image: the mean of
/// q(x_{t-k} | x_t, x0 = x0_hat) plus the clamped span variance.
template <typename T>
struct Posterior {
    Tensor<T> mean;
    double variance = 0.0;
};

template <typename T>
Posterior<T> posterior(const Tensor<T>& x0_hat, const Tensor<T>& x_t, int t, const NoiseSchedule& sched) {
    const auto c = span_coefficients(sched, t);
    detail::check_same_shape("posterior", x0_hat, x_t);
    Posterior<T> p;
    p.mean = add(scale(x0_hat, static_cast<T>(c.posterior_mean_coeff_x0)),
                 scale(x_t, static_cast<T>(c.posterior_mean_coeff_xt)));
    p.variance = c.posterior_variance;
    return p;
}

}  // namespace echodiff
