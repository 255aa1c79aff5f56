// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/schedule.hpp"

#include <algorithm>
#include <string>

namespace echodiff {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar.at(static_cast<std::size_t>(t - 1));
}

NoiseSchedule make_schedule(int total_steps, int span, double beta_min, double beta_max,
                            double variance_floor_scale, double variance_ceiling_scale) {
    if (total_steps < 1) throw UsageError("make_schedule: total_steps must be positive");
    if (span < 1 || total_steps % span != 0) {
        throw UsageError("make_schedule: span = " + std::to_string(span) + " must divide total_steps = " +
                         std::to_string(total_steps));
    }
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw UsageError("make_schedule: need 0 < beta_min <= beta_max < 1, got beta_min = " +
                         std::to_string(beta_min) + ", beta_max = " + std::to_string(beta_max));
    }
    if (!(variance_floor_scale > 0.0) || !(variance_floor_scale <= variance_ceiling_scale)) {
        throw UsageError("make_schedule: need 0 < variance_floor_scale <= variance_ceiling_scale");
    }

    NoiseSchedule s;
    s.total_steps = total_steps;
    s.span = span;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.variance_floor_scale = variance_floor_scale;
    s.variance_ceiling_scale = variance_ceiling_scale;
    s.beta.resize(static_cast<std::size_t>(total_steps));
    s.alpha_bar.resize(static_cast<std::size_t>(total_steps));
    double running = 1.0;
    for (int t = 1; t <= total_steps; ++t) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (total_steps - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        running *= 1.0 - beta;
        s.beta[static_cast<std::size_t>(t - 1)] = beta;
        s.alpha_bar[static_cast<std::size_t>(t - 1)] = running;
    }
    return s;
}

SpanCoefficients span_coefficients(const NoiseSchedule& sched, int t) {
    if (t == 0) throw UsageError("span: t = 0 has no step to take");
    if (t < 0 || t > sched.total_steps || t % sched.span != 0) {
        throw UsageError("span: t = " + std::to_string(t) + " is not a multiple of the span size " +
                         std::to_string(sched.span) + " within 1.." + std::to_string(sched.total_steps));
    }
    const int k = sched.span;
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t - k);

    SpanCoefficients c;
    c.t = t;
    c.alpha_span = ab_t / ab_prev;
    c.beta_span = 1.0 - c.alpha_span;
    c.posterior_mean_coeff_x0 = std::sqrt(ab_prev) * c.beta_span / (1.0 - ab_t);
    c.posterior_mean_coeff_xt = std::sqrt(c.alpha_span) * (1.0 - ab_prev) / (1.0 - ab_t);
    c.variance_floor = sched.variance_floor_scale * c.beta_span;
    c.variance_ceiling = sched.variance_ceiling_scale * c.beta_span;
    const double raw = c.beta_span * (1.0 - ab_prev) / (1.0 - ab_t);
    c.posterior_variance = std::clamp(raw, c.variance_floor, c.variance_ceiling);
    return c;
}

}  // namespace echodiff
