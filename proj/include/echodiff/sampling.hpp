// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "echodiff/models.hpp"
#include "echodiff/schedule.hpp"

namespace echodiff {

template <typename T>
struct ReverseSampleResult {
    Tensor<T> image;          // final x0 estimate, clamped to [-1, 1]
    int generator_calls = 0;  // exactly total_steps / span
};

/// Runs the learned reverse chain for one guide image. The draw order is
/// fixed by the seed: first the terminal normal x_T (row-major), then per
/// reverse step a latent vector z followed by the transition noise (the
/// final step emits the posterior mean with no added noise).
template <typename T>
ReverseSampleResult<T> reverse_sample(const GeneratorNet<T>& gen, const Tensor<T>& guide, std::uint64_t rng_seed,
                                      const NoiseSchedule& sched) {
    if (guide.shape().size() != 4 || guide.shape()[0] != 1) {
        throw UsageError("reverse_sample: guide must be [1,C,H,W], got " + shape_str(guide.shape()));
    }
    const std::int64_t s = gen.cfg.side;
    Rng rng(rng_seed);
    Tensor<T> x = Tensor<T>::randn({1, 1, s, s}, rng);
    ReverseSampleResult<T> result;
    for (int t = sched.total_steps; t >= sched.span; t -= sched.span) {
        Tensor<T> z = Tensor<T>::randn({1, gen.cfg.z_dim}, rng);
        Tensor<T> x0_hat = generator_predict(gen, x, guide, t, z);
        ++result.generator_calls;
        auto post = posterior(x0_hat, x, t, sched);
        if (t == sched.span) {
            x = post.mean;
        } else {
            Tensor<T> eps = Tensor<T>::randn({1, 1, s, s}, rng);
            x = add(post.mean, scale(eps, static_cast<T>(std::sqrt(post.variance))));
        }
        if (!all_finite(x)) {
            throw NumericError("reverse_sample: non-finite values at step t = " + std::to_string(t));
        }
    }
    result.image = clamp_values(x, T(-1), T(1));
    return result;
}

}  // namespace echodiff
