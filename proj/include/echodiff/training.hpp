// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "echodiff/data.hpp"
#include "echodiff/models.hpp"
#include "echodiff/schedule.hpp"

namespace echodiff {

struct TrainConfig {
    int epochs = 500;
    int batch_size = 8;
    double lr_g = 1.6e-4;
    double lr_d = 1.6e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    double lambda_rec = 50.0;
    double val_fraction = 0.10;
    std::uint64_t seed = 1;
    int side = 64;
    int z_dim = 8;
    bool onehot_mask = false;
    bool logistic_adv_loss = false;  // least-squares objective by default
    int total_steps = 1000;
    int span = 250;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    double variance_floor_scale = 1e-4;
    double variance_ceiling_scale = 1.0;

    void validate() const;
    NoiseSchedule make_noise_schedule() const {
        return make_schedule(total_steps, span, beta_min, beta_max, variance_floor_scale, variance_ceiling_scale);
    }
    ModelConfig model_config() const {
        ModelConfig m;
        m.side = side;
        m.z_dim = z_dim;
        m.total_steps = total_steps;
        m.onehot_mask = onehot_mask;
        m.seed = seed;
        return m;
    }
};

struct StepReport {
    std::int64_t step = 0;
    double d_loss = 0.0;
    double g_adv_loss = 0.0;
    double g_rec_loss = 0.0;  // plain mean absolute reconstruction error
    bool finite = true;
};

struct EpochSummary {
    int epoch = 0;                // 1-based
    double val_rec_loss = 0.0;    // mean |x0_hat - x0| over the validation set
};

/// Least-squares adversarial objective for the discriminator:
/// real pairs are pushed to score 1, generated pairs to 0.
template <typename T>
T discriminator_loss(T real_score, T fake_score) {
    if (!std::isfinite(static_cast<double>(real_score)) || !std::isfinite(static_cast<double>(fake_score))) {
        throw NumericError("discriminator_loss: non-finite score");
    }
    const T r = real_score - T(1);
    return T(0.5) * r * r + T(0.5) * fake_score * fake_score;
}

/// Least-squares adversarial term plus the weighted mean absolute
/// reconstruction anchor.
template <typename T>
T generator_loss(T fake_score, const Tensor<T>& x0_hat, const Tensor<T>& x0, T lambda_rec) {
    if (!std::isfinite(static_cast<double>(fake_score))) {
        throw NumericError("generator_loss: non-finite score");
    }
    detail::check_same_shape("generator_loss", x0_hat, x0);
    T l1 = 0;
    auto a = x0_hat.data(), b = x0.data();
    for (std::size_t i = 0; i < a.size(); ++i) l1 += a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    l1 /= static_cast<T>(a.size());
    const T f = fake_score - T(1);
    return T(0.5) * f * f + lambda_rec * l1;
}

/// Adaptive-moment optimizer over an externally owned parameter list.
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<Tensor<T>*> params, double lr, double beta1, double beta2, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto* p : params_) {
            m_.emplace_back(p->numel(), T(0));
            v_.emplace_back(p->numel(), T(0));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    /// One update; tensors with no accumulated gradient see a zero gradient.
    void step() {
        ++t_;
        const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(t_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(t_)));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto* p = params_[pi];
            auto data = p->mutable_data();
            const auto grad = p->grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const T g = i < grad.size() ? grad[i] : T(0);
                m[i] = static_cast<T>(beta1_) * m[i] + (T(1) - static_cast<T>(beta1_)) * g;
                v[i] = static_cast<T>(beta2_) * v[i] + (T(1) - static_cast<T>(beta2_)) * g * g;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                data[i] -= static_cast<T>(lr_) * mhat / (std::sqrt(vhat) + static_cast<T>(eps_));
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }

private:
    std::vector<Tensor<T>*> params_;
    double lr_ = 0.0, beta1_ = 0.5, beta2_ = 0.9, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

/// A true joint draw (x_{t-k}, x_t) from the forward chain at a uniformly
/// chosen span boundary t.
template <typename T>
struct TrainingTriple {
    int t = 0;
    Tensor<T> x_tmk;
    Tensor<T> x_t;
};

template <typename T>
TrainingTriple<T> sample_training_triple(const Tensor<T>& x0, const NoiseSchedule& sched, Rng& rng) {
    TrainingTriple<T> triple;
    const int spans = sched.reverse_steps();
    triple.t = sched.span * (1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spans))));
    if (triple.t == sched.span) {
        triple.x_tmk = x0;
    } else {
        Tensor<T> eps1 = Tensor<T>::randn(x0.shape(), rng);
        triple.x_tmk = forward_marginal(x0, triple.t - sched.span, eps1, sched);
    }
    Tensor<T> eps2 = Tensor<T>::randn(x0.shape(), rng);
    triple.x_t = forward_span(triple.x_tmk, triple.t, eps2, sched);
    return triple;
}

/// Mutable training session: the nets plus their optimizer states. Owns the
/// parameters; not copyable so optimizer parameter pointers stay valid.
class TrainState {
public:
    explicit TrainState(const TrainConfig& cfg);
    TrainState(const TrainState&) = delete;
    TrainState& operator=(const TrainState&) = delete;

    GeneratorNet<float> gen;
    DiscriminatorNet<float> disc;
    AdamOptimizer<float> opt_g;
    AdamOptimizer<float> opt_d;
    std::int64_t step_count = 0;
};

/// One discriminator update on a (real, generated) pair followed by one
/// generator update on a fresh draw. Throws NumericError with the step index
/// if a loss turns non-finite.
StepReport train_step(const std::vector<const GuidedSample*>& batch, TrainState& state, const NoiseSchedule& sched,
                      const TrainConfig& cfg, Rng& rng);

struct TrainHooks {
    std::function<void(const StepReport&)> on_step;
    std::function<void(const EpochSummary&)> on_epoch;
    std::function<void(const TrainState&, int epoch)> on_checkpoint;  // rolling checkpoint writer
};

/// Full loop: seeded split, epochs x batches of train_step, per-epoch
/// validation and rolling checkpoint hook. Returns the final state.
std::unique_ptr<TrainState> train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace echodiff
