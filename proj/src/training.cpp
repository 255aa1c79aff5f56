// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace echodiff {

void TrainConfig::validate() const {
    if (epochs < 0) throw UsageError("train config: epochs must be >= 0");
    if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (!(lr_g >= 0.0) || !(lr_d >= 0.0)) throw UsageError("train config: learning rates must be non-negative");
    if (!(lambda_rec >= 0.0)) throw UsageError("train config: lambda_rec must be non-negative");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw UsageError("train config: val_fraction must be in (0,1), got " + std::to_string(val_fraction));
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw UsageError("train config: adaptive-moment coefficients must be in [0,1)");
    }
}

TrainState::TrainState(const TrainConfig& cfg)
    : gen(build_generator<float>(cfg.model_config())),
      disc(build_discriminator<float>(cfg.model_config())),
      opt_g(gen.parameters(), cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2),
      opt_d(disc.parameters(), cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2) {}

namespace {

struct BatchTensors {
    Tensor<float> x0;     // [B,1,H,W]
    Tensor<float> guide;  // [B,gc,H,W]
};

BatchTensors stack_batch(const std::vector<const GuidedSample*>& batch, bool onehot) {
    const int h = batch[0]->image.h, w = batch[0]->image.w;
    const std::int64_t b = static_cast<std::int64_t>(batch.size());
    const std::int64_t gc = onehot ? 4 : 1;
    std::vector<float> img(static_cast<std::size_t>(b) * h * w);
    std::vector<float> gd(static_cast<std::size_t>(b) * gc * h * w);
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& s = *batch[static_cast<std::size_t>(i)];
        if (s.image.h != h || s.image.w != w) throw DataError("train batch: mixed spatial shapes");
        std::copy(s.image.pix.begin(), s.image.pix.end(), img.begin() + i * h * w);
        const auto g = guide_to_tensor(s.mask, onehot);
        std::copy(g.data().begin(), g.data().end(), gd.begin() + i * gc * h * w);
    }
    return {Tensor<float>({b, 1, h, w}, std::move(img)), Tensor<float>({b, gc, h, w}, std::move(gd))};
}

Tensor<float> lsgan_target_sq(const Tensor<float>& score, float target) {
    auto shifted = add_scalar(score, -target);
    return scale(mul(shifted, shifted), 0.5f);
}

float checked(const char* what, std::int64_t step, float v) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("train_step ") + std::to_string(step) + ": non-finite " + what);
    }
    return v;
}

}  // namespace

StepReport train_step(const std::vector<const GuidedSample*>& batch, TrainState& state, const NoiseSchedule& sched,
                      const TrainConfig& cfg, Rng& rng) {
    if (batch.empty()) throw UsageError("train_step: empty batch");
    const std::int64_t step_index = state.step_count + 1;
    auto tensors = stack_batch(batch, cfg.onehot_mask);
    const auto triple = sample_training_triple(tensors.x0, sched, rng);
    const std::int64_t b = tensors.x0.shape()[0];
    const float lambda = static_cast<float>(cfg.lambda_rec);

    StepReport report;
    report.step = step_index;

    // Discriminator phase. The generated candidate is produced outside any
    // graph so no gradient can reach generator parameters.
    {
        Tensor<float> z = Tensor<float>::randn({b, cfg.z_dim}, rng);
        Tensor<float> x0_hat = state.gen.forward(triple.x_t, tensors.guide, triple.t, z);
        auto post = posterior(x0_hat, triple.x_t, triple.t, sched);
        Tensor<float> noise = Tensor<float>::randn(post.mean.shape(), rng);
        Tensor<float> fake = add(post.mean, scale(noise, static_cast<float>(std::sqrt(post.variance))));

        auto graph = make_graph<float>();
        auto real_score = mean_all(state.disc.forward(triple.x_tmk.attached(graph), triple.x_t, triple.t));
        auto fake_score = mean_all(state.disc.forward(fake, triple.x_t, triple.t));
        Tensor<float> d_loss;
        if (cfg.logistic_adv_loss) {
            d_loss = add(softplus(scale(real_score, -1.0f)), softplus(fake_score));
        } else {
            d_loss = add(lsgan_target_sq(real_score, 1.0f), lsgan_target_sq(fake_score, 0.0f));
        }
        report.d_loss = checked("d_loss", step_index, d_loss.item());
        state.opt_d.zero_grad();
        state.opt_g.zero_grad();
        backward(d_loss);
        state.opt_d.step();
    }

    // Generator phase: fresh latent and transition noise, gradient flows
    // through the posterior mean and the discriminator score.
    {
        Tensor<float> z = Tensor<float>::randn({b, cfg.z_dim}, rng);
        Tensor<float> noise = Tensor<float>::randn(tensors.x0.shape(), rng);

        auto graph = make_graph<float>();
        Tensor<float> x0_hat = state.gen.forward(triple.x_t.attached(graph), tensors.guide, triple.t, z);
        auto post = posterior(x0_hat, triple.x_t, triple.t, sched);
        Tensor<float> candidate = add(post.mean, scale(noise, static_cast<float>(std::sqrt(post.variance))));
        auto fake_score = mean_all(state.disc.forward(candidate, triple.x_t, triple.t));
        Tensor<float> g_adv;
        if (cfg.logistic_adv_loss) {
            g_adv = softplus(scale(fake_score, -1.0f));
        } else {
            g_adv = lsgan_target_sq(fake_score, 1.0f);
        }
        Tensor<float> rec = mean_all(abs(sub(x0_hat, tensors.x0)));
        Tensor<float> g_loss = add(g_adv, scale(rec, lambda));

        report.g_adv_loss = checked("g_adv_loss", step_index, g_adv.item());
        report.g_rec_loss = checked("g_rec_loss", step_index, rec.item());
        checked("g_loss", step_index, g_loss.item());
        state.opt_g.zero_grad();
        state.opt_d.zero_grad();
        backward(g_loss);
        state.opt_g.step();
    }

    state.step_count = step_index;
    report.finite = true;
    return report;
}

namespace {

double validation_rec_loss(const Dataset& val, TrainState& state, const NoiseSchedule& sched, const TrainConfig& cfg,
                           int epoch) {
    double total = 0.0;
    for (const auto& s : val.samples) {
        Rng rng(derive_seed(cfg.seed, "val:" + std::to_string(epoch) + ":" + s.id));
        const auto x0 = image_to_tensor(s.image);
        const auto guide = guide_to_tensor(s.mask, cfg.onehot_mask);
        const auto triple = sample_training_triple(x0, sched, rng);
        Tensor<float> z = Tensor<float>::randn({1, cfg.z_dim}, rng);
        Tensor<float> x0_hat = state.gen.forward(triple.x_t, guide, triple.t, z);
        total += static_cast<double>(mean_all(abs(sub(x0_hat, x0))).item());
    }
    return total / static_cast<double>(val.samples.size());
}

}  // namespace

std::unique_ptr<TrainState> train(const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (dataset.samples.empty()) throw DataError("train: empty dataset");

    // Seeded 90/10-style split; degenerate sizes (e.g. a single sample) fall
    // back to validating on the training set.
    Dataset train_ds, val_ds;
    const auto n = dataset.samples.size();
    const auto train_n =
        static_cast<std::size_t>(std::llround((1.0 - cfg.val_fraction) * static_cast<double>(n)));
    if (train_n == 0 || train_n == n) {
        train_ds = dataset;
        val_ds = dataset;
    } else {
        auto parts = split(dataset, 1.0 - cfg.val_fraction, cfg.seed);
        train_ds = std::move(parts.first);
        val_ds = std::move(parts.second);
    }

    auto state = std::make_unique<TrainState>(cfg);
    const NoiseSchedule sched = cfg.make_noise_schedule();
    Rng rng(derive_seed(cfg.seed, "train"));

    std::vector<std::size_t> order(train_ds.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_index(i));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const GuidedSample*> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_ds.samples[order[i]]);
            const StepReport report = train_step(batch, *state, sched, cfg, rng);
            if (hooks.on_step) hooks.on_step(report);
        }
        EpochSummary summary;
        summary.epoch = epoch;
        summary.val_rec_loss = validation_rec_loss(val_ds, *state, sched, cfg, epoch);
        if (hooks.on_epoch) hooks.on_epoch(summary);
        if (hooks.on_checkpoint) hooks.on_checkpoint(*state, epoch);
    }
    return state;
}

}  // namespace echodiff
