// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <map>

#include "doctest.h"
#include "echodiff/training.hpp"

using namespace echodiff;

namespace {

std::vector<std::vector<float>> snapshot(std::vector<Tensor<float>*> params) {
    std::vector<std::vector<float>> out;
    for (auto* p : params) out.emplace_back(p->data().begin(), p->data().end());
    return out;
}

bool equals_snapshot(std::vector<Tensor<float>*> params, const std::vector<std::vector<float>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (std::memcmp(params[i]->data().data(), snap[i].data(), snap[i].size() * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.side = 16;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.seed = 5;
    return cfg;
}

Dataset tiny_dataset(int n, int side, std::uint64_t seed) { return generate_phantoms(n, side, "a", seed); }

}  // namespace

TEST_CASE("discriminator_loss closed-form cases") {
    CHECK(discriminator_loss(1.0, 0.0) == 0.0);
    CHECK(discriminator_loss(0.0, 1.0) == 1.0);
    CHECK(discriminator_loss(0.5, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_THROWS_AS((void)discriminator_loss(std::numeric_limits<double>::infinity(), 0.0), NumericError);
}

TEST_CASE("generator_loss closed-form cases") {
    Tensor<double> x0({4}, {0.1, -0.2, 0.3, 0.4});
    CHECK(generator_loss(1.0, x0, x0, 50.0) == 0.0);
    CHECK(generator_loss(0.0, x0, x0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
    Tensor<double> shifted({4}, {0.11, -0.19, 0.31, 0.41});
    CHECK(generator_loss(1.0, shifted, x0, 100.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS((void)generator_loss(std::nan(""), x0, x0, 1.0), NumericError);
}

TEST_CASE("sample_training_triple draws span boundaries uniformly") {
    const auto sched = make_schedule(1000, 250, 1e-4, 0.02);
    Tensor<double> x0({1}, {0.0});
    Rng rng(99);
    std::map<int, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[sample_training_triple(x0, sched, rng).t] += 1;
    REQUIRE(counts.size() == 4);
    const double sigma = std::sqrt(0.25 * 0.75 / n);
    for (const int t : {250, 500, 750, 1000}) {
        const double freq = static_cast<double>(counts[t]) / n;
        CHECK(std::fabs(freq - 0.25) < 3.0 * sigma);
    }
}

TEST_CASE("sample_training_triple at t = k passes x0 through unchanged") {
    const auto sched = make_schedule(1000, 250, 1e-4, 0.02);
    Tensor<double> x0({3}, {0.1, 0.2, 0.3});
    Rng rng(1);
    for (int i = 0; i < 64; ++i) {
        const auto triple = sample_training_triple(x0, sched, rng);
        if (triple.t != sched.span) continue;
        for (int j = 0; j < 3; ++j) CHECK(triple.x_tmk.data()[j] == x0.data()[j]);
    }
}

TEST_CASE("the two-stage draw reproduces the closed-form marginal statistics") {
    const auto sched = make_schedule(1000, 250, 1e-4, 0.02);
    const double x0v = 0.7;
    Tensor<double> x0({1}, {x0v});
    Rng rng(2025);
    const int n = 100000;
    std::map<int, std::pair<double, double>> acc;  // t -> (sum, sumsq)
    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) {
        const auto triple = sample_training_triple(x0, sched, rng);
        acc[triple.t].first += triple.x_t.item();
        acc[triple.t].second += triple.x_t.item() * triple.x_t.item();
        counts[triple.t] += 1;
    }
    for (const auto& [t, sums] : acc) {
        const int m = counts[t];
        const double mean = sums.first / m;
        const double var = sums.second / m - mean * mean;
        const double want_mean = std::sqrt(sched.alpha_bar_at(t)) * x0v;
        const double want_var = 1.0 - sched.alpha_bar_at(t);
        CHECK(std::fabs(mean - want_mean) < 3.0 * std::sqrt(want_var / m));
        CHECK(std::fabs(var - want_var) < 3.0 * want_var * std::sqrt(2.0 / (m - 1)));
    }
}

TEST_CASE("zero learning rates leave every parameter bitwise unchanged") {
    auto cfg = small_config();
    cfg.lr_g = 0.0;
    cfg.lr_d = 0.0;
    TrainState state(cfg);
    const auto sched = cfg.make_noise_schedule();
    const auto ds = tiny_dataset(2, cfg.side, 3);
    const auto g_before = snapshot(state.gen.parameters());
    const auto d_before = snapshot(state.disc.parameters());
    Rng rng(7);
    std::vector<const GuidedSample*> batch{&ds.samples[0], &ds.samples[1]};
    (void)train_step(batch, state, sched, cfg, rng);
    CHECK(equals_snapshot(state.gen.parameters(), g_before));
    CHECK(equals_snapshot(state.disc.parameters(), d_before));
}

TEST_CASE("updates are isolated: D steps touch no generator parameter and vice versa") {
    const auto ds = tiny_dataset(2, 16, 3);
    const auto sched = small_config().make_noise_schedule();
    {
        auto cfg = small_config();
        cfg.lr_g = 0.0;  // only the discriminator may move
        TrainState state(cfg);
        const auto g_before = snapshot(state.gen.parameters());
        const auto d_before = snapshot(state.disc.parameters());
        Rng rng(7);
        std::vector<const GuidedSample*> batch{&ds.samples[0], &ds.samples[1]};
        (void)train_step(batch, state, sched, cfg, rng);
        CHECK(equals_snapshot(state.gen.parameters(), g_before));
        CHECK_FALSE(equals_snapshot(state.disc.parameters(), d_before));
    }
    {
        auto cfg = small_config();
        cfg.lr_d = 0.0;  // only the generator may move
        TrainState state(cfg);
        const auto g_before = snapshot(state.gen.parameters());
        const auto d_before = snapshot(state.disc.parameters());
        Rng rng(7);
        std::vector<const GuidedSample*> batch{&ds.samples[0], &ds.samples[1]};
        (void)train_step(batch, state, sched, cfg, rng);
        CHECK_FALSE(equals_snapshot(state.gen.parameters(), g_before));
        CHECK(equals_snapshot(state.disc.parameters(), d_before));
    }
}

TEST_CASE("an optimizer step with no accumulated gradient is a no-op") {
    auto cfg = small_config();
    TrainState state(cfg);
    const auto before = snapshot(state.gen.parameters());
    state.opt_g.zero_grad();
    state.opt_g.step();
    CHECK(equals_snapshot(state.gen.parameters(), before));
}

TEST_CASE("fixed seeds reproduce the loss trajectory bitwise") {
    const auto ds = tiny_dataset(6, 16, 11);
    auto run = [&] {
        auto cfg = small_config();
        cfg.epochs = 3;
        std::vector<StepReport> reports;
        TrainHooks hooks;
        hooks.on_step = [&](const StepReport& r) { reports.push_back(r); };
        auto state = train(ds, cfg, hooks);
        return std::make_pair(std::move(reports), snapshot(state->gen.parameters()));
    };
    const auto [r1, p1] = run();
    const auto [r2, p2] = run();
    REQUIRE(r1.size() == r2.size());
    CHECK(!r1.empty());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].step == r2[i].step);
        CHECK(r1[i].d_loss == r2[i].d_loss);
        CHECK(r1[i].g_adv_loss == r2[i].g_adv_loss);
        CHECK(r1[i].g_rec_loss == r2[i].g_rec_loss);
    }
    CHECK(p1 == p2);
}

TEST_CASE("overfitting one sample drives the reconstruction loss down") {
    auto cfg = small_config();
    cfg.lambda_rec = 100.0;
    cfg.side = 16;
    TrainState state(cfg);
    const auto sched = cfg.make_noise_schedule();
    const auto ds = tiny_dataset(1, 16, 23);
    std::vector<const GuidedSample*> batch{&ds.samples[0]};
    Rng rng(17);
    double first = 0.0, best = 1e30;
    for (int i = 0; i < 200; ++i) {
        const auto r = train_step(batch, state, sched, cfg, rng);
        if (i == 0) first = r.g_rec_loss;
        best = std::min(best, r.g_rec_loss);
    }
    CHECK(best < 0.5 * first);
}

TEST_CASE("train handles epochs = 0 and rejects empty datasets") {
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto ds = tiny_dataset(4, 16, 5);
    int steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](const StepReport&) { ++steps; };
    auto state = train(ds, cfg, hooks);
    CHECK(steps == 0);
    // Untouched: equals a freshly built state.
    TrainState fresh(cfg);
    CHECK(equals_snapshot(state->gen.parameters(), snapshot(fresh.gen.parameters())));

    Dataset empty;
    CHECK_THROWS_AS((void)train(empty, cfg), DataError);
}

TEST_CASE("train splits 90/10 and logs one summary per epoch") {
    auto cfg = small_config();
    cfg.epochs = 2;
    cfg.batch_size = 64;
    const auto ds = tiny_dataset(20, 16, 9);
    int steps = 0, epochs = 0, checkpoints = 0;
    TrainHooks hooks;
    hooks.on_step = [&](const StepReport&) { ++steps; };
    hooks.on_epoch = [&](const EpochSummary& e) {
        ++epochs;
        CHECK(std::isfinite(e.val_rec_loss));
    };
    hooks.on_checkpoint = [&](const TrainState&, int) { ++checkpoints; };
    (void)train(ds, cfg, hooks);
    // 18 train samples in one batch of 64 -> 1 step per epoch.
    CHECK(steps == 2);
    CHECK(epochs == 2);
    CHECK(checkpoints == 2);
}

TEST_CASE("the logistic adversarial objective trains too") {
    auto cfg = small_config();
    cfg.logistic_adv_loss = true;
    TrainState state(cfg);
    const auto sched = cfg.make_noise_schedule();
    const auto ds = tiny_dataset(2, 16, 3);
    Rng rng(7);
    std::vector<const GuidedSample*> batch{&ds.samples[0], &ds.samples[1]};
    const auto r = train_step(batch, state, sched, cfg, rng);
    CHECK(std::isfinite(r.d_loss));
    CHECK(std::isfinite(r.g_adv_loss));
    CHECK(r.d_loss > 0.0);  // softplus objective is strictly positive
}
