// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "echodiff/checkpoint.hpp"
#include "echodiff/grad_check.hpp"
#include "echodiff/models.hpp"
#include "echodiff/schedule.hpp"

using namespace echodiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "echodiff-test-models" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <typename Net>
bool params_bitwise_equal(Net& a, Net& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->numel() != pb[i]->numel()) return false;
        if (std::memcmp(pa[i]->data().data(), pb[i]->data().data(), sizeof(float) * pa[i]->numel()) != 0) {
            return false;
        }
    }
    return true;
}

Tensor<float> max_abs_diff_probe(const Tensor<float>& a, const Tensor<float>& b, float* out) {
    float m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    *out = m;
    return a;
}

}  // namespace

TEST_CASE("seeded builds are reproducible and seed-sensitive") {
    ModelConfig mc;
    mc.side = 64;
    mc.seed = 7;
    auto g1 = build_generator<float>(mc);
    auto g2 = build_generator<float>(mc);
    CHECK(params_bitwise_equal(g1, g2));
    CHECK(g1.parameter_count() == g2.parameter_count());

    ModelConfig mc2 = mc;
    mc2.seed = 8;
    auto g3 = build_generator<float>(mc2);
    CHECK(g1.parameter_count() == g3.parameter_count());
    CHECK_FALSE(params_bitwise_equal(g1, g3));

    auto d1 = build_discriminator<float>(mc);
    auto d2 = build_discriminator<float>(mc);
    CHECK(params_bitwise_equal(d1, d2));
}

TEST_CASE("indivisible image sides are rejected with the required divisor") {
    ModelConfig mc;
    mc.side = 65;
    try {
        (void)build_generator<float>(mc);
        FAIL("expected rejection");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("8") != std::string::npos);
    }
    CHECK_THROWS_AS((void)build_discriminator<float>(mc), UsageError);
}

TEST_CASE("generator output matches the input shape and the tanh range") {
    ModelConfig mc;
    mc.side = 64;
    mc.seed = 3;
    const auto gen = build_generator<float>(mc);
    Rng rng(1);
    const auto x = Tensor<float>::randn({1, 1, 64, 64}, rng);
    const auto guide = Tensor<float>::randn({1, 1, 64, 64}, rng);
    const auto z = Tensor<float>::randn({1, mc.z_dim}, rng);
    const auto y = generator_predict(gen, x, guide, 500, z);
    REQUIRE(y.shape() == Shape{1, 1, 64, 64});
    for (float v : y.data()) {
        CHECK(v > -1.0f);
        CHECK(v < 1.0f);
    }

    const auto y2 = generator_predict(gen, x, guide, 500, z);
    CHECK(std::memcmp(y.data().data(), y2.data().data(), sizeof(float) * y.numel()) == 0);
}

TEST_CASE("the latent reaches the output") {
    ModelConfig mc;
    mc.side = 32;
    mc.seed = 5;
    const auto gen = build_generator<float>(mc);
    Rng rng(2);
    const auto x = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto guide = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto z1 = Tensor<float>::randn({1, mc.z_dim}, rng);
    const auto z2 = Tensor<float>::randn({1, mc.z_dim}, rng);
    const auto y1 = generator_predict(gen, x, guide, 250, z1);
    const auto y2 = generator_predict(gen, x, guide, 250, z2);
    float diff = 0;
    (void)max_abs_diff_probe(y1, y2, &diff);
    CHECK(diff > 0.0f);
}

TEST_CASE("the guide conditioning path is wired") {
    ModelConfig mc;
    mc.side = 32;
    mc.seed = 6;
    const auto gen = build_generator<float>(mc);
    Rng rng(3);
    const auto x = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto g1 = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto g2 = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto z = Tensor<float>::randn({1, mc.z_dim}, rng);
    float diff = 0;
    (void)max_abs_diff_probe(generator_predict(gen, x, g1, 250, z), generator_predict(gen, x, g2, 250, z), &diff);
    CHECK(diff > 0.0f);
}

TEST_CASE("the step embedding plane is t/T and vanishes at t = 0") {
    const auto p0 = time_plane<float>(1, 4, 4, 0, 1000);
    for (float v : p0.data()) CHECK(v == 0.0f);
    const auto p = time_plane<float>(2, 4, 4, 250, 1000);
    for (float v : p.data()) CHECK(v == 0.25f);
}

TEST_CASE("latent size mismatch is rejected") {
    ModelConfig mc;
    mc.side = 32;
    const auto gen = build_generator<float>(mc);
    Rng rng(4);
    const auto x = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto guide = Tensor<float>::randn({1, 1, 32, 32}, rng);
    const auto z_bad = Tensor<float>::randn({1, mc.z_dim + 1}, rng);
    CHECK_THROWS_AS((void)generator_predict(gen, x, guide, 250, z_bad), UsageError);
    const auto guide_bad = Tensor<float>::randn({1, 1, 16, 16}, rng);
    const auto z = Tensor<float>::randn({1, mc.z_dim}, rng);
    CHECK_THROWS_AS((void)generator_predict(gen, x, guide_bad, 250, z), UsageError);
}

TEST_CASE("discriminator: logit map size, zero head, argument order") {
    ModelConfig mc;
    mc.side = 64;
    mc.seed = 9;
    auto disc = build_discriminator<float>(mc);
    Rng rng(5);
    const auto cand = Tensor<float>::randn({1, 1, 64, 64}, rng);
    const auto x_t = Tensor<float>::randn({1, 1, 64, 64}, rng);

    auto map = discriminator_score(disc, cand, x_t, 500);
    CHECK(map.shape() == Shape{1, 1, 4, 4});  // 64 / 16
    CHECK(all_finite(map));

    // Swapping (candidate, x_t) must change the score for a generic net.
    const float s1 = mean_all(map).item();
    const float s2 = mean_all(discriminator_score(disc, x_t, cand, 500)).item();
    CHECK(s1 != s2);

    for (auto& v : disc.head.weight.mutable_data()) v = 0.0f;
    for (auto& v : disc.head.bias.mutable_data()) v = 0.0f;
    const auto zmap = discriminator_score(disc, cand, x_t, 500);
    for (float v : zmap.data()) CHECK(v == 0.0f);
    CHECK(mean_all(zmap).item() == 0.0f);

    const auto bad = Tensor<float>::randn({1, 1, 32, 32}, rng);
    CHECK_THROWS_AS((void)discriminator_score(disc, cand, bad, 500), UsageError);
}

TEST_CASE("checkpoint round trip is the bitwise identity") {
    const auto dir = scratch_dir("roundtrip");
    RunConfig cfg;
    cfg.image_side = 16;
    cfg.train_epochs = 1;
    cfg.seed = 11;
    TrainState state(cfg.train_config());
    state.step_count = 42;

    const auto path = dir / "ck.bin";
    save_checkpoint(path, state, cfg);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.fingerprint == cfg.fingerprint());
    CHECK(loaded.state->step_count == 42);
    CHECK(params_bitwise_equal(state.gen, loaded.state->gen));
    CHECK(params_bitwise_equal(state.disc, loaded.state->disc));

    // Forward outputs must agree bitwise after the round trip.
    Rng rng(6);
    const auto x = Tensor<float>::randn({1, 1, 16, 16}, rng);
    const auto guide = Tensor<float>::randn({1, 1, 16, 16}, rng);
    const auto z = Tensor<float>::randn({1, cfg.model_z_dim}, rng);
    const auto y1 = generator_predict(state.gen, x, guide, 500, z);
    const auto y2 = generator_predict(loaded.state->gen, x, guide, 500, z);
    CHECK(std::memcmp(y1.data().data(), y2.data().data(), sizeof(float) * y1.numel()) == 0);
}

TEST_CASE("checkpoint error classes are distinct") {
    const auto dir = scratch_dir("errors");
    RunConfig cfg;
    cfg.image_side = 16;
    TrainState state(cfg.train_config());
    const auto path = dir / "ck.bin";
    save_checkpoint(path, state, cfg);

    // Truncation -> corrupt-file error.
    std::string bytes;
    {
        std::ifstream f(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    const auto trunc = dir / "trunc.bin";
    {
        std::ofstream f(trunc, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS((void)load_checkpoint(trunc), CheckpointCorruptError);

    // Patched format version -> version error naming both versions.
    const auto badver = dir / "badver.bin";
    {
        std::string patched = bytes;
        patched[8] = 99;  // little-endian u32 version right after the magic
        std::ofstream f(badver, std::ios::binary);
        f.write(patched.data(), static_cast<std::streamsize>(patched.size()));
    }
    try {
        (void)load_checkpoint(badver);
        FAIL("expected a version error");
    } catch (const CheckpointVersionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("99") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }

    // Not a checkpoint at all.
    const auto garbage = dir / "garbage.bin";
    {
        std::ofstream f(garbage, std::ios::binary);
        f << "definitely not a checkpoint";
    }
    CHECK_THROWS_AS((void)load_checkpoint(garbage), CheckpointCorruptError);

    // Fingerprint mismatch is rejected unless overridden.
    RunConfig other = cfg;
    other.seed = 999;
    const std::string expect = other.fingerprint();
    CHECK_THROWS_AS((void)load_checkpoint(path, &expect, false), FingerprintMismatchError);
    CHECK_NOTHROW((void)load_checkpoint(path, &expect, true));
}

TEST_CASE("end-to-end gradient oracle on the adversarial + reconstruction loss at 8x8") {
    ModelConfig mc;
    mc.side = 8;
    mc.seed = 21;
    mc.total_steps = 1000;
    const auto gen = build_generator<double>(mc);
    const auto disc = build_discriminator<double>(mc);
    const auto sched = make_schedule(1000, 250, 1e-4, 0.02);
    const int t = 500;

    Rng rng(77);
    const auto x_t = Tensor<double>::randn({1, 1, 8, 8}, rng);
    const auto guide = Tensor<double>::randn({1, 1, 8, 8}, rng);
    const auto z = Tensor<double>::randn({1, mc.z_dim}, rng);
    const auto noise = Tensor<double>::randn({1, 1, 8, 8}, rng);
    // Reconstruction target offset from the base prediction so no |.| kink
    // sits inside the finite-difference window.
    auto base = const_cast<GeneratorNet<double>&>(gen).forward(x_t, guide, t, z);
    const auto x0 = add_scalar(base.detached(), -0.3);
    const double sd = std::sqrt(span_coefficients(sched, t).posterior_variance);

    auto params = const_cast<GeneratorNet<double>&>(gen).parameters();
    auto loss_for_param = [&](std::size_t pi) {
        return std::function<Tensor<double>(const Tensor<double>&)>([&, pi](const Tensor<double>& p) {
            auto g2 = gen.clone();
            *g2.parameters()[pi] = p;
            auto x0_hat = g2.forward(x_t, guide, t, z);
            auto post = posterior(x0_hat, x_t, t, sched);
            auto cand = add(post.mean, scale(noise, sd));
            auto score = mean_all(discriminator_score(disc, cand, x_t, t));
            auto shifted = add_scalar(score, -1.0);
            auto adv = scale(mul(shifted, shifted), 0.5);
            auto rec = mean_all(echodiff::abs(sub(x0_hat, x0)));
            return add(adv, scale(rec, 50.0));
        });
    };

    // Random subset of 50 parameter components across all tensors.
    Rng pick(31);
    double worst = 0.0;
    std::vector<std::vector<std::int64_t>> chosen(params.size());
    for (int i = 0; i < 50; ++i) {
        const auto pi = static_cast<std::size_t>(pick.uniform_index(params.size()));
        chosen[pi].push_back(static_cast<std::int64_t>(pick.uniform_index(
            static_cast<std::uint64_t>(params[pi]->numel()))));
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        if (chosen[pi].empty()) continue;
        worst = std::max(worst, grad_check<double>(loss_for_param(pi), *params[pi], 1e-5, chosen[pi]));
    }
    CHECK(worst < 1e-4);
}
