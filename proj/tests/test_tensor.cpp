// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>

#include "doctest.h"
#include "echodiff/grad_check.hpp"
#include "echodiff/ops.hpp"

using namespace echodiff;

namespace {

/// Random values bounded away from the relu/abs kinks.
Tensor<double> smooth_randn(Shape shape, Rng& rng) {
    auto t = Tensor<double>::randn(std::move(shape), rng);
    for (auto& v : t.mutable_data()) {
        if (std::fabs(v) < 0.15) v += v >= 0 ? 0.2 : -0.2;
    }
    return t;
}

/// Scalar-reduces an op output against a fixed random cotangent so the whole
/// adjoint is exercised, not just its mean.
template <typename Fn>
std::function<Tensor<double>(const Tensor<double>&)> reduced(Fn op, const Tensor<double>& cotangent) {
    return [op, cotangent](const Tensor<double>& x) { return sum_all(mul(op(x), cotangent)); };
}

/// Random cotangent with |v| >= 0.5 so no gradient component degenerates to
/// the noise floor of the central difference.
Tensor<double> bounded_cotangent(Shape shape, Rng& rng) {
    auto t = Tensor<double>::randn(std::move(shape), rng);
    for (auto& v : t.mutable_data()) v += v >= 0 ? 0.5 : -0.5;
    return t;
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Tensor<float> x({2}, {-1.0f, 2.0f});
    auto y = leaky_relu(x, 0.2f);
    CHECK(y.data()[0] == doctest::Approx(-0.2).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(2.0));

    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    auto p = matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(p.data()[i] == a.data()[i]);
}

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
    Rng rng(3);
    auto x = Tensor<float>::randn({2, 1, 5, 5}, rng);
    Tensor<float> w({1, 1, 1, 1}, {1.0f});
    auto y = conv2d(x, w, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("backward on sum(x*x) and sigmoid") {
    auto g = make_graph<double>();
    Tensor<double> x({1}, {3.0});
    x.set_requires_grad(true);
    auto xa = x.attached(g);
    auto loss = sum_all(mul(xa, xa));
    backward(loss);
    REQUIRE(x.has_grad());
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

    auto g2 = make_graph<double>();
    Tensor<double> z({1}, {0.0});
    z.set_requires_grad(true);
    auto loss2 = sum_all(sigmoid(z.attached(g2)));
    backward(loss2);
    CHECK(z.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward twice without a fresh forward is rejected") {
    auto g = make_graph<double>();
    Tensor<double> x({1}, {2.0});
    x.set_requires_grad(true);
    auto loss = sum_all(mul(x.attached(g), x.attached(g)));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("non-scalar loss is rejected") {
    auto g = make_graph<double>();
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    auto y = mul(x.attached(g), x.attached(g));
    CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
    Tensor<double> b({3, 2}, std::vector<double>(6, 1.0));
    try {
        (void)add(a, b);
        FAIL("expected a shape error");
    } catch (const UsageError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,2]") != std::string::npos);
    }
}

TEST_CASE("kernel larger than the padded input is rejected") {
    Tensor<double> x({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor<double> w({1, 1, 5, 5}, std::vector<double>(25, 1.0));
    CHECK_THROWS_AS((void)conv2d(x, w, 1, 0), UsageError);
    CHECK_NOTHROW((void)conv2d(x, w, 1, 1));  // padded size 5 fits
}

TEST_CASE("grad_check on x^2 is exact up to rounding") {
    Tensor<double> x({1}, {3.0});
    const double err = grad_check<double>(
        [](const Tensor<double>& t) { return sum_all(mul(t, t)); }, x, 1e-3);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check on instance_norm over a 2-channel 4x4 tensor") {
    Rng rng(11);
    auto x = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto cot = Tensor<double>::randn({1, 2, 4, 4}, rng);
    const double err =
        grad_check<double>(reduced([](const Tensor<double>& t) { return instance_norm(t); }, cot), x, 1e-3);
    CHECK(err < 1e-5);
}

TEST_CASE("every primitive operator passes grad_check over 100 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto x4 = smooth_randn({1, 2, 4, 4}, rng);
        auto y4 = smooth_randn({1, 2, 4, 4}, rng);
        auto cot4 = bounded_cotangent({1, 2, 4, 4}, rng);

        auto check = [&](const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& at) {
            worst = std::max(worst, grad_check<double>(f, at, 1e-4));
        };

        check(reduced([&](const Tensor<double>& t) { return add(t, y4); }, cot4), x4);
        check(reduced([&](const Tensor<double>& t) { return sub(t, y4); }, cot4), x4);
        check(reduced([&](const Tensor<double>& t) { return mul(t, y4); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return scale(t, 1.7); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return add_scalar(t, -0.3); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return echodiff::abs(t); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return leaky_relu(t, 0.2); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return echodiff::tanh(t); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return sigmoid(t); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return softplus(t); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return instance_norm(t); }, cot4), x4);
        check(reduced([](const Tensor<double>& t) { return upsample2x(t); }, bounded_cotangent({1, 2, 8, 8}, rng)),
              x4);
        check(reduced([](const Tensor<double>& t) { return mean_spatial(t); }, bounded_cotangent({1, 2}, rng)),
              x4);
        check([](const Tensor<double>& t) { return mean_all(t); }, x4);
        check([](const Tensor<double>& t) { return sum_all(t); }, x4);
        check(reduced([](const Tensor<double>& t) { return reshape(t, {4, 8}); }, bounded_cotangent({4, 8}, rng)),
              x4);

        // matmul: both operand positions.
        auto a = Tensor<double>::randn({3, 4}, rng);
        auto b = Tensor<double>::randn({4, 2}, rng);
        auto cot_m = bounded_cotangent({3, 2}, rng);
        check(reduced([&](const Tensor<double>& t) { return matmul(t, b); }, cot_m), a);
        check(reduced([&](const Tensor<double>& t) { return matmul(a, t); }, cot_m), b);

        // conv2d at stride 1 and 2: input, kernel, and bias positions.
        auto cx = Tensor<double>::randn({1, 2, 6, 6}, rng);
        auto cw = Tensor<double>::randn({3, 2, 3, 3}, rng);
        auto cb = Tensor<double>::randn({3}, rng);
        for (const std::int64_t stride : {std::int64_t(1), std::int64_t(2)}) {
            const std::int64_t ho = (6 + 2 - 3) / stride + 1;
            auto cot_c = bounded_cotangent({1, 3, ho, ho}, rng);
            check(reduced([&](const Tensor<double>& t) { return conv2d(t, cw, cb, stride, 1); }, cot_c), cx);
            check(reduced([&](const Tensor<double>& t) { return conv2d(cx, t, cb, stride, 1); }, cot_c), cw);
            check(reduced([&](const Tensor<double>& t) { return conv2d(cx, cw, t, stride, 1); }, cot_c), cb);
        }

        // concat: each input position.
        auto c2 = smooth_randn({1, 3, 4, 4}, rng);
        auto cot_cc = bounded_cotangent({1, 5, 4, 4}, rng);
        check(reduced([&](const Tensor<double>& t) { return concat_channels<double>({t, c2}); }, cot_cc), x4);
        check(reduced([&](const Tensor<double>& t) { return concat_channels<double>({x4, t}); }, cot_cc), c2);

        // broadcast_plane.
        auto v = Tensor<double>::randn({1, 3}, rng);
        auto cot_b = bounded_cotangent({1, 3, 4, 4}, rng);
        check(reduced([](const Tensor<double>& t) { return broadcast_plane(t, 4, 4); }, cot_b), v);
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("random 3-layer conv net gradients match central differences") {
    Rng rng(77);
    auto x = smooth_randn({1, 1, 8, 8}, rng);
    auto w1 = Tensor<double>::randn({4, 1, 3, 3}, rng, 0.3);
    auto w2 = Tensor<double>::randn({4, 4, 3, 3}, rng, 0.3);
    auto w3 = Tensor<double>::randn({1, 4, 3, 3}, rng, 0.3);
    auto net = [&](const Tensor<double>& w2v) {
        auto h = leaky_relu(conv2d(x, w1, 2, 1));
        h = leaky_relu(conv2d(h, w2v, 1, 1));
        h = echodiff::tanh(conv2d(h, w3, 1, 1));
        return mean_all(h);
    };
    CHECK(grad_check<double>(net, w2, 1e-3) < 1e-5);
}

TEST_CASE("forward evaluation is bit-deterministic") {
    Rng rng1(5), rng2(5);
    auto x1 = Tensor<float>::randn({2, 3, 8, 8}, rng1);
    auto x2 = Tensor<float>::randn({2, 3, 8, 8}, rng2);
    auto w1 = Tensor<float>::randn({4, 3, 3, 3}, rng1);
    auto w2 = Tensor<float>::randn({4, 3, 3, 3}, rng2);
    auto y1 = instance_norm(conv2d(x1, w1, 2, 1));
    auto y2 = instance_norm(conv2d(x2, w2, 2, 1));
    REQUIRE(y1.numel() == y2.numel());
    CHECK(std::memcmp(y1.data().data(), y2.data().data(), sizeof(float) * y1.numel()) == 0);
}

TEST_CASE("concat adjoint splits the incoming gradient exactly") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = Tensor<double>::randn({1, 2, 3, 3}, rng);
        auto b = Tensor<double>::randn({1, 4, 3, 3}, rng);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        auto g = make_graph<double>();
        auto cot = Tensor<double>::randn({1, 6, 3, 3}, rng);
        auto loss = sum_all(mul(concat_channels<double>({a.attached(g), b.attached(g)}), cot));
        backward(loss);
        double norm_in = 0, norm_a = 0, norm_b = 0;
        for (double v : cot.data()) norm_in += v * v;
        for (double v : a.grad()) norm_a += v * v;
        for (double v : b.grad()) norm_b += v * v;
        CHECK(norm_a + norm_b == doctest::Approx(norm_in).epsilon(1e-15));
        a.zero_grad();
        b.zero_grad();
    }
}

TEST_CASE("a cleared graph drops its references to intermediates") {
    std::weak_ptr<TensorImpl<double>> probe;
    auto g = make_graph<double>();
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    {
        auto y = mul(x.attached(g), x.attached(g));
        probe = y.impl();
        auto loss = sum_all(y);
        backward(loss);
    }
    CHECK_FALSE(probe.expired());  // tape closures still hold the value
    g->clear();
    CHECK(probe.expired());
}

TEST_CASE("non-finite intermediates are reported with the operator name") {
    Tensor<double> x({1}, {1.0});
    try {
        (void)grad_check<double>(
            [](const Tensor<double>& t) { return scale(scale(t, 1e308), 1e308); }, x, 1e-3);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("scale") != std::string::npos);
    }
}

TEST_CASE("ops refuse inputs recorded on different graphs") {
    auto g1 = make_graph<double>();
    auto g2 = make_graph<double>();
    Tensor<double> a({2}, {1.0, 2.0});
    Tensor<double> b({2}, {3.0, 4.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    CHECK_THROWS_AS((void)add(a.attached(g1), b.attached(g2)), UsageError);
}
