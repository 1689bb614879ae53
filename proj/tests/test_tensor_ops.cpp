// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
//
// The layer set against the finite-difference oracle, plus the pinned
// arithmetic examples for every forward and update rule.

#include <cmath>
#include <vector>

#include "astain/ops.hpp"
#include "doctest.h"

using namespace astain;

namespace {

// weighted scalar loss sum(r .* f(x)) so every output coordinate influences
// the checked gradient
Tensor fixed_weights(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    return random_normal(shape, rng);
}

double weighted_sum(const Tensor& out, const Tensor& r) {
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out.v[static_cast<size_t>(i)] * r.v[static_cast<size_t>(i)];
    return s;
}

}  // namespace

TEST_CASE("conv2d pinned examples") {
    Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor kernel = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor bias({1});
    Tensor out = ops::conv2d(ones, kernel, bias);
    CHECK(out.shape == std::vector<int>({1, 1, 1, 1}));
    CHECK(out(0, 0, 0, 0) == 4.0);

    Rng rng(1);
    Tensor in = random_normal({2, 3, 5, 6}, rng);
    Tensor zero_kernel({4, 3, 2, 2});
    Tensor zero_bias({4});
    Tensor annihilated = ops::conv2d(in, zero_kernel, zero_bias);
    for (double v : annihilated.v) CHECK(v == 0.0);
}

TEST_CASE("conv2d rejects mismatched shapes with a descriptive error") {
    Tensor in({1, 2, 4, 4});
    Tensor kernel({3, 5, 2, 2});  // wants 5 input channels
    Tensor bias({3});
    CHECK_THROWS_AS(ops::conv2d(in, kernel, bias), ShapeError);
    CHECK_THROWS_WITH_AS(ops::conv2d(in, kernel, bias), doctest::Contains("channels"), ShapeError);
    Tensor small({1, 2, 1, 1});
    Tensor k22({3, 2, 2, 2});
    CHECK_THROWS_AS(ops::conv2d(small, k22, bias), ShapeError);
}

TEST_CASE("conv2d gradients agree with central finite differences") {
    Rng rng(2);
    Tensor in = random_normal({1, 2, 6, 6}, rng);
    Tensor kernel = random_normal({3, 2, 3, 3}, rng);
    Tensor bias = random_normal({3}, rng);
    const Tensor r = fixed_weights({1, 3, 4, 4}, 99);

    auto loss = [&] { return weighted_sum(ops::conv2d(in, kernel, bias), r); };
    const auto grads = ops::conv2d_backward(r, in, kernel);

    std::vector<GradCheckTarget> targets;
    targets.push_back({"input", &in, grads.input});
    targets.push_back({"kernel", &kernel, grads.kernel});
    targets.push_back({"bias", &bias, grads.bias});
    const auto report = gradient_check(loss, targets);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("conv2d is linear in its input for zero bias") {
    Rng rng(3);
    Tensor x = random_normal({1, 2, 5, 5}, rng);
    Tensor y = random_normal({1, 2, 5, 5}, rng);
    Tensor kernel = random_normal({3, 2, 3, 3}, rng);
    Tensor bias({3});
    const double a = 1.7, b = -0.4;

    Tensor combo(x.shape);
    for (int64_t i = 0; i < x.size(); ++i)
        combo.v[static_cast<size_t>(i)] = a * x.v[static_cast<size_t>(i)] + b * y.v[static_cast<size_t>(i)];
    const Tensor lhs = ops::conv2d(combo, kernel, bias);
    const Tensor cx = ops::conv2d(x, kernel, bias);
    const Tensor cy = ops::conv2d(y, kernel, bias);
    for (int64_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs.v[static_cast<size_t>(i)] ==
              doctest::Approx(a * cx.v[static_cast<size_t>(i)] + b * cy.v[static_cast<size_t>(i)]).epsilon(1e-10));
}

TEST_CASE("maxpool2x2 pinned examples and tie-breaking") {
    Tensor in({1, 1, 2, 2}, {1, 2, 3, 4});
    auto pooled = ops::maxpool2x2(in);
    CHECK(pooled.output(0, 0, 0, 0) == 4.0);

    Tensor constant = Tensor::full({1, 1, 4, 4}, 0.5);
    auto flat = ops::maxpool2x2(constant);
    for (double v : flat.output.v) CHECK(v == 0.5);
    // backward routes the full gradient to the top-left of each block
    Tensor dout = Tensor::full(flat.output.shape, 1.0);
    Tensor din = ops::maxpool2x2_backward(dout, flat);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) CHECK(din(0, 0, r, c) == ((r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0));

    CHECK_THROWS_AS(ops::maxpool2x2(Tensor({1, 1, 3, 4})), ShapeError);
    CHECK_THROWS_AS(ops::maxpool2x2(Tensor({1, 1, 4, 5})), ShapeError);
}

TEST_CASE("maxpool2x2 gradient agrees with finite differences away from ties") {
    // well-separated values so no argmax flips inside the probe step
    Rng rng(4);
    std::vector<double> vals(16);
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
    for (size_t i = vals.size(); i-- > 1;) std::swap(vals[i], vals[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
    Tensor in({1, 1, 4, 4}, vals);
    const Tensor r = fixed_weights({1, 1, 2, 2}, 98);

    auto loss = [&] { return weighted_sum(ops::maxpool2x2(in).output, r); };
    const auto cache = ops::maxpool2x2(in);
    const Tensor analytic = ops::maxpool2x2_backward(r, cache);

    std::vector<GradCheckTarget> targets{{"input", &in, analytic}};
    const auto report = gradient_check(loss, targets);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("relu pinned examples") {
    Tensor in({3}, {-1.0, 0.0, 2.0});
    const Tensor out = ops::relu(in);
    CHECK(out.v == std::vector<double>({0.0, 0.0, 2.0}));
    // subgradient 0 at exactly 0
    const Tensor g = ops::relu_backward(Tensor::full({3}, 1.0), in);
    CHECK(g.v == std::vector<double>({0.0, 0.0, 1.0}));

    Tensor negative = Tensor::full({2, 3}, -0.7);
    const Tensor zeroed = ops::relu(negative);
    for (double v : zeroed.v) CHECK(v == 0.0);
    const Tensor zero_grad = ops::relu_backward(Tensor::full({2, 3}, 1.0), negative);
    for (double v : zero_grad.v) CHECK(v == 0.0);
}

TEST_CASE("relu gradient agrees with finite differences away from the kink") {
    Rng rng(5);
    Tensor in({4, 5});
    for (double& x : in.v) {
        const double magnitude = 1e-3 + rng.uniform() * 0.999;  // exclude |x| < 1e-3
        x = rng.bernoulli() ? magnitude : -magnitude;
    }
    const Tensor r = fixed_weights(in.shape, 97);
    auto loss = [&] { return weighted_sum(ops::relu(in), r); };
    const Tensor analytic = ops::relu_backward(r, in);
    std::vector<GradCheckTarget> targets{{"input", &in, analytic}};
    CHECK(gradient_check(loss, targets).max_rel_error < 1e-4);
}

TEST_CASE("relu probed at the kink itself reports the expected mismatch") {
    Tensor in({1}, {0.0});
    const Tensor r = Tensor::full({1}, 1.0);
    auto loss = [&] { return weighted_sum(ops::relu(in), r); };
    const Tensor analytic = ops::relu_backward(r, in);  // subgradient 0
    std::vector<GradCheckTarget> targets{{"input", &in, analytic}};
    // central difference sees slope 1/2 across the kink; this is why kink
    // points are excluded from probe sets
    CHECK(gradient_check(loss, targets).max_rel_error > 0.4);
}

TEST_CASE("batchnorm pinned examples") {
    ops::BatchNormState state;
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta({2});

    Tensor constant = Tensor::full({3, 2, 2, 2}, 5.0);
    const Tensor out = ops::batchnorm(constant, gamma, beta, Mode::Train, state);
    for (double v : out.v) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(6);
    Tensor in = random_normal({3, 2, 2, 2}, rng);
    Tensor gamma0({2});
    Tensor beta7 = Tensor::full({2}, 7.0);
    const Tensor shifted = ops::batchnorm(in, gamma0, beta7, Mode::Train, state);
    for (double v : shifted.v) CHECK(v == 7.0);
}

TEST_CASE("batchnorm normalizes per channel and matches finite differences") {
    Rng rng(7);
    Tensor in = random_normal({4, 2, 3, 3}, rng, 10.0);  // wide so eps is negligible
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta({2});
    ops::BatchNormState state;
    ops::BatchNormCache cache;
    const Tensor out = ops::batchnorm(in, gamma, beta, Mode::Train, state, &cache);

    const int n = 4 * 3 * 3;
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < 4; ++b)
            for (int r = 0; r < 3; ++r)
                for (int col = 0; col < 3; ++col) mean += out(b, c, r, col);
        mean /= n;
        for (int b = 0; b < 4; ++b)
            for (int r = 0; r < 3; ++r)
                for (int col = 0; col < 3; ++col) {
                    const double d = out(b, c, r, col) - mean;
                    var += d * d;
                }
        var /= n;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }

    Tensor g2 = random_normal({2}, rng);
    Tensor b2 = random_normal({2}, rng);
    const Tensor r = fixed_weights(in.shape, 96);
    auto loss = [&] {
        ops::BatchNormState scratch;
        return weighted_sum(ops::batchnorm(in, g2, b2, Mode::Train, scratch), r);
    };
    ops::BatchNormState state2;
    ops::BatchNormCache cache2;
    ops::batchnorm(in, g2, b2, Mode::Train, state2, &cache2);
    const auto grads = ops::batchnorm_backward(r, g2, cache2);
    std::vector<GradCheckTarget> targets;
    targets.push_back({"input", &in, grads.input});
    targets.push_back({"gamma", &g2, grads.gamma});
    targets.push_back({"beta", &b2, grads.beta});
    CHECK(gradient_check(loss, targets).max_rel_error < 1e-4);
}

TEST_CASE("batchnorm running statistics and infer mode") {
    ops::BatchNormState state;
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta({1});

    Tensor in({2, 1}, {0.4, 1.0});  // batch mean 0.7
    CHECK_THROWS_AS(ops::batchnorm(in, gamma, beta, Mode::Infer, state), ValueError);

    const int N = 12;
    for (int i = 0; i < N; ++i) ops::batchnorm(in, gamma, beta, Mode::Train, state);
    // running mean approaches the fixed point at rate 0.9 per batch
    CHECK(std::abs(state.running_mean(0) - 0.7) <= std::pow(0.9, N));

    CHECK_NOTHROW(ops::batchnorm(in, gamma, beta, Mode::Infer, state));
    CHECK_THROWS_AS(ops::batchnorm(Tensor({1, 1}), gamma, beta, Mode::Train, state), ShapeError);
}

TEST_CASE("fully connected pinned examples") {
    Tensor identity({2, 2}, {1, 0, 0, 1});
    Tensor zero_bias({2});
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(ops::fully_connected(x, identity, zero_bias).v == x.v);

    Tensor in({1, 2}, {1, 2});
    Tensor w({1, 2}, {1, 1});
    Tensor b({1}, {0.5});
    CHECK(ops::fully_connected(in, w, b)(0, 0) == 3.5);

    CHECK_THROWS_AS(ops::fully_connected(Tensor({2, 3}), Tensor({4, 5}), Tensor({4})), ShapeError);
}

TEST_CASE("fully connected gradients agree with finite differences") {
    Rng rng(8);
    Tensor in = random_normal({2, 5}, rng);
    Tensor w = random_normal({3, 5}, rng);
    Tensor b = random_normal({3}, rng);
    const Tensor r = fixed_weights({2, 3}, 95);
    auto loss = [&] { return weighted_sum(ops::fully_connected(in, w, b), r); };
    const auto grads = ops::fully_connected_backward(r, in, w);
    std::vector<GradCheckTarget> targets;
    targets.push_back({"input", &in, grads.input});
    targets.push_back({"weight", &w, grads.weight});
    targets.push_back({"bias", &b, grads.bias});
    CHECK(gradient_check(loss, targets).max_rel_error < 1e-4);
}

TEST_CASE("softmax cross entropy pinned examples") {
    Tensor logits({1, 2}, {0.0, 0.0});
    const std::vector<int> label0{0};
    const auto ce = ops::softmax_cross_entropy(logits, label0);
    CHECK(ce.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ce.probabilities(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ce.probabilities(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor extreme({1, 2}, {1000.0, 0.0});
    const auto stable = ops::softmax_cross_entropy(extreme, label0);
    CHECK(std::isfinite(stable.loss));
    CHECK(stable.loss == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, std::vector<int>{2}), ValueError);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, std::vector<int>{-1}), ValueError);
}

TEST_CASE("softmax probabilities are a unit simplex row-wise") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_normal({5, 7}, rng, 3.0);
        const Tensor p = ops::softmax(logits);
        for (int b = 0; b < 5; ++b) {
            double s = 0.0;
            for (int k = 0; k < 7; ++k) {
                CHECK(p(b, k) > 0.0);
                CHECK(p(b, k) < 1.0);
                s += p(b, k);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax stays normalized and finite for extreme logits") {
    Tensor logits({2, 3}, {700.0, -700.0, 0.0, 1e4, 1e4, 1e4});
    const Tensor p = ops::softmax(logits);
    for (int b = 0; b < 2; ++b) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) {
            CHECK(std::isfinite(p(b, k)));
            CHECK(p(b, k) >= 0.0);
            CHECK(p(b, k) <= 1.0);
            s += p(b, k);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax cross entropy gradient agrees with finite differences") {
    Rng rng(10);
    Tensor logits = random_normal({3, 2}, rng);
    const std::vector<int> labels{0, 1, 0};
    auto loss = [&] { return ops::softmax_cross_entropy(logits, labels).loss; };
    const auto ce = ops::softmax_cross_entropy(logits, labels);
    const Tensor analytic = ops::softmax_cross_entropy_backward(ce.probabilities, labels);
    std::vector<GradCheckTarget> targets{{"logits", &logits, analytic}};
    CHECK(gradient_check(loss, targets).max_rel_error < 1e-4);
}

TEST_CASE("sgd update rule pinned arithmetic") {
    OptimizerState state;
    state.momentum = 0.0;
    state.weight_decay = 0.0;
    state.learning_rate = 0.1;
    state.lr_decay = 1.0;

    Parameter p("w", Tensor::full({1}, 1.0));
    p.grad = Tensor::full({1}, 1.0);
    std::vector<Parameter*> params{&p};
    sgd_step(params, state);
    CHECK(p.value(0) == 1.0 - 0.1 * 1.0);
    CHECK(p.grad(0) == 0.0);  // zeroed afterwards

    Parameter q("w", Tensor::full({1}, 1.0));
    q.grad = Tensor::full({1}, 1.0);
    state.weight_decay = 0.0005;
    std::vector<Parameter*> qp{&q};
    sgd_step(qp, state);
    CHECK(q.value(0) == doctest::Approx(1.0 - 0.1 * 1.0005).epsilon(1e-15));

    Parameter m("w", Tensor({1}));
    state.weight_decay = 0.0;
    state.momentum = 0.9;
    std::vector<Parameter*> mp{&m};
    m.grad = Tensor::full({1}, 1.0);
    sgd_step(mp, state);
    m.grad = Tensor::full({1}, 1.0);
    sgd_step(mp, state);
    CHECK(m.value(0) == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("learning rate schedule decays by 0.9 every interval") {
    OptimizerState state;
    state.learning_rate = 0.01;
    state.lr_decay = 0.9;
    state.lr_decay_interval = 5000;
    CHECK(state.lr_at(0) == 0.01);
    CHECK(state.lr_at(4999) == 0.01);
    CHECK(state.lr_at(5000) == doctest::Approx(0.009).epsilon(1e-15));
    double prev = state.lr_at(0);
    for (long t = 0; t <= 40000; t += 777) {
        const double lr = state.lr_at(t);
        CHECK(lr <= prev + 1e-18);
        const long k = t / 5000;
        CHECK(lr == doctest::Approx(0.01 * std::pow(0.9, static_cast<double>(k))).epsilon(1e-12));
        prev = lr;
    }
}

TEST_CASE("plain sgd descends a convex quadratic monotonically") {
    // f(w) = 0.5*c*w^2 with lr under the 2/c stability bound
    const double c = 4.0;
    OptimizerState state;
    state.momentum = 0.0;
    state.weight_decay = 0.0;
    state.learning_rate = 0.2;
    state.lr_decay = 1.0;

    Parameter p("w", Tensor::full({1}, 3.0));
    std::vector<Parameter*> params{&p};
    double prev_loss = 0.5 * c * p.value(0) * p.value(0);
    for (int i = 0; i < 50; ++i) {
        p.grad(0) = c * p.value(0);
        sgd_step(params, state);
        const double loss = 0.5 * c * p.value(0) * p.value(0);
        CHECK(loss <= prev_loss);
        prev_loss = loss;
    }
    CHECK(prev_loss < 1e-6);
}

TEST_CASE("gradient check on a linear fragment is tight") {
    Rng rng(15);
    Tensor in = random_normal({2, 4}, rng);
    Tensor w = random_normal({3, 4}, rng);
    Tensor b = random_normal({3}, rng);
    const Tensor r = fixed_weights({2, 3}, 94);
    auto loss = [&] { return weighted_sum(ops::fully_connected(in, w, b), r); };
    const auto grads = ops::fully_connected_backward(r, in, w);
    std::vector<GradCheckTarget> targets;
    targets.push_back({"input", &in, grads.input});
    targets.push_back({"weight", &w, grads.weight});
    targets.push_back({"bias", &b, grads.bias});
    const auto report = gradient_check(loss, targets);
    CHECK(report.max_rel_error < 1e-6);
    CHECK(report.probes == in.size() + w.size() + b.size());
}

TEST_CASE("gradient check probe sampling is deterministic and bounded") {
    Rng rng(16);
    Tensor in = random_normal({4, 25}, rng);
    Tensor w = random_normal({2, 25}, rng);
    Tensor b = random_normal({2}, rng);
    const Tensor r = fixed_weights({4, 2}, 93);
    auto loss = [&] { return weighted_sum(ops::fully_connected(in, w, b), r); };
    const auto grads = ops::fully_connected_backward(r, in, w);
    std::vector<GradCheckTarget> targets{{"input", &in, grads.input}, {"weight", &w, grads.weight}};
    const auto r1 = gradient_check(loss, targets, 1e-5, 10, 7);
    const auto r2 = gradient_check(loss, targets, 1e-5, 10, 7);
    CHECK(r1.probes == 20);
    CHECK(r1.max_rel_error == r2.max_rel_error);
}
