// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "astain/model.hpp"
#include "doctest.h"

using namespace astain;

namespace {

Tensor random_patches(int batch, uint64_t seed) {
    Rng rng(seed);
    return random_uniform({batch, 3, 63, 63}, rng, 0.0, 1.0);
}

std::vector<double> snapshot(MitosisClassifier& m) {
    std::vector<double> out;
    for (Parameter* p : m.parameters()) out.insert(out.end(), p->value.v.begin(), p->value.v.end());
    return out;
}

std::vector<double> snapshot(DomainBranch& b) {
    std::vector<double> out;
    for (Parameter* p : b.parameters()) out.insert(out.end(), p->value.v.begin(), p->value.v.end());
    return out;
}

}  // namespace

TEST_CASE("classifier builds are deterministic in the seed") {
    MitosisClassifier a(42), b(42), c(43);
    CHECK(snapshot(a) == snapshot(b));
    CHECK(snapshot(a) != snapshot(c));
}

TEST_CASE("classifier layer plan has the pinned kernel shapes") {
    MitosisClassifier m(1);
    CHECK(m.block1.conv.weight.value.shape == std::vector<int>({16, 3, 4, 4}));
    CHECK(m.block2.conv.weight.value.shape == std::vector<int>({16, 16, 3, 3}));
    CHECK(m.block3.conv.weight.value.shape == std::vector<int>({16, 16, 3, 3}));
    CHECK(m.block4.conv.weight.value.shape == std::vector<int>({16, 16, 3, 3}));
    CHECK(m.fc1.weight.value.shape == std::vector<int>({64, 64}));  // flatten width 16*2*2
    CHECK(m.fc2.weight.value.shape == std::vector<int>({2, 64}));
}

TEST_CASE("trainable parameter count equals the hand-computed plan total") {
    MitosisClassifier m(1);
    const int64_t conv1 = 16 * 3 * 4 * 4 + 16;
    const int64_t conv_rest = 3 * (16 * 16 * 3 * 3 + 16);
    const int64_t bn_conv = 4 * (16 + 16);
    const int64_t fc1 = 64 * 64 + 64;
    const int64_t bn_fc = 64 + 64;
    const int64_t fc2 = 2 * 64 + 2;
    CHECK(m.parameter_count() == conv1 + conv_rest + bn_conv + fc1 + bn_fc + fc2);
    CHECK(m.parameter_count() == 12290);
}

TEST_CASE("forward produces softmax rows and the two taps") {
    MitosisClassifier m(2);
    const Tensor batch = random_patches(3, 5);
    const ForwardTrace trace = m.forward(batch, Mode::Train);
    CHECK(trace.class_probabilities.shape == std::vector<int>({3, 2}));
    CHECK(trace.tap2.shape == std::vector<int>({3, 16, 14, 14}));
    CHECK(trace.tap4.shape == std::vector<int>({3, 16, 2, 2}));
    for (int b = 0; b < 3; ++b)
        CHECK(std::abs(trace.class_probabilities(b, 0) + trace.class_probabilities(b, 1) - 1.0) <= 1e-12);

    CHECK_THROWS_AS(m.forward(Tensor({1, 3, 64, 64}), Mode::Train), ShapeError);
    CHECK_THROWS_AS(m.forward(Tensor({1, 1, 63, 63}), Mode::Train), ShapeError);
}

TEST_CASE("infer mode is deterministic and batch-independent") {
    MitosisClassifier m(3);
    m.forward(random_patches(4, 6), Mode::Train);  // initialize running statistics

    Tensor two = random_patches(1, 7);
    Tensor batch({2, 3, 63, 63});
    for (int i = 0; i < 2; ++i)
        for (int64_t k = 0; k < two.size(); ++k) batch.v[static_cast<size_t>(i * two.size() + k)] = two.v[static_cast<size_t>(k)];

    const ForwardTrace t = m.forward(batch, Mode::Infer);
    CHECK(t.class_probabilities(0, 0) == t.class_probabilities(1, 0));
    CHECK(t.class_probabilities(0, 1) == t.class_probabilities(1, 1));

    // batch forward equals item-by-item forwards
    const Tensor mixed = random_patches(3, 8);
    const ForwardTrace whole = m.forward(mixed, Mode::Infer);
    for (int b = 0; b < 3; ++b) {
        Tensor single({1, 3, 63, 63});
        for (int64_t k = 0; k < single.size(); ++k)
            single.v[static_cast<size_t>(k)] = mixed.v[static_cast<size_t>(b * single.size() + k)];
        const ForwardTrace one = m.forward(single, Mode::Infer);
        CHECK(std::abs(one.class_probabilities(0, 0) - whole.class_probabilities(b, 0)) <= 1e-10);
        CHECK(std::abs(one.class_probabilities(0, 1) - whole.class_probabilities(b, 1)) <= 1e-10);
    }
}

TEST_CASE("infer mode before any training forward is rejected") {
    MitosisClassifier m(4);
    CHECK_THROWS_AS(m.forward(random_patches(1, 9), Mode::Infer), ValueError);
}

TEST_CASE("domain branch emits one probability per domain") {
    MitosisClassifier m(5);
    const ForwardTrace trace = m.forward(random_patches(4, 10), Mode::Train);

    DomainBranch b8(8, 11), b8b(8, 11), other(8, 12);
    CHECK(snapshot(b8) == snapshot(b8b));
    CHECK(snapshot(b8) != snapshot(other));

    const Tensor probs = b8.forward(trace, Mode::Train);
    CHECK(probs.shape == std::vector<int>({4, 8}));
    for (int b = 0; b < 4; ++b) {
        double s = 0.0;
        for (int d = 0; d < 8; ++d) s += probs(b, d);
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }

    CHECK_THROWS_AS(DomainBranch(1, 1), ValueError);
}

TEST_CASE("zeroed final layer yields the uniform domain distribution") {
    MitosisClassifier m(6);
    const ForwardTrace trace = m.forward(random_patches(2, 13), Mode::Train);
    DomainBranch branch(5, 14);
    std::fill(branch.fc2.weight.value.v.begin(), branch.fc2.weight.value.v.end(), 0.0);
    std::fill(branch.fc2.bias.value.v.begin(), branch.fc2.bias.value.v.end(), 0.0);
    const Tensor probs = branch.forward(trace, Mode::Train);
    for (double p : probs.v) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("domain loss gradient with respect to the taps passes finite differences") {
    MitosisClassifier m(7);
    ForwardTrace trace = m.forward(random_patches(2, 15), Mode::Train);
    DomainBranch branch(3, 16);
    const std::vector<int> domains{0, 2};

    auto loss = [&] {
        branch.forward(trace, Mode::Train);
        return ops::softmax_cross_entropy(branch.logits(), domains).loss;
    };
    branch.forward(trace, Mode::Train);
    const auto ce = ops::softmax_cross_entropy(branch.logits(), domains);
    const auto tap_grads = branch.backward(ops::softmax_cross_entropy_backward(ce.probabilities, domains));
    branch.zero_grads();

    std::vector<GradCheckTarget> targets;
    targets.push_back({"tap2", &trace.tap2, tap_grads.tap2});
    targets.push_back({"tap4", &trace.tap4, tap_grads.tap4});
    const auto report = gradient_check(loss, targets, 1e-5, 40, 77);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("branch reinitialization restores a fresh theta_D and leaves theta_M alone") {
    MitosisClassifier m(8);
    const auto theta_m_before = snapshot(m);

    DomainBranch branch(4, 20);
    const auto initial = snapshot(branch);
    // move the branch away from its initialization
    for (Parameter* p : branch.parameters())
        for (double& x : p->value.v) x += 0.25;
    CHECK(snapshot(branch) != initial);

    branch.reinit(20);
    CHECK(snapshot(branch) == initial);
    CHECK(snapshot(m) == theta_m_before);

    // a reinit equals a freshly built branch: same loss on a fixed batch
    const ForwardTrace trace = m.forward(random_patches(4, 21), Mode::Train);
    DomainBranch fresh(4, 20);
    const std::vector<int> domains{0, 1, 2, 3};
    branch.forward(trace, Mode::Train);
    const double loss_reinit = ops::softmax_cross_entropy(branch.logits(), domains).loss;
    fresh.forward(trace, Mode::Train);
    const double loss_fresh = ops::softmax_cross_entropy(fresh.logits(), domains).loss;
    CHECK(loss_reinit == doctest::Approx(loss_fresh).epsilon(0.05));
}

TEST_CASE("full network gradient check against finite differences") {
    MitosisClassifier m(9);
    Tensor batch = random_patches(2, 22);  // fc batchnorm needs at least 2 samples
    const std::vector<int> labels{1, 0};

    auto loss = [&] {
        m.forward(batch, Mode::Train);
        return ops::softmax_cross_entropy(m.logits(), labels).loss;
    };

    m.forward(batch, Mode::Train);
    const auto ce = ops::softmax_cross_entropy(m.logits(), labels);
    const Tensor dinput = m.backward(ops::softmax_cross_entropy_backward(ce.probabilities, labels));

    std::vector<GradCheckTarget> targets;
    for (Parameter* p : m.parameters()) targets.push_back({p->name, &p->value, p->grad});
    targets.push_back({"input", &batch, dinput});
    m.zero_grads();

    const auto report = gradient_check(loss, targets, 1e-5, 4, 123);
    INFO("worst: ", report.worst_target, "[", report.worst_index, "] rel=", report.max_rel_error);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("adversarial gradient path through the classifier passes finite differences") {
    MitosisClassifier m(10);
    DomainBranch branch(2, 23);
    Tensor batch = random_patches(2, 24);
    const std::vector<int> domains{0, 1};

    auto loss = [&] {
        const ForwardTrace t = m.forward(batch, Mode::Train);
        branch.forward(t, Mode::Train);
        return ops::softmax_cross_entropy(branch.logits(), domains).loss;
    };

    const ForwardTrace t = m.forward(batch, Mode::Train);
    branch.forward(t, Mode::Train);
    const auto ce = ops::softmax_cross_entropy(branch.logits(), domains);
    const auto tap_grads = branch.backward(ops::softmax_cross_entropy_backward(ce.probabilities, domains));
    m.backward_from_taps(tap_grads.tap2, tap_grads.tap4);

    std::vector<GradCheckTarget> targets;
    for (Parameter* p : m.parameters()) {
        if (p->name.rfind("fc", 0) == 0) continue;  // the class head is not on the domain-loss path
        targets.push_back({p->name, &p->value, p->grad});
    }
    for (Parameter* p : branch.parameters()) targets.push_back({"branch." + p->name, &p->value, p->grad});
    m.zero_grads();
    branch.zero_grads();

    const auto report = gradient_check(loss, targets, 1e-5, 3, 124);
    INFO("worst: ", report.worst_target, "[", report.worst_index, "] rel=", report.max_rel_error);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("a constructed domain branch does not perturb baseline training") {
    MitosisClassifier plain(11), accompanied(11);
    DomainBranch branch(4, 25);  // built alongside, never used

    OptimizerState state;
    state.learning_rate = 0.01;
    Rng rng(26);
    for (int step = 0; step < 3; ++step) {
        const Tensor batch = random_uniform({4, 3, 63, 63}, rng, 0.0, 1.0);
        const std::vector<int> labels{1, 0, 1, 0};
        for (MitosisClassifier* m : {&plain, &accompanied}) {
            state.iteration = step;
            m->forward(batch, Mode::Train);
            const auto ce = ops::softmax_cross_entropy(m->logits(), labels);
            m->backward(ops::softmax_cross_entropy_backward(ce.probabilities, labels));
            const auto params = m->parameters();
            sgd_step(params, state);
        }
    }
    CHECK(snapshot(plain) == snapshot(accompanied));
}
