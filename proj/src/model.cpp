// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/model.hpp"

#include <cmath>

namespace astain {

namespace {

// He fan-in scaling; biases and beta start at zero, gamma at one.
Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    return random_normal(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

}  // namespace

void Conv2dLayer::init(const std::string& name, int out_ch, int in_ch, int kh, int kw, Rng& rng) {
    weight = Parameter(name + ".weight", he_normal({out_ch, in_ch, kh, kw}, in_ch * kh * kw, rng));
    bias = Parameter(name + ".bias", Tensor({out_ch}));
    cached_input = Tensor();
}

Tensor Conv2dLayer::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::Train) cached_input = x;
    return ops::conv2d(x, weight.value, bias.value);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
    auto g = ops::conv2d_backward(grad_out, cached_input, weight.value);
    for (int64_t i = 0; i < g.kernel.size(); ++i) weight.grad.v[static_cast<size_t>(i)] += g.kernel.v[static_cast<size_t>(i)];
    for (int64_t i = 0; i < g.bias.size(); ++i) bias.grad.v[static_cast<size_t>(i)] += g.bias.v[static_cast<size_t>(i)];
    return std::move(g.input);
}

void BatchNormLayer::init(const std::string& name, int channels) {
    gamma = Parameter(name + ".gamma", Tensor::full({channels}, 1.0));
    beta = Parameter(name + ".beta", Tensor({channels}));
    state = ops::BatchNormState{};
    cache = ops::BatchNormCache{};
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
    return ops::batchnorm(x, gamma.value, beta.value, mode, state, mode == Mode::Train ? &cache : nullptr);
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
    auto g = ops::batchnorm_backward(grad_out, gamma.value, cache);
    for (int64_t i = 0; i < g.gamma.size(); ++i) gamma.grad.v[static_cast<size_t>(i)] += g.gamma.v[static_cast<size_t>(i)];
    for (int64_t i = 0; i < g.beta.size(); ++i) beta.grad.v[static_cast<size_t>(i)] += g.beta.v[static_cast<size_t>(i)];
    return std::move(g.input);
}

Tensor ReluLayer::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::Train) cached_input = x;
    return ops::relu(x);
}

Tensor ReluLayer::backward(const Tensor& grad_out) { return ops::relu_backward(grad_out, cached_input); }

Tensor MaxPoolLayer::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::Train) {
        cache = ops::maxpool2x2(x);
        return cache.output;
    }
    return ops::maxpool2x2(x).output;
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) { return ops::maxpool2x2_backward(grad_out, cache); }

void LinearLayer::init(const std::string& name, int out_features, int in_features, Rng& rng) {
    weight = Parameter(name + ".weight", he_normal({out_features, in_features}, in_features, rng));
    bias = Parameter(name + ".bias", Tensor({out_features}));
    cached_input = Tensor();
}

Tensor LinearLayer::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::Train) cached_input = x;
    return ops::fully_connected(x, weight.value, bias.value);
}

Tensor LinearLayer::backward(const Tensor& grad_out) {
    auto g = ops::fully_connected_backward(grad_out, cached_input, weight.value);
    for (int64_t i = 0; i < g.weight.size(); ++i) weight.grad.v[static_cast<size_t>(i)] += g.weight.v[static_cast<size_t>(i)];
    for (int64_t i = 0; i < g.bias.size(); ++i) bias.grad.v[static_cast<size_t>(i)] += g.bias.v[static_cast<size_t>(i)];
    return std::move(g.input);
}

void ConvBlock::init(const std::string& prefix, int out_ch, int in_ch, int kh, int kw, Rng& rng) {
    conv.init(prefix + "conv", out_ch, in_ch, kh, kw, rng);
    bn.init(prefix + "bn", out_ch);
    act = ReluLayer{};
    pool = MaxPoolLayer{};
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
    return pool.forward(act.forward(bn.forward(conv.forward(x, mode), mode), mode), mode);
}

Tensor ConvBlock::backward(const Tensor& grad_out) {
    return conv.backward(bn.backward(act.backward(pool.backward(grad_out))));
}

MitosisClassifier::MitosisClassifier(uint64_t seed) {
    Rng rng(seed);
    block1.init("conv1.", 16, 3, 4, 4, rng);
    block2.init("conv2.", 16, 16, 3, 3, rng);
    block3.init("conv3.", 16, 16, 3, 3, rng);
    block4.init("conv4.", 16, 16, 3, 3, rng);
    fc1.init("fc1", 64, kFeatureWidth, rng);
    bn_fc.init("fc1.bn", 64);
    fc2.init("fc2", 2, 64, rng);
}

ForwardTrace MitosisClassifier::forward(const Tensor& batch, Mode mode) {
    if (batch.rank() != 4 || batch.shape[1] != 3 || batch.shape[2] != kPatchSize || batch.shape[3] != kPatchSize)
        throw ShapeError("classifier: expected input [B x 3 x 63 x 63], got " + batch.shape_str());
    const int B = batch.shape[0];
    Tensor h = block1.forward(batch, mode);
    h = block2.forward(h, mode);
    Tensor tap2 = h;
    h = block3.forward(h, mode);
    h = block4.forward(h, mode);
    Tensor tap4 = h;
    h = h.reshaped({B, kFeatureWidth});
    h = fc1.forward(h, mode);
    h = bn_fc.forward(h, mode);
    h = act_fc.forward(h, mode);
    Tensor lg = fc2.forward(h, mode);
    ForwardTrace trace{ops::softmax(lg), std::move(tap2), std::move(tap4)};
    if (mode == Mode::Train) logits_ = std::move(lg);
    return trace;
}

Tensor MitosisClassifier::backward(const Tensor& grad_logits) {
    Tensor d = fc2.backward(grad_logits);
    d = act_fc.backward(d);
    d = bn_fc.backward(d);
    d = fc1.backward(d);
    d = d.reshaped({d.shape[0], 16, 2, 2});
    d = block4.backward(d);
    d = block3.backward(d);
    d = block2.backward(d);
    return block1.backward(d);
}

Tensor MitosisClassifier::backward_from_taps(const Tensor& grad_tap2, const Tensor& grad_tap4) {
    Tensor d = block4.backward(grad_tap4);
    d = block3.backward(d);
    if (!d.same_shape(grad_tap2))
        throw ShapeError("backward_from_taps: tap2 gradient " + grad_tap2.shape_str() + " does not match " + d.shape_str());
    for (int64_t i = 0; i < d.size(); ++i) d.v[static_cast<size_t>(i)] += grad_tap2.v[static_cast<size_t>(i)];
    d = block2.backward(d);
    return block1.backward(d);
}

std::vector<Parameter*> MitosisClassifier::parameters() {
    std::vector<Parameter*> out;
    for (ConvBlock* b : {&block1, &block2, &block3, &block4}) {
        out.push_back(&b->conv.weight);
        out.push_back(&b->conv.bias);
        out.push_back(&b->bn.gamma);
        out.push_back(&b->bn.beta);
    }
    out.push_back(&fc1.weight);
    out.push_back(&fc1.bias);
    out.push_back(&bn_fc.gamma);
    out.push_back(&bn_fc.beta);
    out.push_back(&fc2.weight);
    out.push_back(&fc2.bias);
    return out;
}

std::vector<NamedTensor> MitosisClassifier::named_parameters() {
    std::vector<NamedTensor> out;
    for (Parameter* p : parameters()) out.push_back({"m." + p->name, &p->value});
    return out;
}

std::vector<std::pair<std::string, ops::BatchNormState*>> MitosisClassifier::named_bn_states() {
    return {{"m.conv1.bn", &block1.bn.state},
            {"m.conv2.bn", &block2.bn.state},
            {"m.conv3.bn", &block3.bn.state},
            {"m.conv4.bn", &block4.bn.state},
            {"m.fc1.bn", &bn_fc.state}};
}

void MitosisClassifier::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

int64_t MitosisClassifier::parameter_count() {
    int64_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
}

DomainBranch::DomainBranch(int num_domains, uint64_t seed) : num_domains_(num_domains) {
    if (num_domains < 2) throw ValueError("domain branch needs at least 2 domains, got " + std::to_string(num_domains));
    reinit(seed);
}

void DomainBranch::reinit(uint64_t seed) {
    Rng rng(seed);
    mirror3.init("conv3.", 16, 16, 3, 3, rng);
    mirror4.init("conv4.", 16, 16, 3, 3, rng);
    fc1.init("fc1", 64, 64, rng);
    bn_fc.init("fc1.bn", 64);
    fc2.init("fc2", num_domains_, 64, rng);
    logits_ = Tensor();
}

Tensor DomainBranch::forward(const ForwardTrace& trace, Mode mode) { return forward(trace.tap2, trace.tap4, mode); }

Tensor DomainBranch::forward(const Tensor& tap2, const Tensor& tap4, Mode mode) {
    if (tap2.rank() != 4 || tap2.shape[1] != 16 || tap2.shape[2] != 14 || tap2.shape[3] != 14)
        throw ShapeError("domain branch: expected tap2 [B x 16 x 14 x 14], got " + tap2.shape_str());
    const int B = tap2.shape[0];
    if (tap4.shape != std::vector<int>({B, 16, 2, 2}))
        throw ShapeError("domain branch: expected tap4 [" + std::to_string(B) + " x 16 x 2 x 2], got " + tap4.shape_str());
    Tensor h = mirror3.forward(tap2, mode);
    h = mirror4.forward(h, mode);
    for (int64_t i = 0; i < h.size(); ++i) h.v[static_cast<size_t>(i)] += tap4.v[static_cast<size_t>(i)];
    h = h.reshaped({B, 64});
    h = fc1.forward(h, mode);
    h = bn_fc.forward(h, mode);
    h = act_fc.forward(h, mode);
    Tensor lg = fc2.forward(h, mode);
    Tensor probs = ops::softmax(lg);
    if (mode == Mode::Train) logits_ = std::move(lg);
    return probs;
}

DomainBranch::TapGrads DomainBranch::backward(const Tensor& grad_logits) {
    Tensor d = fc2.backward(grad_logits);
    d = act_fc.backward(d);
    d = bn_fc.backward(d);
    d = fc1.backward(d);
    Tensor dfused = d.reshaped({d.shape[0], 16, 2, 2});
    Tensor dm = mirror4.backward(dfused);
    dm = mirror3.backward(dm);
    return TapGrads{std::move(dm), std::move(dfused)};
}

std::vector<Parameter*> DomainBranch::parameters() {
    std::vector<Parameter*> out;
    for (ConvBlock* b : {&mirror3, &mirror4}) {
        out.push_back(&b->conv.weight);
        out.push_back(&b->conv.bias);
        out.push_back(&b->bn.gamma);
        out.push_back(&b->bn.beta);
    }
    out.push_back(&fc1.weight);
    out.push_back(&fc1.bias);
    out.push_back(&bn_fc.gamma);
    out.push_back(&bn_fc.beta);
    out.push_back(&fc2.weight);
    out.push_back(&fc2.bias);
    return out;
}

std::vector<NamedTensor> DomainBranch::named_parameters() {
    std::vector<NamedTensor> out;
    for (Parameter* p : parameters()) out.push_back({"d." + p->name, &p->value});
    return out;
}

std::vector<std::pair<std::string, ops::BatchNormState*>> DomainBranch::named_bn_states() {
    return {{"d.conv3.bn", &mirror3.bn.state}, {"d.conv4.bn", &mirror4.bn.state}, {"d.fc1.bn", &bn_fc.state}};
}

void DomainBranch::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace astain
