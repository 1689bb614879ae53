// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "astain/ops.hpp"

namespace astain {

// Layer wrappers that own parameters and the caches backward needs. Train
// mode fills the caches; infer mode leaves the object untouched so read-only
// forwards can run concurrently.

struct Conv2dLayer {
    Parameter weight;  // [O, C, KH, KW]
    Parameter bias;    // [O]
    Tensor cached_input;

    void init(const std::string& name, int out_ch, int in_ch, int kh, int kw, Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct BatchNormLayer {
    Parameter gamma;
    Parameter beta;
    ops::BatchNormState state;
    ops::BatchNormCache cache;

    void init(const std::string& name, int channels);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct ReluLayer {
    Tensor cached_input;
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct MaxPoolLayer {
    ops::MaxPoolResult cache;
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct LinearLayer {
    Parameter weight;  // [M, N]
    Parameter bias;    // [M]
    Tensor cached_input;

    void init(const std::string& name, int out_features, int in_features, Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

// conv -> batchnorm -> relu -> 2x2 maxpool
struct ConvBlock {
    Conv2dLayer conv;
    BatchNormLayer bn;
    ReluLayer act;
    MaxPoolLayer pool;

    void init(const std::string& prefix, int out_ch, int in_ch, int kh, int kw, Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct ForwardTrace {
    Tensor class_probabilities;  // [B, 2]
    Tensor tap2;                 // [B, 16, 14, 14], after block 2's pool
    Tensor tap4;                 // [B, 16, 2, 2], after block 4's pool
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

// 63x63 RGB patch -> mitosis probability. Plan:
// conv 4x4 (3->16) / BN / ReLU / pool, then three conv 3x3 (16->16) blocks,
// flatten to 64, fc 64 / BN / ReLU, fc 2, softmax.
// Spatial extents: 63 -> 60 -> 30 -> 28 -> 14 -> 12 -> 6 -> 4 -> 2.
class MitosisClassifier {
public:
    static constexpr int kPatchSize = 63;
    static constexpr int kFeatureWidth = 64;  // 16 maps x 2 x 2

    explicit MitosisClassifier(uint64_t seed);

    ForwardTrace forward(const Tensor& batch, Mode mode);

    // valid after a train-mode forward
    const Tensor& logits() const { return logits_; }

    // backprop from the class head; accumulates parameter gradients and
    // returns the gradient with respect to the input batch
    Tensor backward(const Tensor& grad_logits);
    // backprop of a loss attached to the taps only (the adversarial path)
    Tensor backward_from_taps(const Tensor& grad_tap2, const Tensor& grad_tap4);

    std::vector<Parameter*> parameters();
    std::vector<NamedTensor> named_parameters();
    std::vector<std::pair<std::string, ops::BatchNormState*>> named_bn_states();
    void zero_grads();
    int64_t parameter_count();

    ConvBlock block1, block2, block3, block4;
    LinearLayer fc1;
    BatchNormLayer bn_fc;
    ReluLayer act_fc;
    LinearLayer fc2;

private:
    Tensor logits_;
};

// Domain classification head fed by the classifier's taps. The tap2 path
// mirrors blocks 3 and 4 (14 -> 12 -> 6 -> 4 -> 2), is summed elementwise
// with tap4, then flatten 64 / fc 64 / BN / ReLU / fc D / softmax.
class DomainBranch {
public:
    DomainBranch(int num_domains, uint64_t seed);

    Tensor forward(const ForwardTrace& trace, Mode mode);
    Tensor forward(const Tensor& tap2, const Tensor& tap4, Mode mode);
    const Tensor& logits() const { return logits_; }

    struct TapGrads {
        Tensor tap2;
        Tensor tap4;
    };
    TapGrads backward(const Tensor& grad_logits);

    // fresh theta_D from seed; everything else (notably the classifier this
    // branch taps) is untouched
    void reinit(uint64_t seed);

    int num_domains() const { return num_domains_; }
    std::vector<Parameter*> parameters();
    std::vector<NamedTensor> named_parameters();
    std::vector<std::pair<std::string, ops::BatchNormState*>> named_bn_states();
    void zero_grads();

    ConvBlock mirror3, mirror4;
    LinearLayer fc1;
    BatchNormLayer bn_fc;
    ReluLayer act_fc;
    LinearLayer fc2;

private:
    int num_domains_;
    Tensor logits_;
};

}  // namespace astain
