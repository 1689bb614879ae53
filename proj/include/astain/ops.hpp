// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "astain/common.hpp"
#include "astain/tensor.hpp"

namespace astain {

// Trainable tensor with its gradient and SGD momentum buffer. The three
// tensors always share one shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor momentum;

    Parameter() = default;
    Parameter(std::string n, Tensor init)
        : name(std::move(n)), value(std::move(init)), grad(value.shape), momentum(value.shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double lr_decay = 0.9;
    int lr_decay_interval = 5000;
    long iteration = 0;

    double lr_at(long t) const;
};

// v <- momentum*v + (grad + weight_decay*value); value <- value - lr_at(iteration)*v.
// Gradients are zeroed afterwards.
void sgd_step(std::span<Parameter* const> params, const OptimizerState& state);

// value += coeff * grad for every parameter, then gradients are zeroed.
// Used for the plain update rules that carry no momentum or weight decay.
void apply_plain_update(std::span<Parameter* const> params, double coeff);

namespace ops {

// valid convolution, stride 1
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel);

struct MaxPoolResult {
    Tensor output;
    std::vector<int64_t> argmax;     // flat input index feeding each output cell
    std::vector<int> input_shape;
};
MaxPoolResult maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const Tensor& grad_out, const MaxPoolResult& cache);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    bool initialized = false;
};

struct BatchNormCache {
    Tensor xhat;
    std::vector<double> inv_std;  // per channel
};

// input is [B, C, ...spatial]; gamma and beta are [C]. Train mode uses batch
// statistics and updates state; infer mode requires initialized state.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormState& state,
                 BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};
BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache);

// read-only infer-mode normalization against frozen running statistics
Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta, const BatchNormState& state);

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct FullyConnectedGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};
FullyConnectedGrads fully_connected_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight);

Tensor softmax(const Tensor& logits);

struct SoftmaxLoss {
    double loss = 0.0;
    Tensor probabilities;
};
SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// (p - onehot)/B
Tensor softmax_cross_entropy_backward(const Tensor& probabilities, std::span<const int> labels);

}  // namespace ops

// --- gradient checking -----------------------------------------------------

struct GradCheckTarget {
    std::string name;
    Tensor* value;         // perturbed in place and restored
    Tensor analytic_grad;  // snapshot of the analytic gradient at the base point
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_target;
    int64_t worst_index = -1;
    long probes = 0;
};

// Central finite differences of `loss` against the recorded analytic
// gradients. max_probes_per_tensor <= 0 checks every coordinate; otherwise a
// seeded random subset of that size per tensor.
GradCheckReport gradient_check(const std::function<double()>& loss, std::vector<GradCheckTarget>& targets,
                               double h = 1e-5, int max_probes_per_tensor = 0, uint64_t seed = 0);

}  // namespace astain
