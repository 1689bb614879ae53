// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "astain/kernels.hpp"

namespace astain {

double OptimizerState::lr_at(long t) const {
    if (learning_rate <= 0.0) throw ValueError("learning rate must be positive");
    const long k = lr_decay_interval > 0 ? t / lr_decay_interval : 0;
    double lr = learning_rate;
    for (long i = 0; i < k; ++i) lr *= lr_decay;
    return lr;
}

void sgd_step(std::span<Parameter* const> params, const OptimizerState& state) {
    const double lr = state.lr_at(state.iteration);
    for (Parameter* p : params) {
        double* w = p->value.data();
        double* g = p->grad.data();
        double* m = p->momentum.data();
        const int64_t n = p->value.size();
        for (int64_t i = 0; i < n; ++i) {
            const double eff = g[i] + state.weight_decay * w[i];
            m[i] = state.momentum * m[i] + eff;
            w[i] -= lr * m[i];
        }
        p->zero_grad();
    }
}

void apply_plain_update(std::span<Parameter* const> params, double coeff) {
    for (Parameter* p : params) {
        if (coeff != 0.0) {
            double* w = p->value.data();
            const double* g = p->grad.data();
            const int64_t n = p->value.size();
            for (int64_t i = 0; i < n; ++i) w[i] += coeff * g[i];
        }
        p->zero_grad();
    }
}

namespace ops {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    require(input.rank() == 4, "conv2d: input must be 4-D, got " + input.shape_str());
    require(kernel.rank() == 4, "conv2d: kernel must be 4-D, got " + kernel.shape_str());
    require(bias.rank() == 1, "conv2d: bias must be 1-D, got " + bias.shape_str());
    const int B = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = kernel.shape[0], KH = kernel.shape[2], KW = kernel.shape[3];
    require(kernel.shape[1] == C, "conv2d: kernel expects " + std::to_string(kernel.shape[1]) + " input channels, input has " +
                                      std::to_string(C));
    require(bias.shape[0] == O,
            "conv2d: bias has " + std::to_string(bias.shape[0]) + " entries, kernel has " + std::to_string(O) + " outputs");
    require(H >= KH && W >= KW,
            "conv2d: input " + input.shape_str() + " smaller than kernel " + kernel.shape_str());
    Tensor out({B, O, H - KH + 1, W - KW + 1});
    kernels::conv2d_forward(input.data(), kernel.data(), bias.data(), out.data(), B, C, H, W, O, KH, KW);
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel) {
    const int B = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = kernel.shape[0], KH = kernel.shape[2], KW = kernel.shape[3];
    require(grad_out.shape == std::vector<int>({B, O, H - KH + 1, W - KW + 1}),
            "conv2d_backward: upstream gradient " + grad_out.shape_str() + " does not match forward output");
    Conv2dGrads g{Tensor(input.shape), Tensor(kernel.shape), Tensor({O})};
    kernels::conv2d_backward_input(grad_out.data(), kernel.data(), g.input.data(), B, C, H, W, O, KH, KW);
    kernels::conv2d_backward_params(grad_out.data(), input.data(), g.kernel.data(), g.bias.data(), B, C, H, W, O, KH, KW);
    return g;
}

MaxPoolResult maxpool2x2(const Tensor& input) {
    require(input.rank() == 4, "maxpool2x2: input must be 4-D, got " + input.shape_str());
    const int B = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    require(H % 2 == 0 && W % 2 == 0, "maxpool2x2: spatial extents must be even, got " + input.shape_str());
    MaxPoolResult r;
    r.output = Tensor({B, C, H / 2, W / 2});
    r.argmax.resize(static_cast<size_t>(r.output.size()));
    r.input_shape = input.shape;
    kernels::maxpool2x2_forward(input.data(), r.output.data(), r.argmax.data(), B, C, H, W);
    return r;
}

Tensor maxpool2x2_backward(const Tensor& grad_out, const MaxPoolResult& cache) {
    require(grad_out.shape == cache.output.shape,
            "maxpool2x2_backward: upstream gradient " + grad_out.shape_str() + " does not match pooled output");
    Tensor din(cache.input_shape);
    kernels::maxpool2x2_backward(grad_out.data(), cache.argmax.data(), din.data(), grad_out.size(), din.size());
    return din;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape);
    kernels::relu_forward(input.data(), out.data(), input.size());
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    require(grad_out.shape == input.shape, "relu_backward: gradient shape " + grad_out.shape_str() + " != input " + input.shape_str());
    Tensor din(input.shape);
    kernels::relu_backward(grad_out.data(), input.data(), din.data(), input.size());
    return din;
}

namespace {

struct BnDims {
    int B, C;
    int64_t S;
};

BnDims bn_dims(const Tensor& input) {
    if (input.rank() < 2) throw ShapeError("batchnorm: input must be at least 2-D, got " + input.shape_str());
    BnDims d{input.shape[0], input.shape[1], 1};
    for (int a = 2; a < input.rank(); ++a) d.S *= input.shape[a];
    return d;
}

}  // namespace

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormState& state,
                 BatchNormCache* cache) {
    const BnDims d = bn_dims(input);
    require(gamma.rank() == 1 && gamma.shape[0] == d.C,
            "batchnorm: gamma " + gamma.shape_str() + " must have one entry per channel (" + std::to_string(d.C) + ")");
    require(beta.rank() == 1 && beta.shape[0] == d.C,
            "batchnorm: beta " + beta.shape_str() + " must have one entry per channel (" + std::to_string(d.C) + ")");

    Tensor out(input.shape);
    if (mode == Mode::Train) {
        if (static_cast<int64_t>(d.B) * d.S < 2)
            throw ShapeError("batchnorm: train mode needs at least 2 values per channel, got " +
                             std::to_string(static_cast<int64_t>(d.B) * d.S));
        std::vector<double> mean(static_cast<size_t>(d.C)), var(static_cast<size_t>(d.C)), inv_std(static_cast<size_t>(d.C));
        kernels::channel_moments(input.data(), mean.data(), var.data(), d.B, d.C, d.S);
        for (int c = 0; c < d.C; ++c) inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + kBatchNormEps);

        double* xhat = nullptr;
        if (cache) {
            cache->xhat = Tensor(input.shape);
            cache->inv_std = inv_std;
            xhat = cache->xhat.data();
        }
        kernels::bn_normalize(input.data(), mean.data(), inv_std.data(), gamma.data(), beta.data(), xhat, out.data(),
                              d.B, d.C, d.S);

        if (state.running_mean.size() != d.C) {
            state.running_mean = Tensor({d.C});
            state.running_var = Tensor({d.C});
            std::fill(state.running_var.v.begin(), state.running_var.v.end(), 1.0);
        }
        for (int c = 0; c < d.C; ++c) {
            state.running_mean(c) = kBatchNormMomentum * state.running_mean(c) + (1.0 - kBatchNormMomentum) * mean[static_cast<size_t>(c)];
            state.running_var(c) = kBatchNormMomentum * state.running_var(c) + (1.0 - kBatchNormMomentum) * var[static_cast<size_t>(c)];
        }
        state.initialized = true;
    } else {
        out = batchnorm_infer(input, gamma, beta, state);
    }
    return out;
}

Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta, const BatchNormState& state) {
    const BnDims d = bn_dims(input);
    if (!state.initialized)
        throw ValueError("batchnorm: infer mode requested before running statistics were initialized");
    require(state.running_mean.size() == d.C, "batchnorm: running statistics track " +
                                                  std::to_string(state.running_mean.size()) + " channels, input has " +
                                                  std::to_string(d.C));
    Tensor out(input.shape);
    std::vector<double> inv_std(static_cast<size_t>(d.C));
    for (int c = 0; c < d.C; ++c) inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(state.running_var(c) + kBatchNormEps);
    kernels::bn_normalize(input.data(), state.running_mean.data(), inv_std.data(), gamma.data(), beta.data(), nullptr,
                          out.data(), d.B, d.C, d.S);
    return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache) {
    require(grad_out.shape == cache.xhat.shape,
            "batchnorm_backward: gradient " + grad_out.shape_str() + " does not match cached activation " + cache.xhat.shape_str());
    const BnDims d = bn_dims(grad_out);
    BatchNormGrads g{Tensor(grad_out.shape), Tensor({d.C}), Tensor({d.C})};
    kernels::bn_backward(grad_out.data(), cache.xhat.data(), gamma.data(), cache.inv_std.data(), g.input.data(),
                         g.gamma.data(), g.beta.data(), d.B, d.C, d.S);
    return g;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 2, "fully_connected: input must be 2-D, got " + input.shape_str());
    require(weight.rank() == 2, "fully_connected: weight must be 2-D, got " + weight.shape_str());
    const int B = input.shape[0], N = input.shape[1], M = weight.shape[0];
    require(weight.shape[1] == N, "fully_connected: weight expects " + std::to_string(weight.shape[1]) +
                                      " inputs, input provides " + std::to_string(N));
    require(bias.rank() == 1 && bias.shape[0] == M,
            "fully_connected: bias " + bias.shape_str() + " must have " + std::to_string(M) + " entries");
    Tensor out({B, M});
    kernels::linear_forward(input.data(), weight.data(), bias.data(), out.data(), B, N, M);
    return out;
}

FullyConnectedGrads fully_connected_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight) {
    const int B = input.shape[0], N = input.shape[1], M = weight.shape[0];
    require(grad_out.shape == std::vector<int>({B, M}),
            "fully_connected_backward: gradient " + grad_out.shape_str() + " does not match forward output");
    FullyConnectedGrads g{Tensor(input.shape), Tensor(weight.shape), Tensor({M})};
    kernels::linear_backward_input(grad_out.data(), weight.data(), g.input.data(), B, N, M);
    kernels::linear_backward_params(grad_out.data(), input.data(), g.weight.data(), g.bias.data(), B, N, M);
    return g;
}

Tensor softmax(const Tensor& logits) {
    require(logits.rank() == 2, "softmax: logits must be 2-D, got " + logits.shape_str());
    Tensor p(logits.shape);
    kernels::softmax_rows(logits.data(), p.data(), logits.shape[0], logits.shape[1]);
    return p;
}

SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require(logits.rank() == 2, "softmax_cross_entropy: logits must be 2-D, got " + logits.shape_str());
    const int B = logits.shape[0], K = logits.shape[1];
    require(static_cast<int>(labels.size()) == B, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                                      " labels for batch of " + std::to_string(B));
    for (int b = 0; b < B; ++b)
        if (labels[static_cast<size_t>(b)] < 0 || labels[static_cast<size_t>(b)] >= K)
            throw ValueError("softmax_cross_entropy: label " + std::to_string(labels[static_cast<size_t>(b)]) +
                             " out of range [0, " + std::to_string(K) + ")");

    SoftmaxLoss r;
    r.probabilities = softmax(logits);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        // log p[label] computed from the logits directly so extreme values
        // cannot round through zero
        const double* z = logits.data() + static_cast<int64_t>(b) * K;
        double mx = z[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(z[k] - mx);
        total += -(z[labels[static_cast<size_t>(b)]] - mx - std::log(s));
    }
    r.loss = total / B;
    return r;
}

Tensor softmax_cross_entropy_backward(const Tensor& probabilities, std::span<const int> labels) {
    const int B = probabilities.shape[0];
    Tensor g = probabilities;
    for (int b = 0; b < B; ++b) g(b, labels[static_cast<size_t>(b)]) -= 1.0;
    for (double& x : g.v) x /= B;
    return g;
}

}  // namespace ops

GradCheckReport gradient_check(const std::function<double()>& loss, std::vector<GradCheckTarget>& targets, double h,
                               int max_probes_per_tensor, uint64_t seed) {
    GradCheckReport report;
    Rng rng(seed);
    for (auto& t : targets) {
        const int64_t n = t.value->size();
        std::vector<int64_t> probe_idx;
        if (max_probes_per_tensor <= 0 || max_probes_per_tensor >= n) {
            probe_idx.resize(static_cast<size_t>(n));
            std::iota(probe_idx.begin(), probe_idx.end(), 0);
        } else {
            std::vector<int64_t> all(static_cast<size_t>(n));
            std::iota(all.begin(), all.end(), 0);
            for (int k = 0; k < max_probes_per_tensor; ++k) {
                const int j = rng.uniform_int(k, static_cast<int>(n) - 1);
                std::swap(all[static_cast<size_t>(k)], all[static_cast<size_t>(j)]);
                probe_idx.push_back(all[static_cast<size_t>(k)]);
            }
        }
        for (int64_t i : probe_idx) {
            double& x = t.value->v[static_cast<size_t>(i)];
            const double orig = x;
            x = orig + h;
            const double f_plus = loss();
            x = orig - h;
            const double f_minus = loss();
            x = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double analytic = t.analytic_grad.v[static_cast<size_t>(i)];
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            const double rel = std::abs(numeric - analytic) / scale;
            ++report.probes;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_target = t.name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace astain
