// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

// Raw compute kernels behind the tensor ops. The default entry points are
// OpenMP-parallel; kernels::reference holds plain serial loops used as the
// ground truth in tests and as the baseline in the kernel benchmark.
//
// Every kernel accumulates each output element in a fixed serial order, so
// results are bitwise identical across thread counts and match the reference
// flavor up to (at most) FMA contraction differences.
//
// Layout: activations are [B, C, H, W] row-major; batchnorm kernels see the
// spatial dims flattened to S (S = 1 for fully connected activations).

namespace astain::kernels {

void conv2d_forward(const double* in, const double* w, const double* bias, double* out, int B, int C, int H, int W,
                    int O, int KH, int KW);
void conv2d_backward_input(const double* dout, const double* w, double* din, int B, int C, int H, int W, int O, int KH,
                           int KW);
void conv2d_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int C, int H,
                            int W, int O, int KH, int KW);

void linear_forward(const double* in, const double* w, const double* bias, double* out, int B, int N, int M);
void linear_backward_input(const double* dout, const double* w, double* din, int B, int N, int M);
void linear_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int N, int M);

void maxpool2x2_forward(const double* in, double* out, int64_t* argmax, int B, int C, int H, int W);
void maxpool2x2_backward(const double* dout, const int64_t* argmax, double* din, int64_t out_n, int64_t in_n);

void relu_forward(const double* in, double* out, int64_t n);
void relu_backward(const double* dout, const double* in, double* din, int64_t n);

// per-channel biased mean/variance over batch and spatial dims
void channel_moments(const double* in, double* mean, double* var, int B, int C, int64_t S);
// out = (x - mean) * inv_std * gamma + beta; xhat may be null when not needed
void bn_normalize(const double* in, const double* mean, const double* inv_std, const double* gamma, const double* beta,
                  double* xhat, double* out, int B, int C, int64_t S);
void bn_backward(const double* dout, const double* xhat, const double* gamma, const double* inv_std, double* din,
                 double* dgamma, double* dbeta, int B, int C, int64_t S);

// row-wise softmax with max subtraction
void softmax_rows(const double* logits, double* probs, int B, int K);

namespace reference {

void conv2d_forward(const double* in, const double* w, const double* bias, double* out, int B, int C, int H, int W,
                    int O, int KH, int KW);
void conv2d_backward_input(const double* dout, const double* w, double* din, int B, int C, int H, int W, int O, int KH,
                           int KW);
void conv2d_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int C, int H,
                            int W, int O, int KH, int KW);
void linear_forward(const double* in, const double* w, const double* bias, double* out, int B, int N, int M);
void linear_backward_input(const double* dout, const double* w, double* din, int B, int N, int M);
void linear_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int N, int M);
void maxpool2x2_forward(const double* in, double* out, int64_t* argmax, int B, int C, int H, int W);
void maxpool2x2_backward(const double* dout, const int64_t* argmax, double* din, int64_t out_n, int64_t in_n);
void relu_forward(const double* in, double* out, int64_t n);
void relu_backward(const double* dout, const double* in, double* din, int64_t n);
void channel_moments(const double* in, double* mean, double* var, int B, int C, int64_t S);
void bn_normalize(const double* in, const double* mean, const double* inv_std, const double* gamma, const double* beta,
                  double* xhat, double* out, int B, int C, int64_t S);
void bn_backward(const double* dout, const double* xhat, const double* gamma, const double* inv_std, double* din,
                 double* dgamma, double* dbeta, int B, int C, int64_t S);
void softmax_rows(const double* logits, double* probs, int B, int K);

}  // namespace reference

}  // namespace astain::kernels
