// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>

#include "astain/kernels.hpp"

// Plain serial loops, written for obviousness rather than speed. Tests check
// the parallel kernels against these; the kernel benchmark reports the
// speedup of the parallel flavor.

namespace astain::kernels::reference {

void conv2d_forward(const double* in, const double* w, const double* bias, double* out, int B, int C, int H, int W,
                    int O, int KH, int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x) {
                    double acc = bias[o];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < KH; ++u)
                            for (int vk = 0; vk < KW; ++vk)
                                acc += in[((static_cast<int64_t>(b) * C + c) * H + y + u) * W + x + vk] *
                                       w[((static_cast<int64_t>(o) * C + c) * KH + u) * KW + vk];
                    out[((static_cast<int64_t>(b) * O + o) * OH + y) * OW + x] = acc;
                }
}

void conv2d_backward_input(const double* dout, const double* w, double* din, int B, int C, int H, int W, int O, int KH,
                           int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
    std::memset(din, 0, sizeof(double) * static_cast<size_t>(B) * C * H * W);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x) {
                    const double g = dout[((static_cast<int64_t>(b) * O + o) * OH + y) * OW + x];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < KH; ++u)
                            for (int vk = 0; vk < KW; ++vk)
                                din[((static_cast<int64_t>(b) * C + c) * H + y + u) * W + x + vk] +=
                                    g * w[((static_cast<int64_t>(o) * C + c) * KH + u) * KW + vk];
                }
}

void conv2d_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int C, int H,
                            int W, int O, int KH, int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
    std::memset(dw, 0, sizeof(double) * static_cast<size_t>(O) * C * KH * KW);
    std::memset(dbias, 0, sizeof(double) * static_cast<size_t>(O));
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x) {
                    const double g = dout[((static_cast<int64_t>(b) * O + o) * OH + y) * OW + x];
                    dbias[o] += g;
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < KH; ++u)
                            for (int vk = 0; vk < KW; ++vk)
                                dw[((static_cast<int64_t>(o) * C + c) * KH + u) * KW + vk] +=
                                    g * in[((static_cast<int64_t>(b) * C + c) * H + y + u) * W + x + vk];
                }
}

void linear_forward(const double* in, const double* w, const double* bias, double* out, int B, int N, int M) {
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            double acc = bias[m];
            for (int n = 0; n < N; ++n)
                acc += in[static_cast<int64_t>(b) * N + n] * w[static_cast<int64_t>(m) * N + n];
            out[static_cast<int64_t>(b) * M + m] = acc;
        }
}

void linear_backward_input(const double* dout, const double* w, double* din, int B, int N, int M) {
    std::memset(din, 0, sizeof(double) * static_cast<size_t>(B) * N);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const double g = dout[static_cast<int64_t>(b) * M + m];
            for (int n = 0; n < N; ++n) din[static_cast<int64_t>(b) * N + n] += g * w[static_cast<int64_t>(m) * N + n];
        }
}

void linear_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int N, int M) {
    std::memset(dw, 0, sizeof(double) * static_cast<size_t>(M) * N);
    std::memset(dbias, 0, sizeof(double) * static_cast<size_t>(M));
    for (int m = 0; m < M; ++m)
        for (int b = 0; b < B; ++b) {
            const double g = dout[static_cast<int64_t>(b) * M + m];
            dbias[m] += g;
            for (int n = 0; n < N; ++n) dw[static_cast<int64_t>(m) * N + n] += g * in[static_cast<int64_t>(b) * N + n];
        }
}

void maxpool2x2_forward(const double* in, double* out, int64_t* argmax, int B, int C, int H, int W) {
    const int OH = H / 2;
    const int OW = W / 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x) {
                    const int64_t ibase = (static_cast<int64_t>(b) * C + c) * H * W;
                    int64_t best = ibase + static_cast<int64_t>(2 * y) * W + 2 * x;
                    double bv = in[best];
                    for (int du = 0; du < 2; ++du)
                        for (int dv = 0; dv < 2; ++dv) {
                            const int64_t idx = ibase + static_cast<int64_t>(2 * y + du) * W + 2 * x + dv;
                            if (in[idx] > bv) {
                                bv = in[idx];
                                best = idx;
                            }
                        }
                    const int64_t obase = (static_cast<int64_t>(b) * C + c) * OH * OW;
                    out[obase + static_cast<int64_t>(y) * OW + x] = bv;
                    argmax[obase + static_cast<int64_t>(y) * OW + x] = best;
                }
}

void maxpool2x2_backward(const double* dout, const int64_t* argmax, double* din, int64_t out_n, int64_t in_n) {
    std::memset(din, 0, sizeof(double) * static_cast<size_t>(in_n));
    for (int64_t i = 0; i < out_n; ++i) din[argmax[i]] += dout[i];
}

void relu_forward(const double* in, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = std::max(0.0, in[i]);
}

void relu_backward(const double* dout, const double* in, double* din, int64_t n) {
    for (int64_t i = 0; i < n; ++i) din[i] = in[i] > 0.0 ? dout[i] : 0.0;
}

void channel_moments(const double* in, double* mean, double* var, int B, int C, int64_t S) {
    const double n = static_cast<double>(B) * static_cast<double>(S);
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < S; ++i) s += in[(static_cast<int64_t>(b) * C + c) * S + i];
        mean[c] = s / n;
        double sq = 0.0;
        for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < S; ++i) {
                const double d = in[(static_cast<int64_t>(b) * C + c) * S + i] - mean[c];
                sq += d * d;
            }
        var[c] = sq / n;
    }
}

void bn_normalize(const double* in, const double* mean, const double* inv_std, const double* gamma, const double* beta,
                  double* xhat, double* out, int B, int C, int64_t S) {
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < S; ++i) {
                const int64_t idx = (static_cast<int64_t>(b) * C + c) * S + i;
                const double xh = (in[idx] - mean[c]) * inv_std[c];
                if (xhat) xhat[idx] = xh;
                out[idx] = xh * gamma[c] + beta[c];
            }
}

void bn_backward(const double* dout, const double* xhat, const double* gamma, const double* inv_std, double* din,
                 double* dgamma, double* dbeta, int B, int C, int64_t S) {
    const double n = static_cast<double>(B) * static_cast<double>(S);
    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < S; ++i) {
                const int64_t idx = (static_cast<int64_t>(b) * C + c) * S + i;
                sum_dy += dout[idx];
                sum_dy_xh += dout[idx] * xhat[idx];
            }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xh;
        for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < S; ++i) {
                const int64_t idx = (static_cast<int64_t>(b) * C + c) * S + i;
                const double dxh = dout[idx] * gamma[c];
                din[idx] = inv_std[c] * (dxh - (gamma[c] * sum_dy + xhat[idx] * gamma[c] * sum_dy_xh) / n);
            }
    }
}

void softmax_rows(const double* logits, double* probs, int B, int K) {
    for (int b = 0; b < B; ++b) {
        const double* z = logits + static_cast<int64_t>(b) * K;
        double* p = probs + static_cast<int64_t>(b) * K;
        double mx = *std::max_element(z, z + K);
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            p[k] = std::exp(z[k] - mx);
            s += p[k];
        }
        for (int k = 0; k < K; ++k) p[k] /= s;
    }
}

}  // namespace astain::kernels::reference
