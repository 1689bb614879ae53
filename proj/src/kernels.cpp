// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Parallelism is always over independent output slices and every output
// element keeps one fixed accumulation order, so results do not depend on
// the thread count.

namespace astain::kernels {

void conv2d_forward(const double* in, const double* w, const double* bias, double* out, int B, int C, int H, int W,
                    int O, int KH, int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
            const double* inb = in + static_cast<int64_t>(b) * C * H * W;
            double* ob = out + (static_cast<int64_t>(b) * O + o) * OH * OW;
            const double* wo = w + static_cast<int64_t>(o) * C * KH * KW;
            for (int y = 0; y < OH; ++y) {
                double* orow = ob + static_cast<int64_t>(y) * OW;
                const double bv = bias[o];
                for (int x = 0; x < OW; ++x) orow[x] = bv;
                for (int c = 0; c < C; ++c) {
                    for (int u = 0; u < KH; ++u) {
                        const double* irow = inb + (static_cast<int64_t>(c) * H + y + u) * W;
                        const double* wrow = wo + (static_cast<int64_t>(c) * KH + u) * KW;
                        for (int vk = 0; vk < KW; ++vk) {
                            const double wv = wrow[vk];
                            const double* ir = irow + vk;
                            for (int x = 0; x < OW; ++x) orow[x] += wv * ir[x];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* dout, const double* w, double* din, int B, int C, int H, int W, int O, int KH,
                           int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        double* db = din + static_cast<int64_t>(b) * C * H * W;
        std::memset(db, 0, sizeof(double) * static_cast<size_t>(C) * H * W);
        const double* gb = dout + static_cast<int64_t>(b) * O * OH * OW;
        for (int o = 0; o < O; ++o) {
            const double* wo = w + static_cast<int64_t>(o) * C * KH * KW;
            for (int y = 0; y < OH; ++y) {
                const double* grow = gb + (static_cast<int64_t>(o) * OH + y) * OW;
                for (int c = 0; c < C; ++c) {
                    for (int u = 0; u < KH; ++u) {
                        double* drow = db + (static_cast<int64_t>(c) * H + y + u) * W;
                        const double* wrow = wo + (static_cast<int64_t>(c) * KH + u) * KW;
                        for (int vk = 0; vk < KW; ++vk) {
                            const double wv = wrow[vk];
                            double* dr = drow + vk;
                            for (int x = 0; x < OW; ++x) dr[x] += wv * grow[x];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int C, int H,
                            int W, int O, int KH, int KW) {
    const int OH = H - KH + 1;
    const int OW = W - KW + 1;
#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; ++o) {
        double* dwo = dw + static_cast<int64_t>(o) * C * KH * KW;
        std::memset(dwo, 0, sizeof(double) * static_cast<size_t>(C) * KH * KW);
        double db = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* inb = in + static_cast<int64_t>(b) * C * H * W;
            for (int y = 0; y < OH; ++y) {
                const double* grow = dout + ((static_cast<int64_t>(b) * O + o) * OH + y) * OW;
                double gs = 0.0;
                for (int x = 0; x < OW; ++x) gs += grow[x];
                db += gs;
                for (int c = 0; c < C; ++c) {
                    for (int u = 0; u < KH; ++u) {
                        const double* irow = inb + (static_cast<int64_t>(c) * H + y + u) * W;
                        double* dwrow = dwo + (static_cast<int64_t>(c) * KH + u) * KW;
                        for (int vk = 0; vk < KW; ++vk) {
                            const double* ir = irow + vk;
                            double acc = 0.0;
                            for (int x = 0; x < OW; ++x) acc += grow[x] * ir[x];
                            dwrow[vk] += acc;
                        }
                    }
                }
            }
        }
        dbias[o] = db;
    }
}

void linear_forward(const double* in, const double* w, const double* bias, double* out, int B, int N, int M) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const double* xr = in + static_cast<int64_t>(b) * N;
        double* orow = out + static_cast<int64_t>(b) * M;
        for (int m = 0; m < M; ++m) {
            const double* wr = w + static_cast<int64_t>(m) * N;
            double acc = bias[m];
            for (int n = 0; n < N; ++n) acc += xr[n] * wr[n];
            orow[m] = acc;
        }
    }
}

void linear_backward_input(const double* dout, const double* w, double* din, int B, int N, int M) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        double* dr = din + static_cast<int64_t>(b) * N;
        std::memset(dr, 0, sizeof(double) * static_cast<size_t>(N));
        const double* grow = dout + static_cast<int64_t>(b) * M;
        for (int m = 0; m < M; ++m) {
            const double g = grow[m];
            const double* wr = w + static_cast<int64_t>(m) * N;
            for (int n = 0; n < N; ++n) dr[n] += g * wr[n];
        }
    }
}

void linear_backward_params(const double* dout, const double* in, double* dw, double* dbias, int B, int N, int M) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m) {
        double* dwr = dw + static_cast<int64_t>(m) * N;
        std::memset(dwr, 0, sizeof(double) * static_cast<size_t>(N));
        double db = 0.0;
        for (int b = 0; b < B; ++b) {
            const double g = dout[static_cast<int64_t>(b) * M + m];
            db += g;
            const double* xr = in + static_cast<int64_t>(b) * N;
            for (int n = 0; n < N; ++n) dwr[n] += g * xr[n];
        }
        dbias[m] = db;
    }
}

void maxpool2x2_forward(const double* in, double* out, int64_t* argmax, int B, int C, int H, int W) {
    const int OH = H / 2;
    const int OW = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const int64_t ibase = (static_cast<int64_t>(b) * C + c) * H * W;
            const int64_t obase = (static_cast<int64_t>(b) * C + c) * OH * OW;
            for (int y = 0; y < OH; ++y) {
                for (int x = 0; x < OW; ++x) {
                    // ties keep the first position in row-major scan order
                    int64_t best = ibase + static_cast<int64_t>(2 * y) * W + 2 * x;
                    double bv = in[best];
                    const int64_t cand[3] = {best + 1, best + W, best + W + 1};
                    for (int64_t idx : cand) {
                        if (in[idx] > bv) {
                            bv = in[idx];
                            best = idx;
                        }
                    }
                    out[obase + static_cast<int64_t>(y) * OW + x] = bv;
                    argmax[obase + static_cast<int64_t>(y) * OW + x] = best;
                }
            }
        }
    }
}

void maxpool2x2_backward(const double* dout, const int64_t* argmax, double* din, int64_t out_n, int64_t in_n) {
    std::memset(din, 0, sizeof(double) * static_cast<size_t>(in_n));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < out_n; ++i) din[argmax[i]] += dout[i];
}

void relu_forward(const double* in, double* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* dout, const double* in, double* din, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) din[i] = in[i] > 0.0 ? dout[i] : 0.0;
}

void channel_moments(const double* in, double* mean, double* var, int B, int C, int64_t S) {
    const double n = static_cast<double>(B) * static_cast<double>(S);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* p = in + (static_cast<int64_t>(b) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) s += p[i];
        }
        const double m = s / n;
        double sq = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* p = in + (static_cast<int64_t>(b) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) {
                const double d = p[i] - m;
                sq += d * d;
            }
        }
        mean[c] = m;
        var[c] = sq / n;
    }
}

void bn_normalize(const double* in, const double* mean, const double* inv_std, const double* gamma, const double* beta,
                  double* xhat, double* out, int B, int C, int64_t S) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * S;
            const double m = mean[c], is = inv_std[c], g = gamma[c], bt = beta[c];
            for (int64_t i = 0; i < S; ++i) {
                const double xh = (in[base + i] - m) * is;
                if (xhat) xhat[base + i] = xh;
                out[base + i] = xh * g + bt;
            }
        }
    }
}

void bn_backward(const double* dout, const double* xhat, const double* gamma, const double* inv_std, double* din,
                 double* dgamma, double* dbeta, int B, int C, int64_t S) {
    const double n = static_cast<double>(B) * static_cast<double>(S);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const double g = gamma[c];
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) {
                sum_dy += dout[base + i];
                sum_dy_xh += dout[base + i] * xhat[base + i];
            }
        }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xh;
        const double is = inv_std[c];
        const double k1 = g * sum_dy;        // sum of dxhat
        const double k2 = g * sum_dy_xh;     // sum of dxhat*xhat
        for (int b = 0; b < B; ++b) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) {
                const double dxh = dout[base + i] * g;
                din[base + i] = is * (dxh - (k1 + xhat[base + i] * k2) / n);
            }
        }
    }
}

void softmax_rows(const double* logits, double* probs, int B, int K) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const double* z = logits + static_cast<int64_t>(b) * K;
        double* p = probs + static_cast<int64_t>(b) * K;
        double mx = z[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            p[k] = std::exp(z[k] - mx);
            s += p[k];
        }
        for (int k = 0; k < K; ++k) p[k] /= s;
    }
}

}  // namespace astain::kernels
