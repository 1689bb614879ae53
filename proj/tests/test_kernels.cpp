// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
//
// The OpenMP kernels against the plain serial reference loops, plus
// thread-count invariance of the parallel flavor.

#include <array>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "astain/kernels.hpp"
#include "astain/tensor.hpp"
#include "doctest.h"

using namespace astain;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

constexpr double kTol = 1e-12;

}  // namespace

TEST_CASE("conv2d kernels match the serial reference") {
    Rng rng(11);
    for (const auto& [B, C, H, W, O, K] : {std::array<int, 6>{3, 3, 17, 19, 5, 4}, std::array<int, 6>{2, 8, 9, 9, 16, 3},
                                           std::array<int, 6>{1, 1, 4, 4, 1, 1}}) {
        Tensor in = random_normal({B, C, H, W}, rng);
        Tensor w = random_normal({O, C, K, K}, rng);
        Tensor bias = random_normal({O}, rng);
        const int OH = H - K + 1, OW = W - K + 1;

        Tensor out({B, O, OH, OW}), out_ref({B, O, OH, OW});
        kernels::conv2d_forward(in.data(), w.data(), bias.data(), out.data(), B, C, H, W, O, K, K);
        kernels::reference::conv2d_forward(in.data(), w.data(), bias.data(), out_ref.data(), B, C, H, W, O, K, K);
        CHECK(max_abs_diff(out.v, out_ref.v) <= kTol);

        Tensor dout = random_normal(out.shape, rng);
        Tensor din(in.shape), din_ref(in.shape);
        kernels::conv2d_backward_input(dout.data(), w.data(), din.data(), B, C, H, W, O, K, K);
        kernels::reference::conv2d_backward_input(dout.data(), w.data(), din_ref.data(), B, C, H, W, O, K, K);
        CHECK(max_abs_diff(din.v, din_ref.v) <= kTol);

        Tensor dw(w.shape), dw_ref(w.shape), db({O}), db_ref({O});
        kernels::conv2d_backward_params(dout.data(), in.data(), dw.data(), db.data(), B, C, H, W, O, K, K);
        kernels::reference::conv2d_backward_params(dout.data(), in.data(), dw_ref.data(), db_ref.data(), B, C, H, W, O,
                                                   K, K);
        CHECK(max_abs_diff(dw.v, dw_ref.v) <= 1e-10);
        CHECK(max_abs_diff(db.v, db_ref.v) <= 1e-10);
    }
}

TEST_CASE("linear kernels match the serial reference") {
    Rng rng(12);
    const int B = 7, N = 33, M = 13;
    Tensor in = random_normal({B, N}, rng);
    Tensor w = random_normal({M, N}, rng);
    Tensor bias = random_normal({M}, rng);

    Tensor out({B, M}), out_ref({B, M});
    kernels::linear_forward(in.data(), w.data(), bias.data(), out.data(), B, N, M);
    kernels::reference::linear_forward(in.data(), w.data(), bias.data(), out_ref.data(), B, N, M);
    CHECK(max_abs_diff(out.v, out_ref.v) <= kTol);

    Tensor dout = random_normal(out.shape, rng);
    Tensor din({B, N}), din_ref({B, N});
    kernels::linear_backward_input(dout.data(), w.data(), din.data(), B, N, M);
    kernels::reference::linear_backward_input(dout.data(), w.data(), din_ref.data(), B, N, M);
    CHECK(max_abs_diff(din.v, din_ref.v) <= kTol);

    Tensor dw(w.shape), dw_ref(w.shape), db({M}), db_ref({M});
    kernels::linear_backward_params(dout.data(), in.data(), dw.data(), db.data(), B, N, M);
    kernels::reference::linear_backward_params(dout.data(), in.data(), dw_ref.data(), db_ref.data(), B, N, M);
    CHECK(max_abs_diff(dw.v, dw_ref.v) <= kTol);
    CHECK(max_abs_diff(db.v, db_ref.v) <= kTol);
}

TEST_CASE("pool, relu, batchnorm and softmax kernels match the serial reference") {
    Rng rng(13);
    const int B = 4, C = 6, H = 10, W = 8;
    Tensor in = random_normal({B, C, H, W}, rng);

    Tensor pooled({B, C, H / 2, W / 2}), pooled_ref({B, C, H / 2, W / 2});
    std::vector<int64_t> arg(static_cast<size_t>(pooled.size())), arg_ref(static_cast<size_t>(pooled.size()));
    kernels::maxpool2x2_forward(in.data(), pooled.data(), arg.data(), B, C, H, W);
    kernels::reference::maxpool2x2_forward(in.data(), pooled_ref.data(), arg_ref.data(), B, C, H, W);
    CHECK(max_abs_diff(pooled.v, pooled_ref.v) == 0.0);
    CHECK(arg == arg_ref);

    Tensor dpool = random_normal(pooled.shape, rng);
    Tensor din(in.shape), din_ref(in.shape);
    kernels::maxpool2x2_backward(dpool.data(), arg.data(), din.data(), dpool.size(), in.size());
    kernels::reference::maxpool2x2_backward(dpool.data(), arg_ref.data(), din_ref.data(), dpool.size(), in.size());
    CHECK(max_abs_diff(din.v, din_ref.v) == 0.0);

    Tensor r1(in.shape), r2(in.shape);
    kernels::relu_forward(in.data(), r1.data(), in.size());
    kernels::reference::relu_forward(in.data(), r2.data(), in.size());
    CHECK(max_abs_diff(r1.v, r2.v) == 0.0);

    const int64_t S = static_cast<int64_t>(H) * W;
    std::vector<double> mean(C), var(C), mean_ref(C), var_ref(C), inv_std(C);
    kernels::channel_moments(in.data(), mean.data(), var.data(), B, C, S);
    kernels::reference::channel_moments(in.data(), mean_ref.data(), var_ref.data(), B, C, S);
    CHECK(max_abs_diff(mean, mean_ref) <= kTol);
    CHECK(max_abs_diff(var, var_ref) <= kTol);

    for (int c = 0; c < C; ++c) inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + 1e-5);
    Tensor gamma = random_normal({C}, rng);
    Tensor beta = random_normal({C}, rng);
    Tensor xhat(in.shape), out(in.shape), xhat_ref(in.shape), out_ref(in.shape);
    kernels::bn_normalize(in.data(), mean.data(), inv_std.data(), gamma.data(), beta.data(), xhat.data(), out.data(),
                          B, C, S);
    kernels::reference::bn_normalize(in.data(), mean.data(), inv_std.data(), gamma.data(), beta.data(),
                                     xhat_ref.data(), out_ref.data(), B, C, S);
    CHECK(max_abs_diff(out.v, out_ref.v) <= kTol);

    Tensor dout = random_normal(in.shape, rng);
    Tensor dx(in.shape), dx_ref(in.shape), dg({C}), dg_ref({C}), db({C}), db_ref({C});
    kernels::bn_backward(dout.data(), xhat.data(), gamma.data(), inv_std.data(), dx.data(), dg.data(), db.data(), B, C,
                         S);
    kernels::reference::bn_backward(dout.data(), xhat_ref.data(), gamma.data(), inv_std.data(), dx_ref.data(),
                                    dg_ref.data(), db_ref.data(), B, C, S);
    CHECK(max_abs_diff(dx.v, dx_ref.v) <= 1e-10);
    CHECK(max_abs_diff(dg.v, dg_ref.v) <= kTol);
    CHECK(max_abs_diff(db.v, db_ref.v) <= kTol);

    const int K = 9;
    Tensor logits = random_normal({B, K}, rng, 3.0);
    Tensor p1({B, K}), p2({B, K});
    kernels::softmax_rows(logits.data(), p1.data(), B, K);
    kernels::reference::softmax_rows(logits.data(), p2.data(), B, K);
    CHECK(max_abs_diff(p1.v, p2.v) <= kTol);
}

#ifdef _OPENMP
TEST_CASE("parallel kernels are bitwise invariant to the thread count") {
    Rng rng(14);
    const int B = 4, C = 3, H = 21, W = 23, O = 8, K = 4;
    Tensor in = random_normal({B, C, H, W}, rng);
    Tensor w = random_normal({O, C, K, K}, rng);
    Tensor bias = random_normal({O}, rng);
    Tensor out1({B, O, H - K + 1, W - K + 1}), out2(out1.shape);

    const int old_threads = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::conv2d_forward(in.data(), w.data(), bias.data(), out1.data(), B, C, H, W, O, K, K);
    omp_set_num_threads(2);
    kernels::conv2d_forward(in.data(), w.data(), bias.data(), out2.data(), B, C, H, W, O, K, K);
    omp_set_num_threads(old_threads);
    CHECK(out1.v == out2.v);

    std::vector<double> m1(C), v1(C), m2(C), v2(C);
    omp_set_num_threads(1);
    kernels::channel_moments(in.data(), m1.data(), v1.data(), B, C, static_cast<int64_t>(H) * W);
    omp_set_num_threads(2);
    kernels::channel_moments(in.data(), m2.data(), v2.data(), B, C, static_cast<int64_t>(H) * W);
    omp_set_num_threads(old_threads);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
}
#endif
