// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
//
// Times the OpenMP kernels against the serial reference loops on the shapes
// the training loop actually runs, plus one dense-inference pass.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "astain/detect.hpp"
#include "astain/kernels.hpp"
#include "astain/model.hpp"
#include "astain/synthetic.hpp"

using namespace astain;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name.c_str(), serial_ms, parallel_ms, serial_ms / parallel_ms);
}

struct ConvCase {
    std::string name;
    int B, C, H, W, O, K;
};

}  // namespace

int main() {
    Rng rng(42);
    std::printf("%-28s %13s %13s %9s\n", "kernel", "reference", "openmp", "speedup");

    const std::vector<ConvCase> cases = {
        {"conv1 fwd 64x3x63x63", 64, 3, 63, 63, 16, 4},
        {"conv2 fwd 64x16x30x30", 64, 16, 30, 30, 16, 3},
        {"conv3 fwd 64x16x14x14", 64, 16, 14, 14, 16, 3},
    };
    for (const auto& c : cases) {
        Tensor in = random_normal({c.B, c.C, c.H, c.W}, rng);
        Tensor w = random_normal({c.O, c.C, c.K, c.K}, rng);
        Tensor bias = random_normal({c.O}, rng);
        Tensor out({c.B, c.O, c.H - c.K + 1, c.W - c.K + 1});
        const int reps = c.H > 40 ? 3 : 10;
        const double s = time_ms(
            [&] {
                kernels::reference::conv2d_forward(in.data(), w.data(), bias.data(), out.data(), c.B, c.C, c.H, c.W,
                                                   c.O, c.K, c.K);
            },
            reps);
        const double p = time_ms(
            [&] {
                kernels::conv2d_forward(in.data(), w.data(), bias.data(), out.data(), c.B, c.C, c.H, c.W, c.O, c.K,
                                        c.K);
            },
            reps);
        report(c.name, s, p);

        Tensor dout = random_normal(out.shape, rng);
        Tensor din(in.shape), dw(w.shape), db(bias.shape);
        const double sb = time_ms(
            [&] {
                kernels::reference::conv2d_backward_input(dout.data(), w.data(), din.data(), c.B, c.C, c.H, c.W, c.O,
                                                          c.K, c.K);
                kernels::reference::conv2d_backward_params(dout.data(), in.data(), dw.data(), db.data(), c.B, c.C, c.H,
                                                           c.W, c.O, c.K, c.K);
            },
            reps);
        const double pb = time_ms(
            [&] {
                kernels::conv2d_backward_input(dout.data(), w.data(), din.data(), c.B, c.C, c.H, c.W, c.O, c.K, c.K);
                kernels::conv2d_backward_params(dout.data(), in.data(), dw.data(), db.data(), c.B, c.C, c.H, c.W, c.O,
                                                c.K, c.K);
            },
            reps);
        report(c.name + " bwd", sb, pb);
    }

    {
        const int B = 64, N = 64, M = 64;
        Tensor in = random_normal({B, N}, rng);
        Tensor w = random_normal({M, N}, rng);
        Tensor bias = random_normal({M}, rng);
        Tensor out({B, M});
        const double s = time_ms(
            [&] { kernels::reference::linear_forward(in.data(), w.data(), bias.data(), out.data(), B, N, M); }, 200);
        const double p =
            time_ms([&] { kernels::linear_forward(in.data(), w.data(), bias.data(), out.data(), B, N, M); }, 200);
        report("fc fwd 64x64->64", s, p);
    }

    {
        SyntheticConfig cfg;
        cfg.domains = 1;
        cfg.external_domains = 0;
        cfg.train_images_per_domain = 1;
        cfg.validation_images_per_domain = 0;
        cfg.internal_test_images_per_domain = 0;
        cfg.external_test_images_per_domain = 0;
        const Dataset ds = generate_synthetic_dataset(cfg, 7);
        const RgbImage& img = ds.cases[0].images[0].image;

        MitosisClassifier model(1);
        Tensor warm = random_normal({2, 3, 63, 63}, rng, 0.1);
        model.forward(warm, Mode::Train);  // initialize running statistics

        const double p = time_ms([&] { dense_inference(model, img); }, 3);
        std::printf("%-28s %13s %10.2f ms\n", "dense inference 288px", "-", p);
    }
    return 0;
}
