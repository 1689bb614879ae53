// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "astain/dataset.hpp"

namespace astain {

// Desk-scale multi-domain dataset: "mitoses" are dark ellipses whose shape
// statistics are identical in every domain, while each domain renders with
// its own per-channel affine color cast and background texture frequency.
// Held-out (external-test) domains draw both from ranges outside the
// training-domain ranges, so cross-domain generalization is exactly what the
// detector has to survive.
struct SyntheticConfig {
    int domains = 8;            // training domains; validation and internal-test reuse them
    int external_domains = 2;   // extra held-out domains for the external-test split
    int train_images_per_domain = 4;
    int validation_images_per_domain = 1;
    int internal_test_images_per_domain = 2;
    int external_test_images_per_domain = 3;
    int image_size = 288;
    int positives_per_image = 10;
    double match_radius = 25.0;  // positives are separated by at least twice this

    // mitosis blobs: dark ellipses, domain-invariant shape statistics
    double mitosis_axis_low = 5.0;
    double mitosis_axis_high = 9.0;
    double mitosis_ratio_low = 0.55;
    double mitosis_ratio_high = 0.9;
    double mitosis_darkness_low = 0.30;
    double mitosis_darkness_high = 0.42;

    // distractors: smaller, lighter, near-circular lookalikes (class 0)
    int distractors_per_image = 20;
    double distractor_radius_low = 2.0;
    double distractor_radius_high = 4.0;
    double distractor_darkness_low = 0.58;
    double distractor_darkness_high = 0.74;

    // training-domain appearance ranges
    double train_gain_low = 0.85;
    double train_gain_high = 1.15;
    double train_offset_jitter = 6.0;   // per-channel offset drawn in +/- this
    double train_texture_freq_low = 2.0;
    double train_texture_freq_high = 6.0;

    // held-out appearance ranges (outside the training ranges)
    double external_gain_delta_low = 0.20;   // |gain - 1| drawn in [low, high]
    double external_gain_delta_high = 0.32;
    double external_offset_low = 12.0;       // |offset| drawn in [low, high]
    double external_offset_high = 22.0;
    double external_texture_freq_low = 9.0;
    double external_texture_freq_high = 13.0;

    double texture_amplitude = 7.0;
    double pixel_noise = 2.5;
};

Dataset generate_synthetic_dataset(const SyntheticConfig& config, uint64_t seed);

}  // namespace astain
