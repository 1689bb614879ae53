// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "astain/image.hpp"
#include "astain/tensor.hpp"

namespace astain {

// Two-stain absorbance model. Columns of `a` are unit-norm stain vectors
// with non-negative entries; column 0 is the hematoxylin-like stain (larger
// blue-channel absorbance), column 1 eosin-like.
struct StainModel {
    double a[3][2] = {{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
    double i0 = 255.0;
    double concentration_scale[2] = {1.0, 1.0};
};

struct ColorAugmentConfig {
    double scale_low = 0.9;
    double scale_high = 1.1;
    double shift_low = -10.0;
    double shift_high = 10.0;

    void validate() const;
};

// od = -ln(max(I, 1) / i0) per channel; result is [H, W, 3]
Tensor rgb_to_od(const RgbImage& image, double i0 = 255.0);
// I = clamp(round(i0 * exp(-od)), 0, 255)
RgbImage od_to_rgb(const Tensor& od, double i0 = 255.0);

// Macenko estimation: tissue pixels above the OD threshold, top-2
// eigenvectors of the OD scatter, extreme percentile directions in the
// eigenplane. Also records the image's own percentile-99 concentrations as
// concentration_scale.
StainModel estimate_stain_matrix(const RgbImage& image, double od_threshold = 0.15, double angle_percentile = 1.0);

// least-squares stain concentrations for OD rows [N, 3] -> [N, 2];
// negative solutions are clamped to zero
Tensor compute_concentrations(const Tensor& od_rows, const StainModel& model);
// unclamped variant used by property tests (residual orthogonality)
Tensor compute_concentrations_unclamped(const Tensor& od_rows, const StainModel& model);

// re-render `image` with the reference absorbance coefficients; the given
// percentile of each concentration channel is mapped to the reference scale
RgbImage normalize_image(const RgbImage& image, const StainModel& reference, double percentile = 99.0);

// per-channel I <- a_c*I + b_c with a_c, b_c drawn once per image
RgbImage color_augment(const RgbImage& image, const ColorAugmentConfig& config, Rng& rng);

// widely used H&E reference absorbance columns, normalized
StainModel default_reference_stain();

// Beer-Lambert composition of an image from per-pixel concentrations [H, W, 2]
RgbImage compose_from_stains(const StainModel& model, const Tensor& concentrations);

// closed-form eigen decomposition of a symmetric 3x3 matrix,
// eigenvalues descending, vectors[i] is the unit eigenvector of values[i]
struct Sym3Eigen {
    double values[3];
    double vectors[3][3];
};
Sym3Eigen sym3_eigen_decomposition(const double m[3][3]);

// nearest-rank percentile of a copied, sorted sample
double percentile_nearest_rank(std::vector<double> values, double p);

}  // namespace astain
