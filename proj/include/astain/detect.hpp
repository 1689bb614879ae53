// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "astain/dataset.hpp"
#include "astain/model.hpp"

namespace astain {

// Per-location mitosis probability over a whole image. Cell (i, j) holds the
// class-1 probability of the 63x63 patch centered at pixel
// (offset + stride*i, offset + stride*j).
struct ProbabilityMap {
    std::vector<double> values;
    int rows = 0;
    int cols = 0;
    int stride = 16;
    int offset = 31;

    double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
    double& at(int i, int j) { return values[static_cast<size_t>(i) * cols + j]; }
    std::pair<int, int> pixel_of(int i, int j) const { return {offset + stride * i, offset + stride * j}; }
};

// patches scaled to [0, 1], shape [B, 3, 63, 63]
Tensor patches_to_tensor(const std::vector<const RgbImage*>& patches);
Tensor image_to_tensor(const RgbImage& image);  // [1, 3, H, W]

// Convolutional reuse of the patch classifier over the whole image: the conv
// blocks run on the full extent (odd extents are cropped before pooling) and
// the fc head is applied to every 2x2 window of the final feature grid.
// Matches patch-wise forward() at each cell.
ProbabilityMap dense_inference(const MitosisClassifier& model, const RgbImage& image);

struct Detection {
    int row = 0;
    int col = 0;
    double score = 0.0;
};

// cells >= threshold that strictly dominate their 8-neighborhood; equal-value
// plateaus are reported once, at their first cell in row-major order
std::vector<Detection> local_maxima(const ProbabilityMap& map, double threshold);

struct F1Report {
    long true_positives = 0;
    long false_positives = 0;
    long false_negatives = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

F1Report finalize_counts(long tp, long fp, long fn);

// One-to-one greedy matching: detections in descending score order each claim
// the nearest unclaimed ground-truth center within `radius` pixels.
F1Report match_detections(std::vector<Detection> detections, const std::vector<std::array<int, 2>>& ground_truth,
                          double radius);

struct OperatingPoint {
    double threshold = 1.0;
    double f1 = 0.0;
    bool no_detections = false;
};

// Threshold sweep over the observed local-maximum scores, pooled F1 over all
// images; ties resolved toward the higher threshold.
OperatingPoint select_threshold(const std::vector<std::vector<Detection>>& detections_per_image,
                                const std::vector<std::vector<std::array<int, 2>>>& gt_per_image, double radius);
OperatingPoint select_operating_point(const MitosisClassifier& model, const Dataset& dataset, Split split,
                                      double radius);

// TP/FP/FN summed over the split's images, then precision/recall/F1 from the sums
F1Report evaluate(const MitosisClassifier& model, const Dataset& dataset, Split split, double threshold, double radius);

// "PMAP v1" portable float grid
void write_probability_map(const ProbabilityMap& map, const std::string& path);
ProbabilityMap read_probability_map(const std::string& path);

// flattened post-ReLU activations of the classifier's fourth layer
struct FeatureTable {
    std::vector<std::array<double, MitosisClassifier::kFeatureWidth>> features;
    std::vector<int> y;
    std::vector<int> d;
    std::vector<std::string> case_ids;
    std::vector<int> image_indices;

    size_t size() const { return features.size(); }
};

FeatureTable compute_features(MitosisClassifier& model, const std::vector<PatchSample>& patches);
void write_feature_csv(const FeatureTable& table, const std::string& path);

// Post-hoc probe: one fully connected softmax layer trained on the train
// table to predict the domain label (200 full-batch epochs, lr 0.01,
// momentum 0.9); returns accuracy on the test table.
double domain_probe(const FeatureTable& train, const FeatureTable& test);

}  // namespace astain
