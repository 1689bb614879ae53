// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "astain/image.hpp"

namespace astain {

enum class Split { Train, Validation, InternalTest, ExternalTest };

Split split_from_string(const std::string& s);
std::string to_string(Split split);

struct AnnotatedImage {
    RgbImage image;
    std::vector<std::array<int, 2>> annotations;  // (row, col) mitosis centers
    std::string image_path;
    std::string annotation_path;
};

struct CaseRecord {
    std::string case_id;
    int domain = 0;
    Split split = Split::Train;
    std::vector<AnnotatedImage> images;
};

struct Dataset {
    std::vector<CaseRecord> cases;
    int dropped_annotations = 0;

    int num_domains() const;
    int num_domains(Split split) const;
    std::vector<const CaseRecord*> split_cases(Split split) const;
};

constexpr int kPatchSize = 63;
constexpr int kPatchMargin = 31;   // a 63x63 patch fits iff the center is this far from every border
constexpr int kContextSize = 91;
constexpr int kContextMargin = 45;  // rotation resampling window

// Layout: root/manifest.json with cases [{case_id, domain, split,
// images: [{image, annotations}]}]; annotation CSVs are headerless
// "row,col" integer lines. Annotations closer than 31 px to a border are
// dropped (counted in dropped_annotations).
Dataset load_dataset(const std::string& root);
void save_dataset(const Dataset& dataset, const std::string& root, const std::string& image_extension = "png");

// pixel-exact 63x63 crop centered at (row, col)
RgbImage crop_patch(const RgbImage& image, int row, int col);

// rotation/mirror/scale resampling (bilinear) of the 91x91 context window
// around (row, col); sampling coordinates are clamped to that window
RgbImage extract_patch_transformed(const RgbImage& image, int row, int col, double angle, bool mirror, double scale);

struct SpatialAugmentConfig {
    double scale_low = 0.8;
    double scale_high = 1.2;
};

// draws rotation angle, mirror flag and scale from rng, then resamples
RgbImage extract_patch(const RgbImage& image, int row, int col, const SpatialAugmentConfig& config, Rng& rng);

struct PatchSample {
    RgbImage patch;  // 63x63
    int y = 0;       // 1 = mitosis
    int d = 0;       // domain index of the source slide
    std::string case_id;
    int image_index = 0;
    int row = 0;
    int col = 0;
};

}  // namespace astain
