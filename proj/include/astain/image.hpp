// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "astain/common.hpp"

namespace astain {

// 8-bit interleaved RGB, row-major.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0) {}

    uint8_t& at(int r, int c, int ch) { return pixels[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
    uint8_t at(int r, int c, int ch) const { return pixels[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
};

// Format chosen by extension: .png, or .ppm (binary P6).
RgbImage read_image(const std::string& path);
void write_image(const RgbImage& image, const std::string& path);

}  // namespace astain
