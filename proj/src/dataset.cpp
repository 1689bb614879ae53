// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace astain {

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "validation") return Split::Validation;
    if (s == "internal-test") return Split::InternalTest;
    if (s == "external-test") return Split::ExternalTest;
    throw DatasetError("unknown split '" + s + "' (expected train, validation, internal-test or external-test)");
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::InternalTest: return "internal-test";
        case Split::ExternalTest: return "external-test";
    }
    return "?";
}

int Dataset::num_domains() const {
    int d = 0;
    for (const auto& c : cases) d = std::max(d, c.domain + 1);
    return d;
}

int Dataset::num_domains(Split split) const {
    std::set<int> ds;
    for (const auto& c : cases)
        if (c.split == split) ds.insert(c.domain);
    return static_cast<int>(ds.size());
}

std::vector<const CaseRecord*> Dataset::split_cases(Split split) const {
    std::vector<const CaseRecord*> out;
    for (const auto& c : cases)
        if (c.split == split) out.push_back(&c);
    return out;
}

namespace {

std::vector<std::array<int, 2>> load_annotation_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DatasetError("cannot open annotation file '" + path + "'");
    std::vector<std::array<int, 2>> centers;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DatasetError(path + ":" + std::to_string(lineno) + ": expected 'row,col', got '" + line + "'");
        try {
            size_t used = 0;
            const int row = std::stoi(line.substr(0, comma), &used);
            const int col = std::stoi(line.substr(comma + 1));
            centers.push_back({row, col});
        } catch (const std::exception&) {
            throw DatasetError(path + ":" + std::to_string(lineno) + ": expected 'row,col', got '" + line + "'");
        }
    }
    return centers;
}

}  // namespace

Dataset load_dataset(const std::string& root) {
    const fs::path manifest_path = fs::path(root) / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw DatasetError("missing manifest '" + manifest_path.string() + "'");
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw DatasetError("malformed manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (!manifest.contains("cases") || !manifest["cases"].is_array())
        throw DatasetError("manifest '" + manifest_path.string() + "' has no case list");

    Dataset ds;
    for (const auto& jc : manifest["cases"]) {
        CaseRecord rec;
        try {
            rec.case_id = jc.at("case_id").get<std::string>();
            rec.domain = jc.at("domain").get<int>();
            rec.split = split_from_string(jc.at("split").get<std::string>());
        } catch (const json::exception& e) {
            throw DatasetError("manifest case entry malformed: " + std::string(e.what()));
        }
        if (rec.domain < 0) throw DatasetError("case '" + rec.case_id + "' has negative domain index");
        for (const auto& ji : jc.at("images")) {
            AnnotatedImage ai;
            ai.image_path = ji.at("image").get<std::string>();
            ai.annotation_path = ji.at("annotations").get<std::string>();
            ai.image = read_image((fs::path(root) / ai.image_path).string());
            ai.annotations = load_annotation_csv((fs::path(root) / ai.annotation_path).string());

            // enforce the border rule: a full 63x63 patch must fit
            std::vector<std::array<int, 2>> kept;
            for (const auto& c : ai.annotations) {
                if (c[0] >= kPatchMargin && c[0] <= ai.image.height - 1 - kPatchMargin && c[1] >= kPatchMargin &&
                    c[1] <= ai.image.width - 1 - kPatchMargin) {
                    kept.push_back(c);
                } else {
                    ++ds.dropped_annotations;
                }
            }
            ai.annotations = std::move(kept);
            rec.images.push_back(std::move(ai));
        }
        ds.cases.push_back(std::move(rec));
    }

    if (ds.dropped_annotations > 0)
        ASTAIN_LOG_INFO("dropped %d annotation(s) closer than %d px to an image border", ds.dropped_annotations,
                        kPatchMargin);

    // domain indices must be dense in [0, D)
    std::set<int> domains;
    for (const auto& c : ds.cases) domains.insert(c.domain);
    for (int d = 0; d < static_cast<int>(domains.size()); ++d)
        if (!domains.count(d))
            throw DatasetError("domain indices are not dense: index " + std::to_string(d) + " is missing");
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& root, const std::string& image_extension) {
    fs::create_directories(root);
    json manifest;
    manifest["cases"] = json::array();
    for (const auto& rec : dataset.cases) {
        fs::create_directories(fs::path(root) / rec.case_id);
        json jc;
        jc["case_id"] = rec.case_id;
        jc["domain"] = rec.domain;
        jc["split"] = to_string(rec.split);
        jc["images"] = json::array();
        for (size_t i = 0; i < rec.images.size(); ++i) {
            const std::string stem = rec.case_id + "/img" + std::to_string(i);
            const std::string image_rel = stem + "." + image_extension;
            const std::string ann_rel = stem + ".csv";
            write_image(rec.images[i].image, (fs::path(root) / image_rel).string());
            std::ofstream os(fs::path(root) / ann_rel);
            if (!os) throw DatasetError("cannot write '" + ann_rel + "'");
            for (const auto& c : rec.images[i].annotations) os << c[0] << "," << c[1] << "\n";
            jc["images"].push_back({{"image", image_rel}, {"annotations", ann_rel}});
        }
        manifest["cases"].push_back(std::move(jc));
    }
    std::ofstream os(fs::path(root) / "manifest.json");
    if (!os) throw DatasetError("cannot write manifest under '" + root + "'");
    os << manifest.dump(2) << "\n";
}

RgbImage crop_patch(const RgbImage& image, int row, int col) {
    if (row < kPatchMargin || row > image.height - 1 - kPatchMargin || col < kPatchMargin ||
        col > image.width - 1 - kPatchMargin)
        throw DatasetError("patch center (" + std::to_string(row) + ", " + std::to_string(col) +
                           ") leaves no room for a 63x63 crop in a " + std::to_string(image.height) + "x" +
                           std::to_string(image.width) + " image");
    RgbImage patch(kPatchSize, kPatchSize);
    for (int r = 0; r < kPatchSize; ++r)
        for (int c = 0; c < kPatchSize; ++c)
            for (int ch = 0; ch < 3; ++ch) patch.at(r, c, ch) = image.at(row - kPatchMargin + r, col - kPatchMargin + c, ch);
    return patch;
}

RgbImage extract_patch_transformed(const RgbImage& image, int row, int col, double angle, bool mirror, double scale) {
    if (scale <= 0.0) throw ValueError("extract_patch: scale must be positive");
    if (row < kContextMargin || row > image.height - 1 - kContextMargin || col < kContextMargin ||
        col > image.width - 1 - kContextMargin)
        throw DatasetError("patch center (" + std::to_string(row) + ", " + std::to_string(col) +
                           ") leaves no room for the 91x91 resampling window in a " + std::to_string(image.height) +
                           "x" + std::to_string(image.width) + " image");

    const double ca = std::cos(angle), sa = std::sin(angle);
    const double lo_r = row - kContextMargin, hi_r = row + kContextMargin;
    const double lo_c = col - kContextMargin, hi_c = col + kContextMargin;

    RgbImage patch(kPatchSize, kPatchSize);
    for (int i = 0; i < kPatchSize; ++i) {
        for (int j = 0; j < kPatchSize; ++j) {
            const double dr = i - kPatchMargin;
            double dc = j - kPatchMargin;
            if (mirror) dc = -dc;
            // inverse map of rotate-then-scale about the center
            double sr = (ca * dr + sa * dc) / scale + row;
            double sc = (-sa * dr + ca * dc) / scale + col;
            // stay inside the declared context window
            sr = std::clamp(sr, lo_r, hi_r);
            sc = std::clamp(sc, lo_c, hi_c);
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const int r1 = std::min(r0 + 1, image.height - 1);
            const int c1 = std::min(c0 + 1, image.width - 1);
            const double fr = sr - r0;
            const double fc = sc - c0;
            for (int ch = 0; ch < 3; ++ch) {
                const double p00 = image.at(r0, c0, ch), p01 = image.at(r0, c1, ch);
                const double p10 = image.at(r1, c0, ch), p11 = image.at(r1, c1, ch);
                const double val = (1.0 - fr) * ((1.0 - fc) * p00 + fc * p01) + fr * ((1.0 - fc) * p10 + fc * p11);
                patch.at(i, j, ch) = static_cast<uint8_t>(std::clamp(std::round(val), 0.0, 255.0));
            }
        }
    }
    return patch;
}

RgbImage extract_patch(const RgbImage& image, int row, int col, const SpatialAugmentConfig& config, Rng& rng) {
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const bool mirror = rng.bernoulli();
    const double scale = rng.uniform(config.scale_low, config.scale_high);
    return extract_patch_transformed(image, row, col, angle, mirror, scale);
}

}  // namespace astain
