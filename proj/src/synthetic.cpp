// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace astain {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBaseColor[3] = {218.0, 196.0, 214.0};

struct DomainAppearance {
    double gain[3];
    double offset[3];
    double texture_freq;
};

struct Blob {
    double row, col;
    double axis_a, axis_b;  // semi-axes
    double angle;
    double darkness;        // multiplicative factor at the core
};

double predicted_mean(const DomainAppearance& ap, int ch) { return ap.gain[ch] * kBaseColor[ch] + ap.offset[ch]; }

double appearance_distance(const DomainAppearance& a, const DomainAppearance& b) {
    double m = 0.0;
    for (int ch = 0; ch < 3; ++ch) m = std::max(m, std::abs(predicted_mean(a, ch) - predicted_mean(b, ch)));
    return m;
}

// Training-domain casts are stratified over the gain range so the domains
// are mutually separable; a redraw loop enforces a minimum gap between the
// predicted per-channel means.
std::vector<DomainAppearance> draw_appearances(const SyntheticConfig& cfg, Rng& rng) {
    std::vector<DomainAppearance> out;
    const int d_train = cfg.domains;
    for (int d = 0; d < d_train; ++d) {
        DomainAppearance ap{};
        const double tier = d_train == 1
                                ? 0.5 * (cfg.train_gain_low + cfg.train_gain_high)
                                : cfg.train_gain_low + (cfg.train_gain_high - cfg.train_gain_low) * d / (d_train - 1.0);
        for (int tries = 0;; ++tries) {
            for (int ch = 0; ch < 3; ++ch) {
                ap.gain[ch] = tier + rng.uniform(-0.03, 0.03);
                ap.offset[ch] = rng.uniform(-cfg.train_offset_jitter, cfg.train_offset_jitter);
            }
            bool ok = true;
            for (const auto& prev : out) ok = ok && appearance_distance(ap, prev) > 6.0;
            if (ok) break;
            if (tries > 200) throw DatasetError("could not draw separable domain color casts");
        }
        ap.texture_freq = rng.uniform(cfg.train_texture_freq_low, cfg.train_texture_freq_high);
        out.push_back(ap);
    }
    for (int d = 0; d < cfg.external_domains; ++d) {
        DomainAppearance ap{};
        const bool bright = rng.bernoulli();
        for (int ch = 0; ch < 3; ++ch) {
            const double delta = rng.uniform(cfg.external_gain_delta_low, cfg.external_gain_delta_high);
            ap.gain[ch] = bright ? 1.0 + delta : 1.0 - delta;
            const double off = rng.uniform(cfg.external_offset_low, cfg.external_offset_high);
            ap.offset[ch] = bright ? off : -off;
        }
        ap.texture_freq = rng.uniform(cfg.external_texture_freq_low, cfg.external_texture_freq_high);
        out.push_back(ap);
    }
    return out;
}

bool far_from_all(const std::vector<Blob>& blobs, double row, double col, double min_dist) {
    for (const auto& b : blobs) {
        const double dr = b.row - row, dc = b.col - col;
        if (dr * dr + dc * dc < min_dist * min_dist) return false;
    }
    return true;
}

void render_blob(std::vector<double>& canvas, int size, const Blob& blob) {
    const double reach = std::max(blob.axis_a, blob.axis_b) + 2.0;
    const int r0 = std::max(0, static_cast<int>(std::floor(blob.row - reach)));
    const int r1 = std::min(size - 1, static_cast<int>(std::ceil(blob.row + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(blob.col - reach)));
    const int c1 = std::min(size - 1, static_cast<int>(std::ceil(blob.col + reach)));
    const double ca = std::cos(blob.angle), sa = std::sin(blob.angle);
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double dr = r - blob.row, dc = c - blob.col;
            const double x = ca * dr + sa * dc;
            const double y = -sa * dr + ca * dc;
            const double rho = std::sqrt((x / blob.axis_a) * (x / blob.axis_a) + (y / blob.axis_b) * (y / blob.axis_b));
            if (rho >= 1.0) continue;
            const double w = std::min(1.0, (1.0 - rho) / 0.25);  // soft rim
            const double factor = 1.0 - (1.0 - blob.darkness) * w;
            for (int ch = 0; ch < 3; ++ch) canvas[(static_cast<size_t>(r) * size + c) * 3 + ch] *= factor;
        }
    }
}

AnnotatedImage make_image(const SyntheticConfig& cfg, const DomainAppearance& ap, Rng& rng) {
    const int size = cfg.image_size;
    std::vector<double> canvas(static_cast<size_t>(size) * size * 3);

    // background texture: two plane waves at the domain frequency plus pixel noise
    const double psi1 = rng.uniform(0.0, kPi), psi2 = rng.uniform(0.0, kPi);
    const double ph1 = rng.uniform(0.0, 2.0 * kPi), ph2 = rng.uniform(0.0, 2.0 * kPi);
    const double f1 = ap.texture_freq, f2 = ap.texture_freq * 1.7;
    const double c1 = std::cos(psi1), s1 = std::sin(psi1), c2 = std::cos(psi2), s2 = std::sin(psi2);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double t1 = std::sin(2.0 * kPi * f1 * (r * c1 + c * s1) / size + ph1);
            const double t2 = std::sin(2.0 * kPi * f2 * (r * c2 + c * s2) / size + ph2);
            const double noise = rng.uniform(-cfg.pixel_noise, cfg.pixel_noise);
            const double level = cfg.texture_amplitude * 0.5 * (t1 + t2) + noise;
            for (int ch = 0; ch < 3; ++ch)
                canvas[(static_cast<size_t>(r) * size + c) * 3 + ch] = kBaseColor[ch] + level;
        }
    }

    // mitoses: placement margin leaves room for the rotation context window,
    // pairwise separation at least twice the match radius
    const int margin = kContextMargin + 2;
    if (size <= 2 * margin) throw DatasetError("synthetic image size too small for patch margins");
    std::vector<Blob> positives;
    for (int k = 0; k < cfg.positives_per_image; ++k) {
        bool placed = false;
        for (int tries = 0; tries < 400; ++tries) {
            const double row = rng.uniform_int(margin, size - 1 - margin);
            const double col = rng.uniform_int(margin, size - 1 - margin);
            if (!far_from_all(positives, row, col, 2.0 * cfg.match_radius)) continue;
            Blob b;
            b.row = row;
            b.col = col;
            b.axis_a = rng.uniform(cfg.mitosis_axis_low, cfg.mitosis_axis_high);
            b.axis_b = b.axis_a * rng.uniform(cfg.mitosis_ratio_low, cfg.mitosis_ratio_high);
            b.angle = rng.uniform(0.0, kPi);
            b.darkness = rng.uniform(cfg.mitosis_darkness_low, cfg.mitosis_darkness_high);
            positives.push_back(b);
            placed = true;
            break;
        }
        if (!placed)
            throw DatasetError("could not place " + std::to_string(cfg.positives_per_image) +
                               " non-overlapping mitoses in a " + std::to_string(size) + "px image");
    }

    std::vector<Blob> distractors;
    for (int k = 0; k < cfg.distractors_per_image; ++k) {
        for (int tries = 0; tries < 400; ++tries) {
            const double row = rng.uniform_int(10, size - 11);
            const double col = rng.uniform_int(10, size - 11);
            if (!far_from_all(positives, row, col, cfg.mitosis_axis_high + cfg.distractor_radius_high + 4.0)) continue;
            if (!far_from_all(distractors, row, col, 9.0)) continue;
            Blob b;
            b.row = row;
            b.col = col;
            b.axis_a = rng.uniform(cfg.distractor_radius_low, cfg.distractor_radius_high);
            b.axis_b = b.axis_a * rng.uniform(0.85, 1.0);
            b.angle = rng.uniform(0.0, kPi);
            b.darkness = rng.uniform(cfg.distractor_darkness_low, cfg.distractor_darkness_high);
            distractors.push_back(b);
            break;
        }
    }

    for (const auto& b : positives) render_blob(canvas, size, b);
    for (const auto& b : distractors) render_blob(canvas, size, b);

    AnnotatedImage ai;
    ai.image = RgbImage(size, size);
    for (size_t i = 0; i < canvas.size(); ++i) {
        const int ch = static_cast<int>(i % 3);
        const double v = ap.gain[ch] * canvas[i] + ap.offset[ch];
        ai.image.pixels[i] = static_cast<uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
    }
    for (const auto& b : positives)
        ai.annotations.push_back({static_cast<int>(std::lround(b.row)), static_cast<int>(std::lround(b.col))});
    return ai;
}

}  // namespace

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg, uint64_t seed) {
    if (cfg.domains < 1) throw ValueError("synthetic dataset needs at least one training domain");
    if (cfg.image_size < kPatchSize) throw ValueError("synthetic image size must fit at least one patch");

    Rng appearance_rng(mix_seed(seed, 0xA11CE));
    const std::vector<DomainAppearance> appearances = draw_appearances(cfg, appearance_rng);

    Dataset ds;
    const struct {
        Split split;
        const char* tag;
        int per_domain;
        bool external;
    } plans[] = {
        {Split::Train, "train", cfg.train_images_per_domain, false},
        {Split::Validation, "val", cfg.validation_images_per_domain, false},
        {Split::InternalTest, "its", cfg.internal_test_images_per_domain, false},
        {Split::ExternalTest, "ets", cfg.external_test_images_per_domain, true},
    };

    for (const auto& plan : plans) {
        if (plan.per_domain <= 0) continue;
        const int d_lo = plan.external ? cfg.domains : 0;
        const int d_hi = plan.external ? cfg.domains + cfg.external_domains : cfg.domains;
        for (int d = d_lo; d < d_hi; ++d) {
            CaseRecord rec;
            char buf[64];
            std::snprintf(buf, sizeof buf, "d%02d_%s", d, plan.tag);
            rec.case_id = buf;
            rec.domain = d;
            rec.split = plan.split;
            for (int i = 0; i < plan.per_domain; ++i) {
                Rng rng(mix_seed(seed, static_cast<uint64_t>(d) * 1000 + static_cast<uint64_t>(i),
                                 static_cast<uint64_t>(plan.split)));
                rec.images.push_back(make_image(cfg, appearances[static_cast<size_t>(d)], rng));
            }
            ds.cases.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace astain
