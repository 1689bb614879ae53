// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/stain.hpp"

#include <algorithm>
#include <cmath>

namespace astain {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp255(double x) { return x < 0.0 ? 0.0 : (x > 255.0 ? 255.0 : x); }

struct Vec3 {
    double x, y, z;
};

Vec3 cross(const Vec3& a, const Vec3& b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 scaled(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }

// unit eigenvector of (m - lambda*I) via the largest cross product of its rows
bool eigenvector_for(const double m[3][3], double lambda, Vec3& out) {
    Vec3 r0{m[0][0] - lambda, m[0][1], m[0][2]};
    Vec3 r1{m[1][0], m[1][1] - lambda, m[1][2]};
    Vec3 r2{m[2][0], m[2][1], m[2][2] - lambda};
    Vec3 c01 = cross(r0, r1), c02 = cross(r0, r2), c12 = cross(r1, r2);
    double n01 = norm(c01), n02 = norm(c02), n12 = norm(c12);
    Vec3 best = c01;
    double bn = n01;
    if (n02 > bn) {
        best = c02;
        bn = n02;
    }
    if (n12 > bn) {
        best = c12;
        bn = n12;
    }
    if (bn < 1e-20) return false;
    out = scaled(best, 1.0 / bn);
    return true;
}

Vec3 any_unit_orthogonal(const Vec3& v) {
    const Vec3 axis = std::abs(v.x) <= std::abs(v.y) && std::abs(v.x) <= std::abs(v.z) ? Vec3{1, 0, 0}
                      : (std::abs(v.y) <= std::abs(v.z) ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
    Vec3 w = cross(v, axis);
    return scaled(w, 1.0 / norm(w));
}

}  // namespace

Sym3Eigen sym3_eigen_decomposition(const double m[3][3]) {
    Sym3Eigen r{};
    const double p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    double l0, l1, l2;
    if (p1 < 1e-300) {
        l0 = m[0][0];
        l1 = m[1][1];
        l2 = m[2][2];
    } else {
        const double q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        const double p2 = (m[0][0] - q) * (m[0][0] - q) + (m[1][1] - q) * (m[1][1] - q) +
                          (m[2][2] - q) * (m[2][2] - q) + 2.0 * p1;
        const double p = std::sqrt(p2 / 6.0);
        double b[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) b[i][j] = (m[i][j] - (i == j ? q : 0.0)) / p;
        const double detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                            b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                            b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        const double rr = std::clamp(detb / 2.0, -1.0, 1.0);
        const double phi = std::acos(rr) / 3.0;
        l0 = q + 2.0 * p * std::cos(phi);
        l2 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
        l1 = 3.0 * q - l0 - l2;
    }
    double lam[3] = {l0, l1, l2};
    std::sort(lam, lam + 3, std::greater<double>());

    Vec3 v0, v1, v2;
    if (!eigenvector_for(m, lam[0], v0)) v0 = Vec3{1, 0, 0};
    if (!eigenvector_for(m, lam[1], v1) || std::abs(dot(v0, v1)) > 0.9) v1 = any_unit_orthogonal(v0);
    // re-orthogonalize against v0, then complete the basis
    const double proj = dot(v1, v0);
    v1 = Vec3{v1.x - proj * v0.x, v1.y - proj * v0.y, v1.z - proj * v0.z};
    v1 = scaled(v1, 1.0 / norm(v1));
    v2 = cross(v0, v1);

    r.values[0] = lam[0];
    r.values[1] = lam[1];
    r.values[2] = lam[2];
    const Vec3 vecs[3] = {v0, v1, v2};
    for (int i = 0; i < 3; ++i) {
        r.vectors[i][0] = vecs[i].x;
        r.vectors[i][1] = vecs[i].y;
        r.vectors[i][2] = vecs[i].z;
    }
    return r;
}

void ColorAugmentConfig::validate() const {
    if (scale_low > scale_high) throw ValueError("color augment: scale_low > scale_high");
    if (shift_low > shift_high) throw ValueError("color augment: shift_low > shift_high");
}

Tensor rgb_to_od(const RgbImage& image, double i0) {
    if (i0 <= 0.0) throw ValueError("rgb_to_od: background intensity must be positive");
    Tensor od({image.height, image.width, 3});
    const int64_t n = static_cast<int64_t>(image.height) * image.width * 3;
    for (int64_t i = 0; i < n; ++i) {
        // intensity 0 floored to 1 so saturated-black pixels stay finite
        const double intensity = std::max<double>(image.pixels[static_cast<size_t>(i)], 1.0);
        od.v[static_cast<size_t>(i)] = -std::log(intensity / i0);
    }
    return od;
}

RgbImage od_to_rgb(const Tensor& od, double i0) {
    if (od.rank() != 3 || od.shape[2] != 3) throw ShapeError("od_to_rgb: expected [H x W x 3], got " + od.shape_str());
    RgbImage img(od.shape[0], od.shape[1]);
    const int64_t n = od.size();
    for (int64_t i = 0; i < n; ++i)
        img.pixels[static_cast<size_t>(i)] =
            static_cast<uint8_t>(clamp255(std::round(i0 * std::exp(-od.v[static_cast<size_t>(i)]))));
    return img;
}

double percentile_nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) throw ValueError("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<int64_t>(values.size());
    int64_t idx = static_cast<int64_t>(std::ceil(p / 100.0 * static_cast<double>(n))) - 1;
    idx = std::clamp<int64_t>(idx, 0, n - 1);
    return values[static_cast<size_t>(idx)];
}

StainModel estimate_stain_matrix(const RgbImage& image, double od_threshold, double angle_percentile) {
    const Tensor od = rgb_to_od(image);
    const int64_t total = static_cast<int64_t>(image.height) * image.width;

    std::vector<Vec3> tissue;
    tissue.reserve(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        Vec3 p{od.v[static_cast<size_t>(3 * i)], od.v[static_cast<size_t>(3 * i + 1)], od.v[static_cast<size_t>(3 * i + 2)]};
        if (norm(p) > od_threshold) tissue.push_back(p);
    }
    if (tissue.size() < 100)
        throw UnderTissueError("stain estimation needs at least 100 tissue pixels above OD " +
                               std::to_string(od_threshold) + ", found " + std::to_string(tissue.size()));

    double s[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (const Vec3& p : tissue) {
        const double c[3] = {p.x, p.y, p.z};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s[i][j] += c[i] * c[j];
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s[i][j] /= static_cast<double>(tissue.size());

    const Sym3Eigen eig = sym3_eigen_decomposition(s);
    if (eig.values[1] <= 1e-9 * std::max(eig.values[0], 1e-12))
        throw DegenerateStainError("OD scatter has rank < 2, cannot span a stain plane");

    const Vec3 e1{eig.vectors[0][0], eig.vectors[0][1], eig.vectors[0][2]};
    const Vec3 e2{eig.vectors[1][0], eig.vectors[1][1], eig.vectors[1][2]};

    // orient the in-plane basis along the mean projection so tissue angles
    // stay clear of the atan2 wrap
    double mp = 0.0, mq = 0.0;
    for (const Vec3& p : tissue) {
        mp += dot(p, e1);
        mq += dot(p, e2);
    }
    const double mnorm = std::hypot(mp, mq);
    if (mnorm < 1e-12) throw DegenerateStainError("OD projections have no mean direction");
    const double c0 = mp / mnorm, s0 = mq / mnorm;
    const Vec3 u{c0 * e1.x + s0 * e2.x, c0 * e1.y + s0 * e2.y, c0 * e1.z + s0 * e2.z};
    const Vec3 w{-s0 * e1.x + c0 * e2.x, -s0 * e1.y + c0 * e2.y, -s0 * e1.z + c0 * e2.z};

    std::vector<double> angles(tissue.size());
    for (size_t i = 0; i < tissue.size(); ++i) angles[i] = std::atan2(dot(tissue[i], w), dot(tissue[i], u));
    const double lo = percentile_nearest_rank(angles, angle_percentile);
    const double hi = percentile_nearest_rank(angles, 100.0 - angle_percentile);

    auto direction = [&](double phi) {
        Vec3 v{std::cos(phi) * u.x + std::sin(phi) * w.x, std::cos(phi) * u.y + std::sin(phi) * w.y,
               std::cos(phi) * u.z + std::sin(phi) * w.z};
        if (v.x + v.y + v.z < 0.0) v = scaled(v, -1.0);
        v.x = std::max(v.x, 0.0);
        v.y = std::max(v.y, 0.0);
        v.z = std::max(v.z, 0.0);
        const double vn = norm(v);
        if (vn < 1e-12) throw DegenerateStainError("estimated stain direction collapsed to zero");
        return scaled(v, 1.0 / vn);
    };
    Vec3 va = direction(lo);
    Vec3 vb = direction(hi);
    // hematoxylin-like column first: larger blue-channel absorbance
    if (va.z < vb.z) std::swap(va, vb);

    StainModel model;
    model.a[0][0] = va.x;
    model.a[1][0] = va.y;
    model.a[2][0] = va.z;
    model.a[0][1] = vb.x;
    model.a[1][1] = vb.y;
    model.a[2][1] = vb.z;
    model.i0 = 255.0;

    // record the image's own concentration range for downstream rescaling
    Tensor rows({static_cast<int>(tissue.size()), 3});
    for (size_t i = 0; i < tissue.size(); ++i) {
        rows.v[3 * i] = tissue[i].x;
        rows.v[3 * i + 1] = tissue[i].y;
        rows.v[3 * i + 2] = tissue[i].z;
    }
    const Tensor conc = compute_concentrations(rows, model);
    std::vector<double> c0s(tissue.size()), c1s(tissue.size());
    for (size_t i = 0; i < tissue.size(); ++i) {
        c0s[i] = conc.v[2 * i];
        c1s[i] = conc.v[2 * i + 1];
    }
    model.concentration_scale[0] = percentile_nearest_rank(c0s, 99.0);
    model.concentration_scale[1] = percentile_nearest_rank(c1s, 99.0);
    return model;
}

Tensor compute_concentrations_unclamped(const Tensor& od_rows, const StainModel& model) {
    if (od_rows.rank() != 2 || od_rows.shape[1] != 3)
        throw ShapeError("compute_concentrations: expected OD rows [N x 3], got " + od_rows.shape_str());
    // normal equations of the 3x2 system
    double g00 = 0, g01 = 0, g11 = 0;
    for (int i = 0; i < 3; ++i) {
        g00 += model.a[i][0] * model.a[i][0];
        g01 += model.a[i][0] * model.a[i][1];
        g11 += model.a[i][1] * model.a[i][1];
    }
    const double det = g00 * g11 - g01 * g01;
    if (std::abs(det) < 1e-12) throw ValueError("stain columns are linearly dependent, normal matrix is singular");

    const int n = od_rows.shape[0];
    Tensor conc({n, 2});
    for (int r = 0; r < n; ++r) {
        const double* p = od_rows.data() + static_cast<int64_t>(r) * 3;
        const double b0 = model.a[0][0] * p[0] + model.a[1][0] * p[1] + model.a[2][0] * p[2];
        const double b1 = model.a[0][1] * p[0] + model.a[1][1] * p[1] + model.a[2][1] * p[2];
        conc(r, 0) = (g11 * b0 - g01 * b1) / det;
        conc(r, 1) = (g00 * b1 - g01 * b0) / det;
    }
    return conc;
}

Tensor compute_concentrations(const Tensor& od_rows, const StainModel& model) {
    Tensor conc = compute_concentrations_unclamped(od_rows, model);
    for (double& x : conc.v) x = std::max(x, 0.0);
    return conc;
}

RgbImage normalize_image(const RgbImage& image, const StainModel& reference, double percentile) {
    const StainModel own = estimate_stain_matrix(image);
    const Tensor od = rgb_to_od(image, own.i0);
    const int64_t n = static_cast<int64_t>(image.height) * image.width;
    const Tensor conc = compute_concentrations(od.reshaped({static_cast<int>(n), 3}), own);

    std::vector<double> c0s(static_cast<size_t>(n)), c1s(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        c0s[static_cast<size_t>(i)] = conc.v[static_cast<size_t>(2 * i)];
        c1s[static_cast<size_t>(i)] = conc.v[static_cast<size_t>(2 * i + 1)];
    }
    const double p0 = percentile_nearest_rank(c0s, percentile);
    const double p1 = percentile_nearest_rank(c1s, percentile);
    const double f0 = reference.concentration_scale[0] / std::max(p0, 1e-8);
    const double f1 = reference.concentration_scale[1] / std::max(p1, 1e-8);

    Tensor out_od({image.height, image.width, 3});
    for (int64_t i = 0; i < n; ++i) {
        const double c0 = conc.v[static_cast<size_t>(2 * i)] * f0;
        const double c1 = conc.v[static_cast<size_t>(2 * i + 1)] * f1;
        for (int ch = 0; ch < 3; ++ch)
            out_od.v[static_cast<size_t>(3 * i + ch)] = reference.a[ch][0] * c0 + reference.a[ch][1] * c1;
    }
    return od_to_rgb(out_od, reference.i0);
}

RgbImage color_augment(const RgbImage& image, const ColorAugmentConfig& config, Rng& rng) {
    config.validate();
    double a[3], b[3];
    for (double& x : a) x = rng.uniform(config.scale_low, config.scale_high);
    for (double& x : b) x = rng.uniform(config.shift_low, config.shift_high);
    RgbImage out(image.height, image.width);
    const int64_t n = static_cast<int64_t>(image.height) * image.width;
    for (int64_t i = 0; i < n; ++i)
        for (int ch = 0; ch < 3; ++ch)
            out.pixels[static_cast<size_t>(3 * i + ch)] = static_cast<uint8_t>(
                clamp255(std::round(a[ch] * image.pixels[static_cast<size_t>(3 * i + ch)] + b[ch])));
    return out;
}

StainModel default_reference_stain() {
    StainModel m;
    const double h[3] = {0.65, 0.70, 0.29};
    const double e[3] = {0.07, 0.99, 0.11};
    const double hn = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
    const double en = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
    for (int i = 0; i < 3; ++i) {
        m.a[i][0] = h[i] / hn;
        m.a[i][1] = e[i] / en;
    }
    m.i0 = 255.0;
    m.concentration_scale[0] = 1.0;
    m.concentration_scale[1] = 1.0;
    return m;
}

RgbImage compose_from_stains(const StainModel& model, const Tensor& concentrations) {
    if (concentrations.rank() != 3 || concentrations.shape[2] != 2)
        throw ShapeError("compose_from_stains: expected [H x W x 2], got " + concentrations.shape_str());
    Tensor od({concentrations.shape[0], concentrations.shape[1], 3});
    const int64_t n = static_cast<int64_t>(concentrations.shape[0]) * concentrations.shape[1];
    for (int64_t i = 0; i < n; ++i) {
        const double c0 = concentrations.v[static_cast<size_t>(2 * i)];
        const double c1 = concentrations.v[static_cast<size_t>(2 * i + 1)];
        for (int ch = 0; ch < 3; ++ch) od.v[static_cast<size_t>(3 * i + ch)] = model.a[ch][0] * c0 + model.a[ch][1] * c1;
    }
    return od_to_rgb(od, model.i0);
}

}  // namespace astain
