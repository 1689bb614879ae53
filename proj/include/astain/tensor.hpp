// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "astain/common.hpp"

namespace astain {

// Dense row-major 64-bit float tensor. 4-D data is ordered
// (batch, channel, row, column).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(checked_size(shape), 0.0) {}

    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (checked_size(shape) != static_cast<int64_t>(v.size()))
            throw ShapeError("tensor: value count " + std::to_string(v.size()) + " does not match shape " + shape_str());
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t size() const { return static_cast<int64_t>(v.size()); }

    int extent(int axis) const { return shape.at(static_cast<size_t>(axis)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& operator()(int i) { return v[static_cast<size_t>(i)]; }
    double operator()(int i) const { return v[static_cast<size_t>(i)]; }

    double& operator()(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
    double operator()(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }

    double& operator()(int i, int j, int k) { return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k]; }
    double operator()(int i, int j, int k) const { return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k]; }

    double& operator()(int i, int j, int k, int l) {
        return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double operator()(int i, int j, int k, int l) const {
        return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    // reshape preserving the flat contents
    Tensor reshaped(std::vector<int> s) const {
        Tensor t;
        if (checked_size(s) != size())
            throw ShapeError("reshape: " + shape_str() + " has " + std::to_string(size()) + " values, target needs " +
                             std::to_string(checked_size(s)));
        t.shape = std::move(s);
        t.v = v;
        return t;
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

    static int64_t checked_size(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            if (e <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(e));
            n *= e;
        }
        return n;
    }
};

inline Tensor random_normal(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = stddev * rng.normal();
    return t;
}

inline Tensor random_uniform(std::vector<int> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

}  // namespace astain
