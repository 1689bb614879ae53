// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace astain {

enum class Mode { Train, Infer };

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand extents do not match what the operation requires.
struct ShapeError : Error {
    using Error::Error;
};

// A value (label, config constant, argument) is outside its legal range.
struct ValueError : Error {
    using Error::Error;
};

// Stain estimation: not enough tissue pixels above the OD threshold.
struct UnderTissueError : Error {
    using Error::Error;
};

// Stain estimation: OD scatter has rank < 2, no stain plane exists.
struct DegenerateStainError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    using Error::Error;
};

struct DatasetError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

// Deterministic RNG. All random draws in the project go through this class;
// distributions are hand-rolled so that a seed pins the exact byte stream
// independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw ValueError("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    // standard normal, Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64; used to derive independent sub-seeds from (seed, salt...) tuples.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ (b * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL)); }

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

// Logging, controlled by ASTAIN_LOG={error|info|debug}. Default: info.
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void log_message(LogLevel level, const char* fmt, ...);

#define ASTAIN_LOG_ERROR(...) ::astain::log_message(::astain::LogLevel::Error, __VA_ARGS__)
#define ASTAIN_LOG_INFO(...) ::astain::log_message(::astain::LogLevel::Info, __VA_ARGS__)
#define ASTAIN_LOG_DEBUG(...) ::astain::log_message(::astain::LogLevel::Debug, __VA_ARGS__)

}  // namespace astain
