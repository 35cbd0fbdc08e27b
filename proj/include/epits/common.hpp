#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace epits {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when an input file does not conform to its schema.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Raised on invalid configuration (shape mismatches, bad field values).
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a computation produces non-finite values.
class NumericError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a persisted artifact fails its integrity check.
class IntegrityError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1). Bit-deterministic across platforms,
/// unlike std::uniform_real_distribution.
inline double unit_double(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * unit_double(rng);
}

/// Unbiased integer in [0, n). Rejection sampling keeps the draw
/// independent of the standard library's distribution internals.
inline std::uint64_t bounded(Rng& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("bounded: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

/// Standard normal via Box-Muller on raw uniform bits.
inline double gaussian(Rng& rng) {
    double u1 = unit_double(rng);
    double u2 = unit_double(rng);
    // avoid log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// splitmix64 finalizer; distinct stream seeds from one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a 64-bit, used for artifact integrity checks.
inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace epits
