#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace clothdyn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
// Node positions and per-node 3-vectors, one row per node.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Error taxonomy mirrored by the CLI exit codes: usage/argument errors,
// data/compatibility errors, and numerical failures.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

inline void check_finite(const Mat& m, const std::string& where) {
    if (!m.allFinite()) throw NumericalError("non-finite values in " + where);
}

// Deterministic 64-bit FNV-1a, used to derive per-name RNG streams.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Uniform double in [0,1) from the top 53 bits of a 64-bit state; used
// instead of std::uniform_real_distribution, whose output is
// implementation-defined.
template <class Rng>
double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace clothdyn
