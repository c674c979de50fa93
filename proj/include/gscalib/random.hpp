// Seeded RNG helpers with fully specified output. std:: distributions are
// implementation-defined, which would break byte-identical dataset
// regeneration across standard libraries; these are pinned instead.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>

namespace gscalib {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform index in [0, n). n must be > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

/// Standard normal via Box-Muller.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  // keep u1 away from 0 so the log is finite
  u1 = (u1 <= 0.0) ? 0x1.0p-53 : u1;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Uniformly distributed unit 3-vector.
inline Eigen::Vector3d unit_vector(Rng& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double a = uniform(rng, 0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(a), r * std::sin(a), z};
}

}  // namespace gscalib
