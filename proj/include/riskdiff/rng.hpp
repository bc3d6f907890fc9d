#pragma once

#include <cstdint>

#include "riskdiff/normal.hpp"

namespace riskdiff {

// Counter-based generator: every variate is a pure function of
// (seed, sample index, coordinate). Parallel generation partitioned by index
// is bitwise identical to sequential generation, and re-drawing at perturbed
// weights reuses the same primitives (common random numbers) for free.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Uniform draw in the open interval (0,1); never returns 0 or 1.
inline double uniform01(std::uint64_t seed, std::uint64_t index, std::uint64_t k) {
  const std::uint64_t stream = mix64(seed);
  const std::uint64_t base = mix64(stream ^ (index * 0xA24BAED4963EE407ull));
  const std::uint64_t raw = mix64(base ^ (k * 0x9E6C63D0876A9A47ull));
  return (static_cast<double>(raw >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal draw via the inverse CDF; inherits bitwise reproducibility
// from uniform01 and normal_quantile.
inline double normal01(std::uint64_t seed, std::uint64_t index, std::uint64_t k) {
  return normal_quantile(uniform01(seed, index, k));
}

}  // namespace riskdiff
