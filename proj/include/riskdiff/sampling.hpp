#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "riskdiff/loss_models.hpp"

namespace riskdiff {

// Immutable Monte Carlo draw. Regenerating with the same (model, x, seed,
// count) reproduces losses bitwise regardless of worker count, because every
// sample is a pure function of (seed, index).
struct SampleSet {
  std::string model_id;
  std::vector<double> x;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::vector<double> losses;
  // Pathwise derivative columns keyed by (axis i, order n), both 1-based.
  std::map<std::pair<int, int>, std::vector<double>> derivs;
  // Permutation of 0..count-1 ordering losses ascending, ties by index.
  std::vector<std::size_t> sorted_index;

  const std::vector<double>& deriv_column(int i, int n) const;
  bool has_deriv(int i, int n) const { return derivs.count({i, n}) > 0; }
};

// count >= 1; derivs lists the (i, n) derivative columns to evaluate
// alongside the losses. Generation is partitioned across threads by index
// range; results are bitwise independent of the partitioning.
SampleSet draw(const LossModel& model, std::span<const double> x, std::size_t count,
               std::uint64_t seed,
               std::span<const std::pair<int, int>> deriv_orders = {},
               unsigned threads = 1);

// CSV round-trip, lossless for losses and derivatives (17 significant
// digits). Header is "index,loss" followed by one "d{i}_{n}" per column.
void save(const SampleSet& set, const std::string& path);
SampleSet load(const std::string& path);

// Losses recomputed at perturbed weights under common random numbers; the
// primitives for each index are regenerated, not stored.
std::vector<double> losses_at(const LossModel& model, std::span<const double> x,
                              std::size_t count, std::uint64_t seed, unsigned threads = 1);

std::vector<std::size_t> make_sorted_index(std::span<const double> losses);

}  // namespace riskdiff
