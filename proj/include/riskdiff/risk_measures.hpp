#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskdiff/divided_diff.hpp"
#include "riskdiff/loss_models.hpp"
#include "riskdiff/sampling.hpp"

namespace riskdiff {

enum class EsMode { continuous_eq319, general_eq304 };
std::string to_string(EsMode mode);

struct DerivativeEstimate {
  int i = 1;
  int n = 1;
  double value = 0.0;
  double stderr_ = 0.0;
};

struct TailEstimate {
  double alpha = 0.0;
  double var = 0.0;
  double es = 0.0;
  // Probability mass the empirical tail carries beyond 1 - alpha; nonzero
  // whenever ceil(alpha*N) < alpha*N + 1, and O(1/N).
  double atom = 0.0;
  std::optional<DerivativeEstimate> derivative;
  double standard_error = 0.0;
  EsMode mode = EsMode::general_eq304;
  // Convergence of the divided-difference quantile term; stays true in
  // continuous mode, where no quantile derivative enters. Not serialized.
  bool quantile_dd_stable = true;

  nlohmann::json to_json() const;
};

// Rank of the empirical alpha-quantile: ceil(alpha*N) clamped to [1, N].
// A 1e-9 slack absorbs the double rounding of alpha*N (exact for N <= 1e7).
long quantile_rank(double alpha, std::size_t n);

// Order statistic at quantile_rank; takes values by copy for nth_element.
double empirical_quantile(std::vector<double> values, double alpha);

// VaR = the rank-k order statistic (no interpolation).
double var(const SampleSet& set, double alpha);

// ES via the tail-average form (T - q*atom)/(1-alpha) with a compensated
// ascending tail sum. standard_error uses the tail-restricted sample
// variance over (1-alpha)^2 * N, which charges the quantile's own noise to
// the tail and is conservative by roughly a factor of 3 for Gaussian tails.
TailEstimate es(const SampleSet& set, double alpha);

// Independent quantile-integral form sum_pos L_(pos) * (pos/N - max(alpha,
// (pos-1)/N)) / (1-alpha); agrees with es() to 1e-12 relative.
double es_quantile_integral(const SampleSet& set, double alpha);

// ES on a bare loss vector (no derivative columns); used for block SEs and
// finite-difference oracles.
TailEstimate es_from_losses(std::vector<double> losses, double alpha);

// d^n ES / dx_i^n. continuous_eq319 averages the pathwise derivative over
// the tail {L >= q} scaled by 1/(1-alpha); general_eq304 subtracts
// d^n q/dx_i^n * atom/(1-alpha), with the quantile derivative taken by a
// forward divided difference at m = quantile_fd_m under common random
// numbers and its stability judged on the m-schedule {16, 32, 64}.
// Requires the (i, n) derivative column.
TailEstimate es_derivative(const LossModel& model, std::span<const double> x,
                           double alpha, int i, int n, const SampleSet& set,
                           EsMode mode, long quantile_fd_m = 64,
                           unsigned threads = 1);

struct VarDerivative {
  double value = 0.0;
  double standard_error = 0.0;
  double epsilon = 0.0;
  std::size_t count = 0;
};

// dVaR/dx_i = E[dL/dx_i | L = q], estimated on the band |L - q| <= epsilon.
// epsilon = 0 selects sd(L) * N^(-1/3). Fewer than 30 band members ->
// insufficient_data_error. Requires the (i, 1) derivative column.
VarDerivative var_derivative(const SampleSet& set, double alpha, int i,
                             double epsilon = 0.0);

struct MonotonicityReport {
  double violation_fraction = 0.0;
  bool pass = false;
  std::size_t band_count = 0;
  double epsilon = 0.0;
  std::vector<long> probe_ms;
  double threshold = 0.0;
};

// Premise probe for tail-derivative estimators: samples within epsilon of
// the quantile are re-evaluated at x + e_i/m under common random numbers,
// and H = L - q must not move away from the level set as m grows. epsilon =
// 0 selects sd(L) * N^(-1/3) / 8. The set must have been drawn in-process
// from (model, x, set.seed).
MonotonicityReport tail_monotonicity_diagnostic(const LossModel& model,
                                                std::span<const double> x, double alpha,
                                                int i, const SampleSet& set,
                                                std::span<const long> probe_ms = {},
                                                double threshold = 0.01,
                                                double epsilon = 0.0,
                                                unsigned threads = 1);

struct EulerReport {
  std::vector<double> contributions;
  double total = 0.0;
  double es = 0.0;
  double relative_residual = 0.0;
  nlohmann::json to_json() const;
};

// Full allocation x_i * dES/dx_i for degree-1 homogeneous losses; any other
// declared degree (or none) -> not_applicable_error. Requires every (i, 1)
// derivative column. Mode follows the model's law: absolutely continuous ->
// continuous_eq319, otherwise general_eq304.
EulerReport euler_allocation(const LossModel& model, std::span<const double> x,
                             double alpha, const SampleSet& set,
                             unsigned threads = 1);

}  // namespace riskdiff
