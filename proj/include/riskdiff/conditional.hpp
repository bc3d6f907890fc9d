#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskdiff/loss_models.hpp"
#include "riskdiff/numerics.hpp"

namespace riskdiff {

enum class ConditioningLaw { discrete, absolutely_continuous };

enum class Verdict { pass, fail, premise_failed };
std::string to_string(Verdict v);

// Conditioning data for the level set {H = 0}: H realizations, the integrand
// g (typically a pathwise derivative), and how to treat the law of H.
struct LevelSetQuery {
  std::vector<double> H_samples;
  std::vector<double> g_samples;
  ConditioningLaw law = ConditioningLaw::absolutely_continuous;
  // Strictly decreasing positive epsilons; bands are {0 <= H <= 2*eps}.
  std::vector<double> band_schedule;
  // Atom probabilities for the discrete estimator; empty means equal weights.
  std::vector<double> atom_weights;
};

struct BandRow {
  double epsilon = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
  // Bands under the minimum population are skipped; their mean serializes
  // as null.
  bool usable = false;
};

struct LevelSetReport {
  double estimate = 0.0;
  double abs_estimate = 0.0;
  double prob_zero_deriv = 0.0;
  double conditioning_mass = 0.0;
  double standard_error = 0.0;
  Verdict verdict = Verdict::fail;
  double premise_violation_fraction = 0.0;
  std::vector<BandRow> bands;

  nlohmann::json to_json() const;
};

struct LevelSetConfig {
  // Atom membership |H| <= zero_tol; a derivative counts as zero when
  // |g| <= zero_tol.
  double zero_tol = 1e-12;
  // Absolute floor on the banded verdict tolerance max(3*SE, verdict_atol).
  double verdict_atol = 1e-3;
  std::size_t min_band_count = 30;
  // Comparison mode |H| <= eps instead of the one-sided 0 <= H <= 2*eps.
  bool symmetric_bands = false;
};

// Exact enumeration over atoms; no sampling error. Plain left-to-right
// accumulation so an independent brute-force summation reproduces the ratio
// bitwise. Empty level set -> conditioning_mass_error.
LevelSetReport conditional_expectation_discrete(const LevelSetQuery& query,
                                                const LevelSetConfig& config = {});

// Shrinking one-sided bands with linear extrapolation to eps = 0 from the
// last two usable bands. All bands under-populated -> insufficient_data_error
// (message reports the smallest epsilon that would reach the minimum count).
// A constant H far from zero -> conditioning_mass_error; a constant H at
// zero conditions on the full sample.
LevelSetReport conditional_expectation_banded(const LevelSetQuery& query,
                                              const LevelSetConfig& config = {});

// eps_k = sd(H) * N^(-1/3) * 2^(-k), k = 0..3: balances the O(eps) band bias
// against the O(1/sqrt(N eps)) band-count noise.
std::vector<double> default_band_schedule(std::span<const double> H);

struct Prop1Config {
  std::size_t sample_count = 1'000'000;
  std::uint64_t seed = 1;
  // Condition on {L - q_alpha(L) = 0} instead of the raw {L = 0}.
  bool center_at_quantile = false;
  double alpha = 0.95;
  std::vector<double> band_schedule;  // empty -> default_band_schedule
  double premise_threshold = 0.05;
  std::vector<long> probe_ms = {8, 16, 32, 64};
  unsigned threads = 1;
  LevelSetConfig level;
};

// Checks the three conclusions E[|d^n H|; H=0] = 0, P[d^n H = 0 | H=0] = 1,
// E[d^n H; H=0] = 0, routing to the exact or banded estimator by the model's
// law. The monotone-decrease premise is probed empirically on level-set
// points; a violation fraction above the threshold yields a premise_failed
// verdict with the conclusions still reported.
LevelSetReport verify_proposition1(const LossModel& model, std::span<const double> x,
                                   int i, int n, const Prop1Config& config = {});

struct Lemma1Row {
  long m = 0;
  double estimate = 0.0;
  double abs_estimate = 0.0;
  double standard_error = 0.0;
  double abs_standard_error = 0.0;
};

struct Lemma1Report {
  std::vector<Lemma1Row> rows;
  bool pass = false;
  nlohmann::json to_json() const;
};

// Indexed families evaluated on a shared uniform draw u per sample, so the
// same underlying outcome is tracked across the schedule.
using FamilyValue = std::function<double(long m, double u)>;
using FamilyEvent = std::function<bool(long m, double u)>;

// Estimates E[H_m 1_{A_m}] and E[|H_m| 1_{A_m}] along the schedule. Pass iff
// the final absolute estimate is <= max(3*SE, 1e-3) and the |E| sequence is
// non-increasing up to 2*SE slack. Schedule length < 3 -> argument error.
Lemma1Report lemma1_probe(const FamilyValue& H, const FamilyEvent& A,
                          std::span<const long> m_schedule, std::size_t n_samples,
                          std::uint64_t seed);

struct Prop2Config {
  std::size_t sample_count = 1'000'000;
  std::uint64_t seed = 1;
  // Test H = L - q_alpha(L); disable to test the raw model value.
  bool center_at_quantile = true;
  double alpha = 0.95;
  // 0 -> sd(H) * N^(-1/3). Single band {0 <= H <= 2*eps}; no extrapolation,
  // since the cross-derivative matrix needs low-noise point values.
  double band_epsilon = 0.0;
  double symmetry_tol = 0.25;
  double conclusion_atol = 0.05;
  // Forward step denominator for the quantile gradient under CRN.
  long quantile_fd_m = 64;
  // Step denominator for differentiating the conditional gradient.
  long d_step_m = 2;
  std::size_t homogeneity_samples = 1024;
  unsigned threads = 1;
  LevelSetConfig level;
};

struct Prop2Report {
  HomogeneityReport homogeneity;
  // Per-sample Euler residual |H - sum_i x_i dH/dx_i| / (1 + |H|), maximized.
  double max_euler_residual = 0.0;
  // D[i][j] = d/dx_i of the banded E[dH/dx_j | H = 0]; symmetry_residual is
  // max |D_ij - D_ji|.
  Matrix d_matrix;
  double symmetry_residual = 0.0;
  std::vector<double> conditional_gradient;
  std::vector<double> conditional_gradient_se;
  // sum_i x_i * conditional_gradient[i], the Euler-combined conclusion.
  double euler_weighted_conditional = 0.0;
  bool euler_pass = false;
  bool symmetry_pass = false;
  bool conclusion_pass = false;
  Verdict verdict = Verdict::fail;

  nlohmann::json to_json() const;
};

// Homogeneity degree 1 must be declared, else not_applicable_error. A failing
// sampled homogeneity check is reported and fails the verdict; the
// conclusions are still computed.
Prop2Report verify_proposition2(const LossModel& model, std::span<const double> x,
                                const Prop2Config& config = {});

}  // namespace riskdiff
