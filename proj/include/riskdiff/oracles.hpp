#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "riskdiff/loss_models.hpp"
#include "riskdiff/numerics.hpp"

namespace riskdiff {

// Closed-form references for L = x' (mu + chol(Sigma) Z), independent of the
// Monte Carlo machinery.
struct GaussianPortfolio {
  std::vector<double> mu;
  Matrix sigma;
};

struct GaussianTail {
  double q = 0.0;
  double es = 0.0;
  // x' Sigma x = 0: the loss is deterministic and q = es = x'mu.
  bool zero_variance = false;
};

GaussianTail gaussian_var_es(const GaussianPortfolio& p, std::span<const double> x,
                             double alpha);
// dVaR/dx_i = mu_i + (Sigma x)_i z_alpha / s, s = sqrt(x'Sigma x).
double gaussian_var_gradient(const GaussianPortfolio& p, std::span<const double> x,
                             double alpha, int i);
// dES/dx_i = mu_i + (Sigma x)_i phi(z_alpha) / ((1-alpha) s), s = sqrt(x'Sigma x).
double gaussian_es_gradient(const GaussianPortfolio& p, std::span<const double> x,
                            double alpha, int i);
// d2ES/dx_i^2 = c (Sigma_ii s^2 - (Sigma x)_i^2) / s^3, c = phi(z_alpha)/(1-alpha).
double gaussian_es_hessian_diag(const GaussianPortfolio& p, std::span<const double> x,
                                double alpha, int i);

struct DiscreteExact {
  double q = 0.0;
  double es = 0.0;
  // Independent quantile-integral evaluation of the same tail.
  double es_quantile_integral = 0.0;
  double atom = 0.0;
  double es_derivative = 0.0;
  std::size_t expanded_count = 0;
  // Conditional quantities on the raw level set {L(x) = 0}; absent when the
  // level set carries no mass.
  double level_set_mass = 0.0;
  std::optional<double> conditional_mean;
  std::optional<double> conditional_abs_mean;
  std::optional<double> conditional_prob_zero;
};

// Exact tail quantities of a finite law by expanding its atoms into an
// integer multiset (probabilities rationalized to a common denominator
// <= 1e6, else std::length_error) and applying the empirical-tail formulas
// verbatim, so a sample set holding exactly that multiset reproduces q and
// es bitwise. Models without atom support -> argument error.
DiscreteExact enumerate_discrete(const LossModel& model, std::span<const double> x,
                                 double alpha, int i = 1, int n = 1);

struct FdResult {
  double value = 0.0;
  double standard_error = 0.0;
  double step = 0.0;
  // The perturbed ES values were bitwise equal; the difference quotient
  // carries no signal at this step size.
  bool degenerate = false;
};

// Central finite difference of the Monte Carlo ES in x_i under common random
// numbers, order n in {1, 2}. The standard error comes from recomputing the
// difference quotient on 100 contiguous index blocks, each with its own
// block-local quantile.
FdResult fd_of_mc_es(const LossModel& model, std::span<const double> x, double alpha,
                     int i, int n, double h, std::size_t count, std::uint64_t seed,
                     unsigned threads = 1);

}  // namespace riskdiff
