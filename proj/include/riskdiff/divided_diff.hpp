#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace riskdiff {

// Forward divided-difference stencil: coefficient j is (-1)^(n-j)*C(n,j),
// applied at offsets j/step_denominator along axis (1-based).
struct Stencil {
  int order = 0;
  std::vector<double> coefficients;
  int axis = 1;
  long step_denominator = 1;
};

// n >= 1 gives the n+1 signed binomial coefficients; n = 0 is the identity
// (single coefficient 1). Negative n -> argument error.
Stencil stencil(int n);

using WeightFunction = std::function<double(std::span<const double>)>;

// Scaled forward divided difference m^n * sum_j (-1)^(n-j) C(n,j) f(x + (j/m)e_i).
// Converges to the n-th partial derivative along axis i (1-based) as m grows;
// non-finite values at stencil points propagate into the result.
double divided_difference(const WeightFunction& f, std::span<const double> x, int i,
                          int n, long m);

struct ConvergenceRow {
  long m = 0;
  double estimate = 0.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  // Richardson extrapolation from the last two rows assuming O(1/m) error,
  // the forward-stencil rate.
  double extrapolated = 0.0;
  // False when estimates diverge across the schedule or n*log10(m) > 12
  // puts the stencil in the double-precision cancellation regime.
  bool stable = true;
};

// m_schedule must be strictly increasing with length >= 3.
ConvergenceTable convergence_table(const WeightFunction& f, std::span<const double> x,
                                   int i, int n, std::span<const long> m_schedule);

// CSV with header "m,estimate" and trailing line "# extrapolated,<value>".
std::string convergence_csv(const ConvergenceTable& table);
void write_convergence_csv(const ConvergenceTable& table, const std::string& path);

}  // namespace riskdiff
