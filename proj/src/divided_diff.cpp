#include "riskdiff/divided_diff.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "riskdiff/format.hpp"
#include "riskdiff/numerics.hpp"

namespace riskdiff {

Stencil stencil(int n) {
  if (n < 0) throw std::invalid_argument("stencil: order must be nonnegative");
  Stencil s;
  s.order = n;
  s.coefficients.resize(static_cast<std::size_t>(n) + 1);
  // C(n,j) by the multiplicative recurrence; exact in double for the orders
  // reachable before the cancellation guard trips.
  double binom = 1.0;
  for (int j = 0; j <= n; ++j) {
    const double sign = ((n - j) % 2 == 0) ? 1.0 : -1.0;
    s.coefficients[static_cast<std::size_t>(j)] = sign * binom;
    binom = binom * (n - j) / (j + 1);
  }
  return s;
}

double divided_difference(const WeightFunction& f, std::span<const double> x, int i,
                          int n, long m) {
  if (i < 1 || static_cast<std::size_t>(i) > x.size())
    throw std::invalid_argument("divided_difference: axis out of range");
  if (n < 0) throw std::invalid_argument("divided_difference: order must be nonnegative");
  if (m < 1) throw std::invalid_argument("divided_difference: step denominator must be positive");

  const Stencil s = stencil(n);
  std::vector<double> point(x.begin(), x.end());
  NeumaierSum acc;
  for (int j = 0; j <= n; ++j) {
    point[static_cast<std::size_t>(i - 1)] =
        x[static_cast<std::size_t>(i - 1)] + static_cast<double>(j) / static_cast<double>(m);
    acc.add(s.coefficients[static_cast<std::size_t>(j)] * f(point));
  }
  double scale = 1.0;
  for (int k = 0; k < n; ++k) scale *= static_cast<double>(m);
  return scale * acc.value();
}

ConvergenceTable convergence_table(const WeightFunction& f, std::span<const double> x,
                                   int i, int n, std::span<const long> m_schedule) {
  if (m_schedule.size() < 3)
    throw std::invalid_argument("convergence_table: schedule needs at least 3 entries");
  for (std::size_t k = 0; k < m_schedule.size(); ++k) {
    if (m_schedule[k] < 1 || (k > 0 && m_schedule[k] <= m_schedule[k - 1]))
      throw std::invalid_argument("convergence_table: schedule must be strictly increasing and positive");
  }

  ConvergenceTable t;
  t.rows.reserve(m_schedule.size());
  for (long m : m_schedule)
    t.rows.push_back({m, divided_difference(f, x, i, n, m)});

  const ConvergenceRow& r1 = t.rows[t.rows.size() - 2];
  const ConvergenceRow& r2 = t.rows[t.rows.size() - 1];
  t.extrapolated = (static_cast<double>(r2.m) * r2.estimate - static_cast<double>(r1.m) * r1.estimate) /
                   static_cast<double>(r2.m - r1.m);

  t.stable = !(std::abs(t.rows.back().estimate) > 10.0 * std::abs(t.rows.front().estimate));
  for (long m : m_schedule) {
    if (static_cast<double>(n) * std::log10(static_cast<double>(m)) > 12.0) t.stable = false;
  }
  return t;
}

std::string convergence_csv(const ConvergenceTable& table) {
  std::string out = "m,estimate\n";
  for (const ConvergenceRow& r : table.rows) {
    out += std::to_string(r.m);
    out += ',';
    out += format_double(r.estimate);
    out += '\n';
  }
  out += "# extrapolated,";
  out += format_double(table.extrapolated);
  out += '\n';
  return out;
}

void write_convergence_csv(const ConvergenceTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << convergence_csv(table);
}

}  // namespace riskdiff
