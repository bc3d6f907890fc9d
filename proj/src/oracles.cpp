#include "riskdiff/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "riskdiff/normal.hpp"
#include "riskdiff/risk_measures.hpp"
#include "riskdiff/sampling.hpp"

namespace riskdiff {

namespace {

void check_portfolio(const GaussianPortfolio& p, std::span<const double> x, int i) {
  if (p.mu.size() != p.sigma.dim())
    throw std::invalid_argument("mu and sigma dimensions differ");
  if (x.size() != p.mu.size())
    throw std::invalid_argument("x dimension does not match portfolio");
  if (i < 1 || static_cast<std::size_t>(i) > x.size())
    throw std::invalid_argument("axis out of range");
}

double portfolio_sd(const GaussianPortfolio& p, std::span<const double> x,
                    std::vector<double>& sigma_x) {
  sigma_x = p.sigma.apply(x);
  const double s2 = dot(x, sigma_x);
  return std::sqrt(std::max(0.0, s2));
}

}  // namespace

GaussianTail gaussian_var_es(const GaussianPortfolio& p, std::span<const double> x,
                             double alpha) {
  check_portfolio(p, x, 1);
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::domain_error("alpha must lie strictly inside (0, 1)");
  std::vector<double> sigma_x;
  const double s = portfolio_sd(p, x, sigma_x);
  const double m = dot(x, p.mu);
  GaussianTail tail;
  if (s == 0.0) {
    tail.q = m;
    tail.es = m;
    tail.zero_variance = true;
    return tail;
  }
  const double z = normal_quantile(alpha);
  tail.q = m + s * z;
  tail.es = m + s * normal_pdf(z) / (1.0 - alpha);
  return tail;
}

double gaussian_var_gradient(const GaussianPortfolio& p, std::span<const double> x,
                             double alpha, int i) {
  check_portfolio(p, x, i);
  std::vector<double> sigma_x;
  const double s = portfolio_sd(p, x, sigma_x);
  if (s == 0.0) return p.mu[static_cast<std::size_t>(i - 1)];
  return p.mu[static_cast<std::size_t>(i - 1)] +
         sigma_x[static_cast<std::size_t>(i - 1)] * normal_quantile(alpha) / s;
}

double gaussian_es_gradient(const GaussianPortfolio& p, std::span<const double> x,
                            double alpha, int i) {
  check_portfolio(p, x, i);
  std::vector<double> sigma_x;
  const double s = portfolio_sd(p, x, sigma_x);
  if (s == 0.0) return p.mu[static_cast<std::size_t>(i - 1)];
  const double c = normal_pdf(normal_quantile(alpha)) / (1.0 - alpha);
  return p.mu[static_cast<std::size_t>(i - 1)] +
         sigma_x[static_cast<std::size_t>(i - 1)] * c / s;
}

double gaussian_es_hessian_diag(const GaussianPortfolio& p, std::span<const double> x,
                                double alpha, int i) {
  check_portfolio(p, x, i);
  std::vector<double> sigma_x;
  const double s = portfolio_sd(p, x, sigma_x);
  if (s == 0.0) return 0.0;
  const double c = normal_pdf(normal_quantile(alpha)) / (1.0 - alpha);
  const std::size_t k = static_cast<std::size_t>(i - 1);
  return c * (p.sigma(k, k) * s * s - sigma_x[k] * sigma_x[k]) / (s * s * s);
}

namespace {

struct Rational {
  long long num = 0;
  long long den = 1;
};

// Best continued-fraction approximation with denominator <= max_den and
// absolute error <= tol.
Rational rationalize(double p, long long max_den, double tol) {
  if (!(p >= 0.0) || !std::isfinite(p))
    throw std::invalid_argument("atom probability must be a finite non-negative number");
  long long h0 = 0, k0 = 1, h1 = 1, k1 = 0;
  double v = p;
  for (int iter = 0; iter < 64; ++iter) {
    const double af = std::floor(v);
    if (af > static_cast<double>(max_den)) break;
    const long long a = static_cast<long long>(af);
    const long long h2 = a * h1 + h0;
    const long long k2 = a * k1 + k0;
    if (k2 > max_den || k2 <= 0) break;
    h0 = h1;
    k0 = k1;
    h1 = h2;
    k1 = k2;
    if (std::fabs(p - static_cast<double>(h2) / static_cast<double>(k2)) <= tol)
      return {h2, k2};
    const double frac = v - af;
    if (frac < 1e-15) break;
    v = 1.0 / frac;
  }
  throw std::length_error(
      "atom probabilities cannot be rationalized to a common denominator <= 1000000");
}

}  // namespace

DiscreteExact enumerate_discrete(const LossModel& model, std::span<const double> x,
                                 double alpha, int i, int n) {
  const auto atoms = model.atom_support();
  if (!atoms || atoms->empty())
    throw std::invalid_argument("model has no enumerable atom support");
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  if (i < 1 || static_cast<std::size_t>(i) > model.dim())
    throw std::invalid_argument("axis out of range");
  if (n < 1) throw std::invalid_argument("derivative order must be >= 1");

  constexpr long long kMaxDen = 1'000'000;
  long long common = 1;
  std::vector<Rational> rats;
  rats.reserve(atoms->size());
  for (const DiscreteAtom& atom : *atoms) {
    const Rational r = rationalize(atom.probability, kMaxDen, 1e-9);
    rats.push_back(r);
    common = std::lcm(common, r.den);
    if (common > kMaxDen)
      throw std::length_error(
          "atom probabilities cannot be expanded within 1000000 copies");
  }
  std::vector<long long> counts(atoms->size());
  long long total = 0;
  for (std::size_t a = 0; a < atoms->size(); ++a) {
    counts[a] = std::llround(atoms->at(a).probability * static_cast<double>(common));
    total += counts[a];
    if (std::fabs(static_cast<double>(counts[a]) / static_cast<double>(common) -
                  atoms->at(a).probability) > 1e-9)
      throw std::length_error("atom probabilities do not admit exact multiplicities");
  }
  if (total != common)
    throw std::length_error("atom probabilities do not sum to one exactly");

  std::vector<double> values(atoms->size());
  std::vector<double> derivs(atoms->size());
  for (std::size_t a = 0; a < atoms->size(); ++a) {
    values[a] = model.evaluate(x, atoms->at(a).sample);
    derivs[a] = model.pathwise_derivative(x, atoms->at(a).sample, i, n);
  }

  // Atom order sorted by value, ties by original index; the expanded
  // multiset below is then ascending, matching a sample set's sorted order.
  std::vector<std::size_t> order(atoms->size());
  for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });

  const std::size_t count = static_cast<std::size_t>(common);
  std::vector<double> expanded;
  expanded.reserve(count);
  for (std::size_t a : order)
    for (long long c = 0; c < counts[a]; ++c) expanded.push_back(values[a]);

  DiscreteExact out;
  out.expanded_count = count;

  // Empirical-tail formulas applied verbatim to the expanded multiset; this
  // is the bitwise contract with es() on a sample set holding the same
  // values.
  const long rank = quantile_rank(alpha, count);
  const double q = expanded[static_cast<std::size_t>(rank - 1)];
  const std::size_t k0 = static_cast<std::size_t>(
      std::lower_bound(expanded.begin(), expanded.end(), q) - expanded.begin() + 1);
  const double nd = static_cast<double>(count);
  const double tail_prob = static_cast<double>(count - k0 + 1) / nd;
  const double atom_mass = tail_prob - (1.0 - alpha);
  NeumaierSum tail;
  for (std::size_t pos = k0; pos <= count; ++pos) tail.add(expanded[pos - 1]);
  const double t = tail.value() / nd;
  out.q = q;
  out.atom = atom_mass;
  out.es = (t - q * atom_mass) / (1.0 - alpha);

  NeumaierSum qi;
  for (std::size_t pos = static_cast<std::size_t>(rank); pos <= count; ++pos) {
    const double hi = static_cast<double>(pos) / nd;
    const double lo = std::max(alpha, static_cast<double>(pos - 1) / nd);
    qi.add(expanded[pos - 1] * (hi - lo));
  }
  out.es_quantile_integral = qi.value() / (1.0 - alpha);

  // d^n ES: tail expectation of the pathwise derivative minus the quantile
  // atom's own derivative weighted by the excess tail mass. The finite-law
  // quantile locally follows its atom, so that derivative is exact.
  NeumaierSum tail_deriv;
  for (std::size_t a : order)
    if (values[a] >= q) tail_deriv.add(atoms->at(a).probability * derivs[a]);
  std::size_t quantile_atom = order[0];
  for (std::size_t a : order)
    if (values[a] == q) {
      quantile_atom = a;
      break;
    }
  out.es_derivative =
      (tail_deriv.value() - derivs[quantile_atom] * atom_mass) / (1.0 - alpha);

  // Conditional quantities on {L = 0}, plain left-to-right in original atom
  // order (the bitwise contract with the discrete conditional estimator).
  double level_mass = 0.0, num = 0.0, num_abs = 0.0, num_zero = 0.0;
  for (std::size_t a = 0; a < atoms->size(); ++a) {
    if (std::fabs(values[a]) > 1e-12) continue;
    const double w = atoms->at(a).probability;
    level_mass += w;
    num += w * derivs[a];
    num_abs += w * std::fabs(derivs[a]);
    if (std::fabs(derivs[a]) <= 1e-12) num_zero += w;
  }
  out.level_set_mass = level_mass;
  if (level_mass > 0.0) {
    out.conditional_mean = num / level_mass;
    out.conditional_abs_mean = num_abs / level_mass;
    out.conditional_prob_zero = num_zero / level_mass;
  }
  return out;
}

FdResult fd_of_mc_es(const LossModel& model, std::span<const double> x, double alpha,
                     int i, int n, double h, std::size_t count, std::uint64_t seed,
                     unsigned threads) {
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  if (i < 1 || static_cast<std::size_t>(i) > model.dim())
    throw std::invalid_argument("axis out of range");
  if (n != 1 && n != 2)
    throw std::invalid_argument("central finite difference supports orders 1 and 2");
  if (!(h > 0.0)) throw std::invalid_argument("step must be positive");
  constexpr std::size_t kBlocks = 100;
  if (count < 2 * kBlocks)
    throw std::invalid_argument("need at least 200 samples for block standard errors");

  std::vector<double> xp(x.begin(), x.end());
  xp[static_cast<std::size_t>(i - 1)] += h;
  std::vector<double> xm(x.begin(), x.end());
  xm[static_cast<std::size_t>(i - 1)] -= h;

  const std::vector<double> up = losses_at(model, xp, count, seed, threads);
  const std::vector<double> down = losses_at(model, xm, count, seed, threads);
  std::vector<double> center;
  if (n == 2) center = losses_at(model, x, count, seed, threads);

  const double es_up = es_from_losses(up, alpha).es;
  const double es_down = es_from_losses(down, alpha).es;
  double es_center = 0.0;
  if (n == 2) es_center = es_from_losses(center, alpha).es;

  FdResult out;
  out.step = h;
  if (n == 1) {
    out.value = (es_up - es_down) / (2.0 * h);
    out.degenerate = es_up == es_down;
  } else {
    out.value = (es_up - 2.0 * es_center + es_down) / (h * h);
    out.degenerate = es_up == es_center && es_center == es_down;
  }

  // Each block re-estimates the quotient with its own block-local quantiles;
  // the spread across blocks prices both tail noise and quantile noise.
  std::vector<double> quotients;
  quotients.reserve(kBlocks);
  for (std::size_t b = 0; b < kBlocks; ++b) {
    const std::size_t lo = count * b / kBlocks;
    const std::size_t hi = count * (b + 1) / kBlocks;
    const std::vector<double> bu(up.begin() + lo, up.begin() + hi);
    const std::vector<double> bd(down.begin() + lo, down.begin() + hi);
    const double eu = es_from_losses(bu, alpha).es;
    const double ed = es_from_losses(bd, alpha).es;
    if (n == 1) {
      quotients.push_back((eu - ed) / (2.0 * h));
    } else {
      const std::vector<double> bc(center.begin() + lo, center.begin() + hi);
      const double ec = es_from_losses(bc, alpha).es;
      quotients.push_back((eu - 2.0 * ec + ed) / (h * h));
    }
  }
  out.standard_error =
      std::sqrt(sample_variance(quotients) / static_cast<double>(kBlocks));
  return out;
}

}  // namespace riskdiff
