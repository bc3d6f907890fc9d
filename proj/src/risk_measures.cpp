#include "riskdiff/risk_measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

#include "riskdiff/errors.hpp"
#include "riskdiff/numerics.hpp"

namespace riskdiff {

std::string to_string(EsMode mode) {
  switch (mode) {
    case EsMode::continuous_eq319: return "continuous_eq319";
    case EsMode::general_eq304: return "general_eq304";
  }
  throw std::logic_error("unknown ES mode");
}

nlohmann::json TailEstimate::to_json() const {
  nlohmann::json deriv = nullptr;
  if (derivative) {
    deriv = nlohmann::json{{"i", derivative->i},
                           {"n", derivative->n},
                           {"value", derivative->value},
                           {"stderr", derivative->stderr_}};
  }
  return nlohmann::json{{"alpha", alpha}, {"var", var},
                        {"es", es},       {"atom", atom},
                        {"derivative", std::move(deriv)}, {"mode", to_string(mode)}};
}

long quantile_rank(double alpha, std::size_t n) {
  if (n == 0) throw std::invalid_argument("quantile of an empty sample");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::domain_error("alpha must lie strictly inside (0, 1)");
  const long k =
      static_cast<long>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
  return std::clamp(k, 1L, static_cast<long>(n));
}

double empirical_quantile(std::vector<double> values, double alpha) {
  const long k = quantile_rank(alpha, values.size());
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
  return values[static_cast<std::size_t>(k - 1)];
}

namespace {

void check_sorted_index(const SampleSet& set) {
  if (set.count == 0 || set.losses.size() != set.count ||
      set.sorted_index.size() != set.count)
    throw std::invalid_argument("sample set is empty or missing its sorted index");
}

struct TailScan {
  long rank = 1;     // 1-based order-statistic rank of the quantile
  std::size_t k0 = 1;  // first 1-based sorted position with L >= q
  double q = 0.0;
  double atom = 0.0;  // tail probability in excess of 1 - alpha
};

// Shared between es(), es_derivative() and the exact discrete oracle: the
// formula shape here is the bitwise contract both sides satisfy.
TailScan scan_tail(const SampleSet& set, double alpha) {
  check_sorted_index(set);
  const std::size_t n = set.count;
  TailScan ts;
  ts.rank = quantile_rank(alpha, n);
  ts.q = set.losses[set.sorted_index[static_cast<std::size_t>(ts.rank - 1)]];
  std::size_t lo = 0, hi = static_cast<std::size_t>(ts.rank - 1);
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (set.losses[set.sorted_index[mid]] >= ts.q)
      hi = mid;
    else
      lo = mid + 1;
  }
  ts.k0 = lo + 1;
  const double tail_prob =
      static_cast<double>(n - ts.k0 + 1) / static_cast<double>(n);
  ts.atom = tail_prob - (1.0 - alpha);
  return ts;
}

}  // namespace

double var(const SampleSet& set, double alpha) {
  check_sorted_index(set);
  const long k = quantile_rank(alpha, set.count);
  return set.losses[set.sorted_index[static_cast<std::size_t>(k - 1)]];
}

TailEstimate es(const SampleSet& set, double alpha) {
  const TailScan ts = scan_tail(set, alpha);
  const std::size_t n = set.count;
  NeumaierSum tail;
  std::vector<double> tail_values;
  tail_values.reserve(n - ts.k0 + 1);
  for (std::size_t pos = ts.k0; pos <= n; ++pos) {
    const double v = set.losses[set.sorted_index[pos - 1]];
    tail.add(v);
    tail_values.push_back(v);
  }
  const double t = tail.value() / static_cast<double>(n);

  TailEstimate est;
  est.alpha = alpha;
  est.var = ts.q;
  est.atom = ts.atom;
  est.es = (t - ts.q * est.atom) / (1.0 - alpha);
  est.standard_error = std::sqrt(sample_variance(tail_values) /
                                 ((1.0 - alpha) * (1.0 - alpha) * static_cast<double>(n)));
  est.mode = EsMode::general_eq304;
  return est;
}

double es_quantile_integral(const SampleSet& set, double alpha) {
  check_sorted_index(set);
  const std::size_t n = set.count;
  const long k = quantile_rank(alpha, n);
  const double nd = static_cast<double>(n);
  NeumaierSum s;
  for (std::size_t pos = static_cast<std::size_t>(k); pos <= n; ++pos) {
    const double hi = static_cast<double>(pos) / nd;
    const double lo = std::max(alpha, static_cast<double>(pos - 1) / nd);
    s.add(set.losses[set.sorted_index[pos - 1]] * (hi - lo));
  }
  return s.value() / (1.0 - alpha);
}

TailEstimate es_from_losses(std::vector<double> losses, double alpha) {
  SampleSet set;
  set.count = losses.size();
  set.losses = std::move(losses);
  set.sorted_index = make_sorted_index(set.losses);
  return es(set, alpha);
}

TailEstimate es_derivative(const LossModel& model, std::span<const double> x,
                           double alpha, int i, int n_order, const SampleSet& set,
                           EsMode mode, long quantile_fd_m, unsigned threads) {
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  if (i < 1 || static_cast<std::size_t>(i) > model.dim())
    throw std::invalid_argument("axis out of range");
  if (n_order < 1) throw std::invalid_argument("derivative order must be >= 1");
  if (quantile_fd_m < 4)
    throw std::invalid_argument("quantile_fd_m must be >= 4");
  const std::vector<double>& col = set.deriv_column(i, n_order);

  TailEstimate est = es(set, alpha);
  const TailScan ts = scan_tail(set, alpha);
  const std::size_t n = set.count;

  NeumaierSum dsum;
  std::vector<double> tail_derivs;
  tail_derivs.reserve(n - ts.k0 + 1);
  for (std::size_t pos = ts.k0; pos <= n; ++pos) {
    const double v = col[set.sorted_index[pos - 1]];
    dsum.add(v);
    tail_derivs.push_back(v);
  }
  const double continuous_part =
      dsum.value() / static_cast<double>(n) / (1.0 - alpha);
  const double se =
      std::sqrt(sample_variance(tail_derivs) /
                ((1.0 - alpha) * (1.0 - alpha) * static_cast<double>(n)));

  double value = continuous_part;
  est.quantile_dd_stable = true;
  if (mode == EsMode::general_eq304) {
    // The quantile's own derivative enters scaled by the empirical tail
    // atom; it is taken by a forward divided difference of the empirical
    // quantile under common random numbers, with stability judged across
    // the m-schedule ending at quantile_fd_m.
    const WeightFunction qfun = [&](std::span<const double> xp) {
      return empirical_quantile(losses_at(model, xp, n, set.seed, threads), alpha);
    };
    const long schedule[] = {quantile_fd_m / 4, quantile_fd_m / 2, quantile_fd_m};
    const ConvergenceTable table = convergence_table(qfun, x, i, n_order, schedule);
    const double dq = table.rows.back().estimate;
    est.quantile_dd_stable = table.stable;
    value = continuous_part - dq * ts.atom / (1.0 - alpha);
  }

  est.mode = mode;
  est.derivative = DerivativeEstimate{i, n_order, value, se};
  return est;
}

VarDerivative var_derivative(const SampleSet& set, double alpha, int i,
                             double epsilon) {
  const std::vector<double>& col = set.deriv_column(i, 1);
  check_sorted_index(set);
  const std::size_t n = set.count;
  const double q = var(set, alpha);
  double eps = epsilon;
  if (eps <= 0.0)
    eps = std::sqrt(sample_variance(set.losses)) *
          std::pow(static_cast<double>(n), -1.0 / 3.0);

  std::vector<double> band;
  for (std::size_t j = 0; j < n; ++j)
    if (std::fabs(set.losses[j] - q) <= eps) band.push_back(col[j]);
  if (band.size() < 30)
    throw insufficient_data_error(
        "VaR-derivative band |L - q| <= " + std::to_string(eps) + " holds only " +
        std::to_string(band.size()) + " samples (need 30)");

  VarDerivative out;
  out.value = mean(band);
  out.standard_error =
      std::sqrt(sample_variance(band) / static_cast<double>(band.size()));
  out.epsilon = eps;
  out.count = band.size();
  return out;
}

MonotonicityReport tail_monotonicity_diagnostic(const LossModel& model,
                                                std::span<const double> x, double alpha,
                                                int i, const SampleSet& set,
                                                std::span<const long> probe_ms,
                                                double threshold, double epsilon,
                                                unsigned threads) {
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  if (i < 1 || static_cast<std::size_t>(i) > model.dim())
    throw std::invalid_argument("axis out of range");
  check_sorted_index(set);
  const std::size_t n = set.count;
  const double q = var(set, alpha);

  MonotonicityReport report;
  report.threshold = threshold;
  if (probe_ms.empty())
    report.probe_ms = {8, 16, 32, 64};
  else
    report.probe_ms.assign(probe_ms.begin(), probe_ms.end());

  double eps = epsilon;
  if (eps <= 0.0)
    eps = std::sqrt(sample_variance(set.losses)) *
          std::pow(static_cast<double>(n), -1.0 / 3.0) / 8.0;
  report.epsilon = eps;

  std::vector<std::size_t> members;
  for (std::size_t j = 0; j < n; ++j)
    if (std::fabs(set.losses[j] - q) <= eps) members.push_back(j);
  if (members.empty())
    throw insufficient_data_error("no samples within epsilon of the quantile");
  report.band_count = members.size();

  // A member violates the premise when the perturbation pushes it below its
  // own centered level H = L - q: such samples cross out of the tail, which
  // is exactly what the tail-indicator derivative estimators assume away.
  std::vector<char> violated(members.size(), 0);
  std::vector<double> xp(x.begin(), x.end());
  for (long m : report.probe_ms) {
    xp[static_cast<std::size_t>(i - 1)] =
        x[static_cast<std::size_t>(i - 1)] + 1.0 / static_cast<double>(m);
    const std::vector<double> losses = losses_at(model, xp, n, set.seed, threads);
    std::vector<double> copy = losses;
    const double q_p = empirical_quantile(std::move(copy), alpha);
    for (std::size_t k = 0; k < members.size(); ++k) {
      const std::size_t j = members[k];
      const double h_base = set.losses[j] - q;
      const double h_pert = losses[j] - q_p;
      if (h_pert < h_base - 1e-12) violated[k] = 1;
    }
  }
  std::size_t count = 0;
  for (char v : violated) count += static_cast<std::size_t>(v);
  report.violation_fraction =
      static_cast<double>(count) / static_cast<double>(members.size());
  report.pass = report.violation_fraction <= threshold;
  return report;
}

nlohmann::json EulerReport::to_json() const {
  return nlohmann::json{{"contributions", contributions},
                        {"total", total},
                        {"es", es},
                        {"relative_residual", relative_residual}};
}

EulerReport euler_allocation(const LossModel& model, std::span<const double> x,
                             double alpha, const SampleSet& set, unsigned threads) {
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  bool any = false;
  for (double xi : x) any = any || xi != 0.0;
  if (!any) throw std::invalid_argument("Euler allocation needs a non-zero x");
  const auto degree = model.homogeneity_degree();
  if (!degree || *degree != 1.0)
    throw not_applicable_error(
        "Euler allocation requires declared homogeneity degree 1");

  const EsMode mode = model.continuity() == LawType::absolutely_continuous
                          ? EsMode::continuous_eq319
                          : EsMode::general_eq304;
  const TailEstimate base = es(set, alpha);

  EulerReport report;
  report.es = base.es;
  NeumaierSum total;
  for (std::size_t i = 0; i < model.dim(); ++i) {
    const TailEstimate de = es_derivative(model, x, alpha, static_cast<int>(i) + 1, 1,
                                          set, mode, 64, threads);
    const double contribution = x[i] * de.derivative->value;
    report.contributions.push_back(contribution);
    total.add(contribution);
  }
  report.total = total.value();
  report.relative_residual = base.es != 0.0
                                 ? std::fabs(report.total - base.es) / std::fabs(base.es)
                                 : std::fabs(report.total);
  return report;
}

}  // namespace riskdiff
