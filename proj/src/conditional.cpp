#include "riskdiff/conditional.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>

#include "riskdiff/errors.hpp"
#include "riskdiff/risk_measures.hpp"
#include "riskdiff/rng.hpp"
#include "riskdiff/sampling.hpp"

namespace riskdiff {

namespace {

constexpr double kProbeTol = 1e-12;

void validate_query_arrays(const LevelSetQuery& query) {
  if (query.H_samples.empty())
    throw std::invalid_argument("LevelSetQuery: H_samples must be non-empty");
  if (query.g_samples.size() != query.H_samples.size())
    throw std::invalid_argument("LevelSetQuery: H_samples and g_samples differ in length");
  for (double h : query.H_samples)
    if (!std::isfinite(h)) throw std::invalid_argument("LevelSetQuery: non-finite H sample");
  for (double g : query.g_samples)
    if (!std::isfinite(g)) throw std::invalid_argument("LevelSetQuery: non-finite g sample");
}

void validate_schedule(std::span<const double> schedule) {
  if (schedule.empty())
    throw std::invalid_argument("band schedule must be non-empty");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    if (!(schedule[k] > 0.0) || !std::isfinite(schedule[k]))
      throw std::invalid_argument("band schedule entries must be positive and finite");
    if (k > 0 && !(schedule[k] < schedule[k - 1]))
      throw std::invalid_argument("band schedule must be strictly decreasing");
  }
}

bool in_band(double h, double eps, bool symmetric) {
  if (symmetric) return std::fabs(h) <= eps;
  return h >= 0.0 && h <= 2.0 * eps;
}

struct BandStats {
  std::size_t count = 0;
  double mean = 0.0;
  double abs_mean = 0.0;
  double se = 0.0;
  double abs_se = 0.0;
  double zero_fraction = 0.0;
};

// Two-pass mean/variance over the band members, index order fixed.
BandStats band_stats(std::span<const double> H, std::span<const double> g, double eps,
                     bool symmetric, double zero_tol) {
  BandStats st;
  NeumaierSum sum, abs_sum;
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < H.size(); ++j) {
    if (!in_band(H[j], eps, symmetric)) continue;
    ++st.count;
    sum.add(g[j]);
    abs_sum.add(std::fabs(g[j]));
    if (std::fabs(g[j]) <= zero_tol) ++zeros;
  }
  if (st.count == 0) return st;
  const double n = static_cast<double>(st.count);
  st.mean = sum.value() / n;
  st.abs_mean = abs_sum.value() / n;
  st.zero_fraction = static_cast<double>(zeros) / n;
  if (st.count >= 2) {
    NeumaierSum sq, abs_sq;
    for (std::size_t j = 0; j < H.size(); ++j) {
      if (!in_band(H[j], eps, symmetric)) continue;
      const double d = g[j] - st.mean;
      sq.add(d * d);
      const double da = std::fabs(g[j]) - st.abs_mean;
      abs_sq.add(da * da);
    }
    st.se = std::sqrt(std::max(0.0, sq.value() / (n - 1.0)) / n);
    st.abs_se = std::sqrt(std::max(0.0, abs_sq.value() / (n - 1.0)) / n);
  }
  return st;
}

// alpha-quantile of a finite law given (value, probability) atoms: smallest
// value whose cumulative probability reaches alpha (same 1e-9 slack as the
// empirical rank rule).
double weighted_quantile(std::vector<std::pair<double, double>> atoms, double alpha) {
  std::sort(atoms.begin(), atoms.end());
  double cum = 0.0;
  for (const auto& [value, prob] : atoms) {
    cum += prob;
    if (cum >= alpha - 1e-9) return value;
  }
  return atoms.back().first;
}

struct ProbeOutcome {
  double fraction = 0.0;
  bool ran = false;
};

// Violation bookkeeping for one probed point. The premise asks for
// H(x + delta e_i) <= H(x), with |H| decreasing as an alternative reading;
// a point only counts as violating once every probe step breaks both.
struct ProbeCheck {
  double base_h = 0.0;
  bool viol_h = false;
  bool viol_abs = false;
  void start(double h) { base_h = h; }
  void step(double h) {
    if (h > base_h + kProbeTol) viol_h = true;
    if (std::fabs(h) > std::fabs(base_h) + kProbeTol) viol_abs = true;
  }
  bool violated() const { return viol_h && viol_abs; }
};

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::premise_failed: return "premise_failed";
  }
  throw std::logic_error("unknown verdict");
}

nlohmann::json LevelSetReport::to_json() const {
  nlohmann::json bands_json = nlohmann::json::array();
  for (const BandRow& b : bands) {
    nlohmann::json row;
    row["epsilon"] = b.epsilon;
    row["count"] = b.count;
    if (b.usable)
      row["mean"] = b.mean;
    else
      row["mean"] = nullptr;
    bands_json.push_back(std::move(row));
  }
  return nlohmann::json{{"estimate", estimate},
                        {"abs_estimate", abs_estimate},
                        {"prob_zero_deriv", prob_zero_deriv},
                        {"conditioning_mass", conditioning_mass},
                        {"standard_error", standard_error},
                        {"verdict", to_string(verdict)},
                        {"premise_violation_fraction", premise_violation_fraction},
                        {"bands", std::move(bands_json)}};
}

LevelSetReport conditional_expectation_discrete(const LevelSetQuery& query,
                                                const LevelSetConfig& config) {
  validate_query_arrays(query);
  if (query.law != ConditioningLaw::discrete)
    throw std::invalid_argument("discrete estimator requires a discrete conditioning law");
  const std::size_t n = query.H_samples.size();
  if (!query.atom_weights.empty()) {
    if (query.atom_weights.size() != n)
      throw std::invalid_argument("atom_weights length does not match samples");
    for (double w : query.atom_weights)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw std::invalid_argument("atom_weights must be non-negative and finite");
  }

  // Plain left-to-right accumulation: an independent brute-force loop over
  // the same atoms reproduces every ratio bitwise.
  double total_weight = 0.0;
  double level_weight = 0.0;
  double num = 0.0;
  double num_abs = 0.0;
  double num_zero = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double w = query.atom_weights.empty() ? 1.0 : query.atom_weights[j];
    total_weight += w;
    if (std::fabs(query.H_samples[j]) > config.zero_tol) continue;
    level_weight += w;
    const double g = query.g_samples[j];
    num += w * g;
    num_abs += w * std::fabs(g);
    if (std::fabs(g) <= config.zero_tol) num_zero += w;
  }
  if (!(total_weight > 0.0))
    throw std::invalid_argument("atom_weights sum to zero");
  if (!(level_weight > 0.0))
    throw conditioning_mass_error("level set {H = 0} carries zero probability mass");

  LevelSetReport report;
  report.estimate = num / level_weight;
  report.abs_estimate = num_abs / level_weight;
  report.prob_zero_deriv = num_zero / level_weight;
  report.conditioning_mass = level_weight / total_weight;
  report.standard_error = 0.0;
  const bool pass = std::fabs(report.estimate) <= config.zero_tol &&
                    report.abs_estimate <= config.zero_tol &&
                    report.prob_zero_deriv >= 1.0 - config.zero_tol;
  report.verdict = pass ? Verdict::pass : Verdict::fail;
  return report;
}

LevelSetReport conditional_expectation_banded(const LevelSetQuery& query,
                                              const LevelSetConfig& config) {
  validate_query_arrays(query);
  if (query.law != ConditioningLaw::absolutely_continuous)
    throw std::invalid_argument("banded estimator requires an absolutely continuous law");
  const bool symmetric = config.symmetric_bands;
  const std::span<const double> H(query.H_samples);
  const std::span<const double> g(query.g_samples);
  const std::size_t n = H.size();

  // Degenerate laws come first, before the schedule is even looked at: a
  // constant H is either the whole space (H = 0) or an empty level set.
  double h_min = H[0], h_max = H[0];
  for (double h : H) {
    h_min = std::min(h_min, h);
    h_max = std::max(h_max, h);
  }
  if (h_max - h_min <= config.zero_tol) {
    if (std::fabs(h_min) > config.zero_tol && std::fabs(h_max) > config.zero_tol)
      throw conditioning_mass_error(
          "H is constant away from zero; the level set {H = 0} carries no mass");
    const BandStats st = band_stats(H, g, std::numeric_limits<double>::infinity(),
                                    true, config.zero_tol);
    LevelSetReport report;
    report.estimate = st.mean;
    report.abs_estimate = std::max(st.abs_mean, std::fabs(st.mean));
    report.prob_zero_deriv = st.zero_fraction;
    report.conditioning_mass = 1.0;
    report.standard_error = st.se;
    const bool pass =
        std::fabs(report.estimate) <= std::max(3.0 * st.se, config.verdict_atol) &&
        report.abs_estimate <= std::max(3.0 * st.abs_se, config.verdict_atol);
    report.verdict = pass ? Verdict::pass : Verdict::fail;
    report.bands.push_back({0.0, n, st.mean, true});
    return report;
  }

  validate_schedule(query.band_schedule);

  LevelSetReport report;
  std::vector<BandStats> usable;
  std::vector<double> usable_eps;
  for (double eps : query.band_schedule) {
    const BandStats st = band_stats(H, g, eps, symmetric, config.zero_tol);
    const bool ok = st.count >= config.min_band_count;
    report.bands.push_back({eps, st.count, st.mean, ok});
    if (ok) {
      usable.push_back(st);
      usable_eps.push_back(eps);
    }
  }

  if (usable.empty()) {
    // Report the epsilon that would have admitted the minimum count, so the
    // caller can widen the schedule deliberately.
    std::vector<double> reach;
    reach.reserve(n);
    for (double h : H) {
      if (symmetric)
        reach.push_back(std::fabs(h));
      else if (h >= 0.0)
        reach.push_back(h);
    }
    if (reach.size() < config.min_band_count)
      throw insufficient_data_error(
          "fewer than " + std::to_string(config.min_band_count) +
          " samples lie on the conditioning side of the level set");
    std::nth_element(reach.begin(), reach.begin() + (config.min_band_count - 1),
                     reach.end());
    const double h_needed = reach[config.min_band_count - 1];
    const double eps_needed = symmetric ? h_needed : h_needed / 2.0;
    throw insufficient_data_error(
        "every band holds fewer than " + std::to_string(config.min_band_count) +
        " samples; smallest workable epsilon is " + std::to_string(eps_needed));
  }

  double se_abs_final = 0.0;
  double abs_extrap = 0.0;
  if (usable.size() == 1) {
    report.estimate = usable[0].mean;
    report.standard_error = usable[0].se;
    abs_extrap = usable[0].abs_mean;
    se_abs_final = usable[0].abs_se;
  } else {
    // Linear extrapolation to eps = 0 through the last two usable bands.
    // The bands are nested, so treating their errors as independent slightly
    // overstates the combined standard error.
    const BandStats& coarse = usable[usable.size() - 2];
    const BandStats& fine = usable[usable.size() - 1];
    const double eps_c = usable_eps[usable_eps.size() - 2];
    const double eps_f = usable_eps[usable_eps.size() - 1];
    const double w_f = eps_c / (eps_c - eps_f);
    const double w_c = -eps_f / (eps_c - eps_f);
    report.estimate = w_f * fine.mean + w_c * coarse.mean;
    report.standard_error =
        std::sqrt(w_f * w_f * fine.se * fine.se + w_c * w_c * coarse.se * coarse.se);
    abs_extrap = w_f * fine.abs_mean + w_c * coarse.abs_mean;
    se_abs_final = std::sqrt(w_f * w_f * fine.abs_se * fine.abs_se +
                             w_c * w_c * coarse.abs_se * coarse.abs_se);
  }
  const BandStats& finest = usable.back();
  // E|g| >= |Eg| must survive the extrapolation, and an exactly zero
  // abs_estimate must keep implying a zero integrand: extrapolation weights
  // of opposite sign could otherwise cancel two nonzero band means to zero.
  report.abs_estimate = std::max({abs_extrap, std::fabs(report.estimate), 0.0});
  if (report.abs_estimate == 0.0 && finest.abs_mean != 0.0)
    report.abs_estimate = finest.abs_mean;
  report.prob_zero_deriv = finest.zero_fraction;
  report.conditioning_mass = static_cast<double>(finest.count) / static_cast<double>(n);

  const bool pass =
      std::fabs(report.estimate) <=
          std::max(3.0 * report.standard_error, config.verdict_atol) &&
      report.abs_estimate <= std::max(3.0 * se_abs_final, config.verdict_atol);
  report.verdict = pass ? Verdict::pass : Verdict::fail;
  return report;
}

std::vector<double> default_band_schedule(std::span<const double> H) {
  if (H.empty()) throw std::invalid_argument("default_band_schedule: empty sample");
  const double sd = std::sqrt(sample_variance(H));
  const double base = sd * std::pow(static_cast<double>(H.size()), -1.0 / 3.0);
  return {base, base / 2.0, base / 4.0, base / 8.0};
}

namespace {

// Exact premise probe over level-set atoms: follows each atom's H value
// along x + e_i/m for increasing m and checks monotone decrease.
ProbeOutcome atom_premise_probe(const LossModel& model, std::span<const double> x, int i,
                                bool centered, double alpha,
                                const std::vector<DiscreteAtom>& atoms,
                                std::span<const double> base_H,
                                std::span<const long> probe_ms, double zero_tol) {
  ProbeOutcome out;
  if (probe_ms.empty()) return out;
  std::vector<std::size_t> members;
  for (std::size_t a = 0; a < atoms.size(); ++a)
    if (std::fabs(base_H[a]) <= zero_tol) members.push_back(a);
  if (members.empty()) return out;

  std::vector<ProbeCheck> checks(members.size());
  for (std::size_t k = 0; k < members.size(); ++k) checks[k].start(base_H[members[k]]);
  std::vector<double> xp(x.begin(), x.end());
  for (long m : probe_ms) {
    xp[static_cast<std::size_t>(i - 1)] =
        x[static_cast<std::size_t>(i - 1)] + 1.0 / static_cast<double>(m);
    double q = 0.0;
    if (centered) {
      std::vector<std::pair<double, double>> vp;
      vp.reserve(atoms.size());
      for (const DiscreteAtom& atom : atoms)
        vp.emplace_back(model.evaluate(xp, atom.sample), atom.probability);
      q = weighted_quantile(std::move(vp), alpha);
    }
    for (std::size_t k = 0; k < members.size(); ++k)
      checks[k].step(model.evaluate(xp, atoms[members[k]].sample) - q);
  }

  double level_mass = 0.0, violating = 0.0;
  for (std::size_t k = 0; k < members.size(); ++k) {
    const double p = atoms[members[k]].probability;
    level_mass += p;
    if (checks[k].violated()) violating += p;
  }
  out.ran = true;
  out.fraction = level_mass > 0.0 ? violating / level_mass : 0.0;
  return out;
}

// Sampled premise probe: the level-set neighbourhood is re-evaluated at
// x + e_i/m under common random numbers; for the centered statistic the
// perturbed quantile is re-estimated from the full perturbed sample.
ProbeOutcome sampled_premise_probe(const LossModel& model, std::span<const double> x,
                                   int i, bool centered, double alpha,
                                   const SampleSet& set, std::span<const double> base_H,
                                   bool level_is_atoms, double zero_tol,
                                   std::span<const long> probe_ms, unsigned threads) {
  ProbeOutcome out;
  if (probe_ms.empty()) return out;
  const std::size_t n = set.count;

  std::vector<std::size_t> members;
  if (level_is_atoms) {
    for (std::size_t j = 0; j < n; ++j)
      if (std::fabs(base_H[j]) <= zero_tol) members.push_back(j);
  } else {
    // The 5% of samples nearest the level set stand in for it.
    std::vector<double> abs_h(base_H.begin(), base_H.end());
    for (double& h : abs_h) h = std::fabs(h);
    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n))));
    std::vector<double> scratch = abs_h;
    std::nth_element(scratch.begin(), scratch.begin() + (want - 1), scratch.end());
    const double thr = scratch[want - 1];
    for (std::size_t j = 0; j < n; ++j)
      if (abs_h[j] <= thr) members.push_back(j);
  }
  if (members.empty()) return out;

  std::vector<ProbeCheck> checks(members.size());
  for (std::size_t k = 0; k < members.size(); ++k) checks[k].start(base_H[members[k]]);
  std::vector<double> xp(x.begin(), x.end());
  for (long m : probe_ms) {
    xp[static_cast<std::size_t>(i - 1)] =
        x[static_cast<std::size_t>(i - 1)] + 1.0 / static_cast<double>(m);
    std::vector<double> losses = losses_at(model, xp, n, set.seed, threads);
    const double q = centered ? empirical_quantile(losses, alpha) : 0.0;
    for (std::size_t k = 0; k < members.size(); ++k)
      checks[k].step(losses[members[k]] - q);
  }

  std::size_t violating = 0;
  for (const ProbeCheck& c : checks)
    if (c.violated()) ++violating;
  out.ran = true;
  out.fraction =
      static_cast<double>(violating) / static_cast<double>(members.size());
  return out;
}

}  // namespace

LevelSetReport verify_proposition1(const LossModel& model, std::span<const double> x,
                                   int i, int n, const Prop1Config& config) {
  if (x.size() != model.dim())
    throw std::invalid_argument("x dimension does not match model");
  if (i < 1 || static_cast<std::size_t>(i) > model.dim())
    throw std::invalid_argument("axis out of range");
  if (n < 1) throw std::invalid_argument("derivative order must be >= 1");

  LevelSetReport report;
  ProbeOutcome probe;

  const auto atoms = model.atom_support();
  if (atoms) {
    // Finite law: exact enumeration, no sampling error anywhere.
    std::vector<double> H(atoms->size());
    std::vector<double> g(atoms->size());
    std::vector<double> w(atoms->size());
    double q = 0.0;
    double dq = 0.0;
    if (config.center_at_quantile) {
      std::vector<std::pair<double, double>> vp;
      vp.reserve(atoms->size());
      for (const DiscreteAtom& atom : *atoms)
        vp.emplace_back(model.evaluate(x, atom.sample), atom.probability);
      q = weighted_quantile(std::move(vp), config.alpha);
      // The finite-law quantile locally follows its atom, so the centered
      // statistic's derivative subtracts that atom's pathwise derivative.
      for (const DiscreteAtom& atom : *atoms) {
        if (model.evaluate(x, atom.sample) == q) {
          dq = model.pathwise_derivative(x, atom.sample, i, n);
          break;
        }
      }
    }
    for (std::size_t a = 0; a < atoms->size(); ++a) {
      H[a] = model.evaluate(x, (*atoms)[a].sample) - q;
      g[a] = model.pathwise_derivative(x, (*atoms)[a].sample, i, n) - dq;
      w[a] = (*atoms)[a].probability;
    }
    LevelSetQuery query;
    query.H_samples = H;
    query.g_samples = g;
    query.law = ConditioningLaw::discrete;
    query.atom_weights = w;
    report = conditional_expectation_discrete(query, config.level);
    probe = atom_premise_probe(model, x, i, config.center_at_quantile, config.alpha,
                               *atoms, H, config.probe_ms, config.level.zero_tol);
  } else {
    const std::pair<int, int> order{i, n};
    const SampleSet set =
        draw(model, x, config.sample_count, config.seed, {&order, 1}, config.threads);
    std::vector<double> H = set.losses;
    std::vector<double> g = set.deriv_column(i, n);
    if (config.center_at_quantile) {
      const double q = empirical_quantile(H, config.alpha);
      for (double& h : H) h -= q;
      // The centered statistic's derivative is the pathwise derivative minus
      // the quantile's, taken by a divided difference under common random
      // numbers.
      const WeightFunction qfun = [&](std::span<const double> xp) {
        return empirical_quantile(losses_at(model, xp, set.count, set.seed, config.threads),
                                  config.alpha);
      };
      const double dq = divided_difference(qfun, x, i, n, 64);
      for (double& v : g) v -= dq;
    }
    LevelSetQuery query;
    query.H_samples = H;
    query.g_samples = std::move(g);
    const bool discrete_law = model.continuity() == LawType::discrete;
    if (discrete_law) {
      query.law = ConditioningLaw::discrete;
      report = conditional_expectation_discrete(query, config.level);
    } else {
      query.law = ConditioningLaw::absolutely_continuous;
      query.band_schedule = config.band_schedule.empty() ? default_band_schedule(H)
                                                         : config.band_schedule;
      report = conditional_expectation_banded(query, config.level);
    }
    probe = sampled_premise_probe(model, x, i, config.center_at_quantile, config.alpha,
                                  set, H, discrete_law, config.level.zero_tol,
                                  config.probe_ms, config.threads);
  }

  report.premise_violation_fraction = probe.fraction;
  if (probe.ran && probe.fraction > config.premise_threshold)
    report.verdict = Verdict::premise_failed;
  return report;
}

nlohmann::json Lemma1Report::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const Lemma1Row& r : rows) {
    rows_json.push_back({{"m", r.m},
                         {"estimate", r.estimate},
                         {"abs_estimate", r.abs_estimate},
                         {"standard_error", r.standard_error},
                         {"abs_standard_error", r.abs_standard_error}});
  }
  return nlohmann::json{{"pass", pass}, {"rows", std::move(rows_json)}};
}

Lemma1Report lemma1_probe(const FamilyValue& H, const FamilyEvent& A,
                          std::span<const long> m_schedule, std::size_t n_samples,
                          std::uint64_t seed) {
  if (!H || !A) throw std::invalid_argument("lemma1_probe: H and A must be callable");
  if (m_schedule.size() < 3)
    throw std::invalid_argument("lemma1_probe: m schedule needs at least 3 entries");
  for (std::size_t k = 0; k < m_schedule.size(); ++k) {
    if (m_schedule[k] < 1)
      throw std::invalid_argument("lemma1_probe: m schedule entries must be >= 1");
    if (k > 0 && m_schedule[k] <= m_schedule[k - 1])
      throw std::invalid_argument("lemma1_probe: m schedule must be strictly increasing");
  }
  if (n_samples < 2) throw std::invalid_argument("lemma1_probe: need at least 2 samples");

  Lemma1Report report;
  const double nd = static_cast<double>(n_samples);
  for (long m : m_schedule) {
    NeumaierSum s, s2, a, a2;
    for (std::size_t j = 0; j < n_samples; ++j) {
      // One shared uniform per index across the whole schedule (CRN), so
      // nested events A_m shrink deterministically.
      const double u = uniform01(seed, j, 0);
      const double v = A(m, u) ? H(m, u) : 0.0;
      const double av = std::fabs(v);
      s.add(v);
      s2.add(v * v);
      a.add(av);
      a2.add(av * av);
    }
    Lemma1Row row;
    row.m = m;
    row.estimate = s.value() / nd;
    row.abs_estimate = a.value() / nd;
    const double var_s =
        std::max(0.0, (s2.value() - nd * row.estimate * row.estimate) / (nd - 1.0));
    const double var_a = std::max(
        0.0, (a2.value() - nd * row.abs_estimate * row.abs_estimate) / (nd - 1.0));
    row.standard_error = std::sqrt(var_s / nd);
    row.abs_standard_error = std::sqrt(var_a / nd);
    report.rows.push_back(row);
  }

  const Lemma1Row& last = report.rows.back();
  bool pass =
      std::fabs(last.estimate) <= std::max(3.0 * last.standard_error, 1e-3) &&
      last.abs_estimate <= std::max(3.0 * last.abs_standard_error, 1e-3);
  for (std::size_t k = 0; pass && k + 1 < report.rows.size(); ++k) {
    const Lemma1Row& cur = report.rows[k];
    const Lemma1Row& nxt = report.rows[k + 1];
    const double slack = 2.0 * std::sqrt(cur.standard_error * cur.standard_error +
                                         nxt.standard_error * nxt.standard_error);
    const double abs_slack =
        2.0 * std::sqrt(cur.abs_standard_error * cur.abs_standard_error +
                        nxt.abs_standard_error * nxt.abs_standard_error);
    if (std::fabs(nxt.estimate) > std::fabs(cur.estimate) + slack) pass = false;
    if (nxt.abs_estimate > cur.abs_estimate + abs_slack) pass = false;
  }
  report.pass = pass;
  return report;
}

nlohmann::json Prop2Report::to_json() const {
  nlohmann::json d_json = nlohmann::json::array();
  for (std::size_t i = 0; i < d_matrix.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < d_matrix.dim(); ++j) row.push_back(d_matrix(i, j));
    d_json.push_back(std::move(row));
  }
  return nlohmann::json{
      {"homogeneity",
       {{"pass", homogeneity.pass},
        {"max_residual", homogeneity.max_residual},
        {"declared_degree", homogeneity.declared_degree}}},
      {"max_euler_residual", max_euler_residual},
      {"d_matrix", std::move(d_json)},
      {"symmetry_residual", symmetry_residual},
      {"conditional_gradient", conditional_gradient},
      {"conditional_gradient_se", conditional_gradient_se},
      {"euler_weighted_conditional", euler_weighted_conditional},
      {"euler_pass", euler_pass},
      {"symmetry_pass", symmetry_pass},
      {"conclusion_pass", conclusion_pass},
      {"verdict", to_string(verdict)}};
}

namespace {

struct GradientAtPoint {
  std::vector<double> value;
  std::vector<double> se;
};

// Banded conditional gradient of H at weights xp: one coarse band, no
// extrapolation, so the cross-derivative matrix differentiates a statistic
// with manageable noise. For the centered statistic the quantile gradient is
// removed by a forward divided difference under common random numbers.
GradientAtPoint conditional_gradient_at(const LossModel& model,
                                        std::span<const double> xp,
                                        const std::vector<double>& losses,
                                        const Prop2Config& cfg) {
  const std::size_t d = model.dim();
  const std::size_t n = losses.size();

  double q = 0.0;
  if (cfg.center_at_quantile) q = empirical_quantile(losses, cfg.alpha);
  std::vector<double> H(n);
  for (std::size_t j = 0; j < n; ++j) H[j] = losses[j] - q;

  const double sd = std::sqrt(sample_variance(H));
  std::vector<std::size_t> members;
  if (sd == 0.0) {
    if (std::fabs(H[0]) > cfg.level.zero_tol)
      throw conditioning_mass_error(
          "H is constant away from zero; the level set {H = 0} carries no mass");
    members.resize(n);
    for (std::size_t j = 0; j < n; ++j) members[j] = j;
  } else {
    const double eps = cfg.band_epsilon > 0.0
                           ? cfg.band_epsilon
                           : sd * std::pow(static_cast<double>(n), -1.0 / 3.0);
    for (std::size_t j = 0; j < n; ++j)
      if (H[j] >= 0.0 && H[j] <= 2.0 * eps) members.push_back(j);
    if (members.size() < cfg.level.min_band_count)
      throw insufficient_data_error("conditional gradient band holds fewer than " +
                                    std::to_string(cfg.level.min_band_count) +
                                    " samples");
  }

  std::vector<double> dq(d, 0.0);
  if (cfg.center_at_quantile) {
    std::vector<double> xq(xp.begin(), xp.end());
    for (std::size_t i = 0; i < d; ++i) {
      const double h = 1.0 / static_cast<double>(cfg.quantile_fd_m);
      xq[i] = xp[i] + h;
      const double q_up =
          empirical_quantile(losses_at(model, xq, n, cfg.seed, cfg.threads), cfg.alpha);
      dq[i] = (q_up - q) / h;
      xq[i] = xp[i];
    }
  }

  GradientAtPoint out;
  out.value.resize(d);
  out.se.resize(d);
  std::vector<double> g(members.size());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      const PrimitiveSample sample = model.primitive_at(cfg.seed, members[k]);
      g[k] = model.pathwise_derivative(xp, sample, static_cast<int>(i) + 1, 1);
    }
    const double m = mean(g);
    out.value[i] = m - dq[i];
    out.se[i] = members.size() >= 2
                    ? std::sqrt(sample_variance(g) / static_cast<double>(members.size()))
                    : 0.0;
  }
  return out;
}

}  // namespace

Prop2Report verify_proposition2(const LossModel& model, std::span<const double> x,
                                const Prop2Config& config) {
  const std::size_t d = model.dim();
  if (x.size() != d) throw std::invalid_argument("x dimension does not match model");
  const auto degree = model.homogeneity_degree();
  if (!degree || *degree != 1.0)
    throw not_applicable_error(
        "positive homogeneity of degree 1 must be declared for this check");

  Prop2Report report;
  const double scales[] = {0.5, 2.0};
  report.homogeneity =
      homogeneity_check(model, x, scales, config.homogeneity_samples, config.seed);

  std::vector<std::pair<int, int>> orders;
  orders.reserve(d);
  for (std::size_t i = 0; i < d; ++i) orders.emplace_back(static_cast<int>(i) + 1, 1);
  const SampleSet set =
      draw(model, x, config.sample_count, config.seed, orders, config.threads);
  const std::size_t n = set.count;

  // Per-sample Euler identity. The empirical quantile locally follows its
  // rank sample, so the centered statistic's gradient subtracts that
  // sample's pathwise derivative exactly.
  double q = 0.0;
  std::vector<double> rank_deriv(d, 0.0);
  if (config.center_at_quantile) {
    const long rank = quantile_rank(config.alpha, n);
    const std::size_t j_star = set.sorted_index[static_cast<std::size_t>(rank - 1)];
    q = set.losses[j_star];
    for (std::size_t i = 0; i < d; ++i)
      rank_deriv[i] = set.deriv_column(static_cast<int>(i) + 1, 1)[j_star];
  }
  double max_res = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double h = set.losses[j] - q;
    double combo = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      combo += x[i] * (set.deriv_column(static_cast<int>(i) + 1, 1)[j] - rank_deriv[i]);
    max_res = std::max(max_res, std::fabs(h - combo) / (1.0 + std::fabs(h)));
  }
  report.max_euler_residual = max_res;
  report.euler_pass = max_res <= 1e-9;

  const GradientAtPoint base = conditional_gradient_at(model, x, set.losses, config);
  report.conditional_gradient = base.value;
  report.conditional_gradient_se = base.se;

  // A perturbed weight vector can push the level set out of reach (e.g. a
  // deterministic loss whose level set exists only at the base point); such
  // rows are left as NaN and the symmetry check counts as unverifiable.
  report.d_matrix = Matrix(d);
  bool d_complete = true;
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < d; ++i) {
    const double h = 1.0 / static_cast<double>(config.d_step_m);
    xp[i] = x[i] + h;
    try {
      const std::vector<double> losses_p =
          losses_at(model, xp, n, config.seed, config.threads);
      const GradientAtPoint up = conditional_gradient_at(model, xp, losses_p, config);
      for (std::size_t j = 0; j < d; ++j)
        report.d_matrix(i, j) = (up.value[j] - base.value[j]) / h;
    } catch (const conditioning_mass_error&) {
      d_complete = false;
      for (std::size_t j = 0; j < d; ++j)
        report.d_matrix(i, j) = std::numeric_limits<double>::quiet_NaN();
    } catch (const insufficient_data_error&) {
      d_complete = false;
      for (std::size_t j = 0; j < d; ++j)
        report.d_matrix(i, j) = std::numeric_limits<double>::quiet_NaN();
    }
    xp[i] = x[i];
  }
  double sym = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (d_complete)
        sym = std::max(sym, std::fabs(report.d_matrix(i, j) - report.d_matrix(j, i)));
  report.symmetry_residual =
      d_complete ? sym : std::numeric_limits<double>::quiet_NaN();
  report.symmetry_pass = d_complete && sym <= config.symmetry_tol;

  bool conclusion = true;
  NeumaierSum weighted;
  for (std::size_t i = 0; i < d; ++i) {
    if (std::fabs(base.value[i]) >
        std::max(3.0 * base.se[i], config.conclusion_atol))
      conclusion = false;
    weighted.add(x[i] * base.value[i]);
  }
  report.conclusion_pass = conclusion;
  report.euler_weighted_conditional = weighted.value();

  report.verdict = (report.homogeneity.pass && report.euler_pass &&
                    report.symmetry_pass && report.conclusion_pass)
                       ? Verdict::pass
                       : Verdict::fail;
  return report;
}

}  // namespace riskdiff
