#include "riskdiff/loss_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "riskdiff/divided_diff.hpp"
#include "riskdiff/errors.hpp"
#include "riskdiff/rng.hpp"

namespace riskdiff {

namespace {

void require_finite(std::span<const double> values, const std::string& field) {
  for (double v : values)
    if (!std::isfinite(v)) throw std::domain_error(field + ": non-finite parameter");
}

void require_finite_matrix(const Matrix& m, const std::string& field) {
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j)
      if (!std::isfinite(m(i, j))) throw std::domain_error(field + ": non-finite parameter");
}

// Cumulative probabilities for upper-inclusive bins (cum[j-1], cum[j]].
std::vector<double> cumulative(const std::vector<double>& probabilities) {
  std::vector<double> cum(probabilities.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < probabilities.size(); ++j) {
    acc += probabilities[j];
    cum[j] = acc;
  }
  return cum;
}

std::size_t bin_of(const std::vector<double>& cum, double u) {
  const auto it = std::lower_bound(cum.begin(), cum.end(), u);
  const std::size_t j = static_cast<std::size_t>(it - cum.begin());
  return std::min(j, cum.size() - 1);
}

// Representative uniform draw for atom j: the midpoint of its bin, so
// evaluation reproduces the atom outcome exactly.
double bin_midpoint(const std::vector<double>& cum, std::size_t j) {
  const double lo = j == 0 ? 0.0 : cum[j - 1];
  return 0.5 * (lo + cum[j]);
}

void validate_probabilities(const std::vector<double>& outcomes,
                            const std::vector<double>& probabilities,
                            const std::string& field) {
  if (outcomes.empty()) throw std::invalid_argument(field + ".outcomes: empty table");
  if (outcomes.size() != probabilities.size())
    throw std::invalid_argument(field + ": outcomes and probabilities differ in length");
  require_finite(outcomes, field + ".outcomes");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw std::invalid_argument(field + ".probabilities: negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument(field + ".probabilities: must sum to 1 within 1e-12");
}

// Fallback derivative for custom models without analytic hooks: Richardson
// extrapolation of the forward divided difference on the fixed sample,
// assuming O(1/m) error. Step pairs shrink with the order because the scaled
// stencil amplifies roundoff by m^n.
double fd_pathwise(const LossModel& model, std::span<const double> x,
                   const PrimitiveSample& sample, int i, int n) {
  if (n > 4)
    throw unsupported_order_error(
        "pathwise_derivative: finite-difference fallback supports orders 1..4");
  static constexpr long kSteps[4][2] = {{2048, 4096}, {512, 1024}, {128, 256}, {64, 128}};
  const long m1 = kSteps[n - 1][0];
  const long m2 = kSteps[n - 1][1];
  const WeightFunction f = [&](std::span<const double> xs) {
    return model.evaluate(xs, sample);
  };
  const double d1 = divided_difference(f, x, i, n, m1);
  const double d2 = divided_difference(f, x, i, n, m2);
  return (static_cast<double>(m2) * d2 - static_cast<double>(m1) * d1) /
         static_cast<double>(m2 - m1);
}

Matrix matrix_from_json(const nlohmann::json& rows, std::size_t dim, const std::string& field) {
  if (!rows.is_array() || rows.size() != dim)
    throw std::invalid_argument(field + ": expected " + std::to_string(dim) + " rows");
  Matrix m(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const nlohmann::json& row = rows[i];
    if (!row.is_array() || row.size() != dim)
      throw std::invalid_argument(field + ": row " + std::to_string(i) + " has wrong length");
    for (std::size_t j = 0; j < dim; ++j) {
      if (!row[j].is_number()) throw std::invalid_argument(field + ": non-numeric entry");
      m(i, j) = row[j].get<double>();
    }
  }
  return m;
}

std::vector<double> vector_from_json(const nlohmann::json& arr, const std::string& field) {
  if (!arr.is_array()) throw std::invalid_argument(field + ": expected an array");
  std::vector<double> v;
  v.reserve(arr.size());
  for (const nlohmann::json& e : arr) {
    if (!e.is_number()) throw std::invalid_argument(field + ": non-numeric entry");
    v.push_back(e.get<double>());
  }
  return v;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.dim(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

using CustomFactory = CustomSpec (*)(const nlohmann::json&);

CustomSpec make_min_sq_table(const nlohmann::json& params) {
  std::vector<double> atoms{0.0, 1.0, 2.0};
  if (params.contains("atoms")) atoms = vector_from_json(params["atoms"], "model.params.atoms");
  std::vector<double> probs(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
  if (params.contains("atom_probs"))
    probs = vector_from_json(params["atom_probs"], "model.params.atom_probs");
  validate_probabilities(atoms, probs, "model.params");
  const std::vector<double> cum = cumulative(probs);

  CustomSpec spec;
  spec.name = "min_sq_table";
  spec.dim = 1;
  spec.factor_dim = 1;
  spec.law = LawType::discrete;
  spec.analytic = params.value("analytic_derivs", true);
  spec.eval = [atoms, cum](std::span<const double> x, const PrimitiveSample& s) {
    const double w = atoms[bin_of(cum, s.values[0])];
    const double z = x[0] - w;
    const double mn = z < 0.0 ? z : 0.0;
    return mn * mn;
  };
  spec.deriv = [atoms, cum](std::span<const double> x, const PrimitiveSample& s, int, int n) {
    const double w = atoms[bin_of(cum, s.values[0])];
    const double z = x[0] - w;
    if (n == 1) return 2.0 * (z < 0.0 ? z : 0.0);
    if (n == 2) return z < 0.0 ? 2.0 : 0.0;
    return 0.0;
  };
  spec.atoms = [atoms, probs, cum]() {
    std::vector<DiscreteAtom> out;
    for (std::size_t j = 0; j < atoms.size(); ++j)
      out.push_back({probs[j], PrimitiveSample{j, {bin_midpoint(cum, j)}}});
    return out;
  };
  return spec;
}

CustomSpec make_zero_or_exp(const nlohmann::json&) {
  CustomSpec spec;
  spec.name = "zero_or_exp";
  spec.dim = 1;
  spec.factor_dim = 1;
  spec.law = LawType::discrete;
  spec.eval = [](std::span<const double> x, const PrimitiveSample& s) {
    return s.values[0] < 0.5 ? 0.0 : std::exp(x[0]);
  };
  spec.deriv = [](std::span<const double> x, const PrimitiveSample& s, int, int) {
    return s.values[0] < 0.5 ? 0.0 : std::exp(x[0]);
  };
  spec.atoms = []() {
    return std::vector<DiscreteAtom>{{0.5, PrimitiveSample{0, {0.25}}},
                                     {0.5, PrimitiveSample{1, {0.75}}}};
  };
  return spec;
}

const std::map<std::string, CustomFactory>& custom_registry() {
  static const std::map<std::string, CustomFactory> registry{
      {"min_sq_table", &make_min_sq_table},
      {"zero_or_exp", &make_zero_or_exp},
  };
  return registry;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::gaussian_linear: return "gaussian_linear";
    case ModelKind::additive_smooth: return "additive_smooth";
    case ModelKind::quadratic_gamma: return "quadratic_gamma";
    case ModelKind::option_basket: return "option_basket";
    case ModelKind::discrete_table: return "discrete_table";
    case ModelKind::custom: return "custom";
  }
  return "unknown";
}

std::string to_string(LawType law) {
  switch (law) {
    case LawType::absolutely_continuous: return "absolutely_continuous";
    case LawType::discrete: return "discrete";
    case LawType::mixed: return "mixed";
  }
  return "unknown";
}

LossModel LossModel::gaussian_linear(std::vector<double> mu, Matrix sigma) {
  if (mu.empty()) throw std::invalid_argument("model.params.mu: empty");
  if (sigma.dim() != mu.size())
    throw std::invalid_argument("model.params.sigma: dimension must match mu");
  require_finite(mu, "model.params.mu");
  require_finite_matrix(sigma, "model.params.sigma");
  LossModel m;
  m.kind_ = ModelKind::gaussian_linear;
  m.law_ = LawType::absolutely_continuous;
  m.dim_ = mu.size();
  m.factor_dim_ = mu.size();
  m.homogeneity_ = 1.0;
  m.id_ = "gaussian_linear";
  m.mu_ = std::move(mu);
  m.sigma_ = sigma;
  m.chol_ = cholesky_psd(sigma);
  m.params_json_ = {{"mu", m.mu_}, {"sigma", matrix_to_json(m.sigma_)}};
  return m;
}

LossModel LossModel::additive_smooth(std::size_t dim, double sigma_w) {
  if (dim < 1) throw std::invalid_argument("model.dim: must be >= 1");
  if (!(std::isfinite(sigma_w) && sigma_w >= 0.0))
    throw std::domain_error("model.params.sigma_w: must be finite and nonnegative");
  LossModel m;
  m.kind_ = ModelKind::additive_smooth;
  m.law_ = LawType::absolutely_continuous;
  m.dim_ = dim;
  m.factor_dim_ = 1;
  m.homogeneity_ = std::nullopt;
  m.id_ = "additive_smooth";
  m.sigma_w_ = sigma_w;
  m.params_json_ = {{"sigma_w", sigma_w}};
  return m;
}

LossModel LossModel::quadratic_gamma(std::vector<double> mu, Matrix sigma) {
  LossModel m = gaussian_linear(std::move(mu), std::move(sigma));
  m.kind_ = ModelKind::quadratic_gamma;
  m.homogeneity_ = 2.0;
  m.id_ = "quadratic_gamma";
  return m;
}

LossModel LossModel::option_basket(std::vector<double> mu, Matrix sigma,
                                   std::vector<double> strikes) {
  LossModel m = gaussian_linear(std::move(mu), std::move(sigma));
  if (strikes.size() != m.dim_)
    throw std::invalid_argument("model.params.strikes: length must equal dim");
  require_finite(strikes, "model.params.strikes");
  m.kind_ = ModelKind::option_basket;
  m.homogeneity_ = 1.0;
  m.id_ = "option_basket";
  m.strikes_ = std::move(strikes);
  m.params_json_["strikes"] = m.strikes_;
  return m;
}

LossModel LossModel::discrete_table(std::vector<double> outcomes,
                                    std::vector<double> probabilities) {
  validate_probabilities(outcomes, probabilities, "model.params");
  LossModel m;
  m.kind_ = ModelKind::discrete_table;
  m.law_ = LawType::discrete;
  m.dim_ = 1;
  m.factor_dim_ = 1;
  m.homogeneity_ = 0.0;
  m.id_ = "discrete_table";
  m.outcomes_ = std::move(outcomes);
  m.probabilities_ = std::move(probabilities);
  m.cumprobs_ = cumulative(m.probabilities_);
  m.params_json_ = {{"outcomes", m.outcomes_}, {"probabilities", m.probabilities_}};
  return m;
}

LossModel LossModel::custom(const std::string& name, const nlohmann::json& params) {
  const auto it = custom_registry().find(name);
  if (it == custom_registry().end())
    throw std::invalid_argument("model.params.name: unknown custom model '" + name + "'");
  LossModel m;
  m.custom_ = it->second(params);
  m.kind_ = ModelKind::custom;
  m.law_ = m.custom_.law;
  m.dim_ = m.custom_.dim;
  m.factor_dim_ = m.custom_.factor_dim;
  m.homogeneity_ = m.custom_.homogeneity;
  m.id_ = "custom:" + name;
  m.params_json_ = params;
  if (!m.params_json_.is_object()) m.params_json_ = nlohmann::json::object();
  m.params_json_["name"] = name;
  return m;
}

LossModel LossModel::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("model: expected a JSON object");
  if (!doc.contains("kind") || !doc["kind"].is_string())
    throw std::invalid_argument("model.kind: required string field");
  const std::string kind = doc["kind"].get<std::string>();
  const nlohmann::json params =
      doc.contains("params") ? doc["params"] : nlohmann::json::object();
  std::size_t dim = 0;
  if (doc.contains("dim")) {
    if (!doc["dim"].is_number_integer() || doc["dim"].get<std::int64_t>() < 1)
      throw std::invalid_argument("model.dim: must be a positive integer");
    dim = doc["dim"].get<std::size_t>();
  }

  LossModel m;
  if (kind == "gaussian_linear" || kind == "quadratic_gamma" || kind == "option_basket") {
    if (!params.contains("mu"))
      throw std::invalid_argument("model.params.mu: required for " + kind);
    std::vector<double> mu = vector_from_json(params["mu"], "model.params.mu");
    if (dim != 0 && dim != mu.size())
      throw std::invalid_argument("model.dim: inconsistent with params.mu length");
    if (!params.contains("sigma"))
      throw std::invalid_argument("model.params.sigma: required for " + kind);
    Matrix sigma = matrix_from_json(params["sigma"], mu.size(), "model.params.sigma");
    if (kind == "gaussian_linear") {
      m = gaussian_linear(std::move(mu), std::move(sigma));
    } else if (kind == "quadratic_gamma") {
      m = quadratic_gamma(std::move(mu), std::move(sigma));
    } else {
      if (!params.contains("strikes"))
        throw std::invalid_argument("model.params.strikes: required for option_basket");
      m = option_basket(std::move(mu), std::move(sigma),
                        vector_from_json(params["strikes"], "model.params.strikes"));
    }
  } else if (kind == "additive_smooth") {
    if (dim == 0) throw std::invalid_argument("model.dim: required for additive_smooth");
    m = additive_smooth(dim, params.value("sigma_w", 1.0));
  } else if (kind == "discrete_table") {
    if (!params.contains("outcomes") || !params.contains("probabilities"))
      throw std::invalid_argument("model.params: discrete_table needs outcomes and probabilities");
    m = discrete_table(vector_from_json(params["outcomes"], "model.params.outcomes"),
                       vector_from_json(params["probabilities"], "model.params.probabilities"));
  } else if (kind == "custom") {
    if (!params.contains("name") || !params["name"].is_string())
      throw std::invalid_argument("model.params.name: required string for custom models");
    m = custom(params["name"].get<std::string>(), params);
  } else {
    throw std::invalid_argument("model.kind: unknown kind '" + kind + "'");
  }

  if (doc.contains("homogeneity_degree")) {
    const nlohmann::json& h = doc["homogeneity_degree"];
    if (h.is_null()) {
      m.homogeneity_ = std::nullopt;
    } else if (h.is_number()) {
      m.homogeneity_ = h.get<double>();
    } else {
      throw std::invalid_argument("model.homogeneity_degree: expected number or null");
    }
  }
  if (doc.contains("continuity")) {
    if (!doc["continuity"].is_string())
      throw std::invalid_argument("model.continuity: expected a string");
    const std::string law = doc["continuity"].get<std::string>();
    if (law == "absolutely_continuous") {
      m.law_ = LawType::absolutely_continuous;
    } else if (law == "discrete") {
      m.law_ = LawType::discrete;
    } else if (law == "mixed") {
      m.law_ = LawType::mixed;
    } else {
      throw std::invalid_argument("model.continuity: unknown value '" + law + "'");
    }
  }
  if (doc.contains("derivative_bound_integrable")) {
    if (!doc["derivative_bound_integrable"].is_boolean())
      throw std::invalid_argument("model.derivative_bound_integrable: expected a boolean");
    m.envelope_integrable_ = doc["derivative_bound_integrable"].get<bool>();
  }
  return m;
}

LossModel LossModel::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("model file " + path + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json LossModel::to_json() const {
  nlohmann::json doc;
  doc["kind"] = to_string(kind_);
  doc["dim"] = dim_;
  doc["params"] = params_json_;
  doc["homogeneity_degree"] =
      homogeneity_ ? nlohmann::json(*homogeneity_) : nlohmann::json(nullptr);
  doc["continuity"] = to_string(law_);
  return doc;
}

void LossModel::check_dim(std::span<const double> x) const {
  if (x.size() != dim_)
    throw std::invalid_argument("weight vector length " + std::to_string(x.size()) +
                                " does not match model dim " + std::to_string(dim_));
}

double LossModel::evaluate(std::span<const double> x, const PrimitiveSample& sample) const {
  check_dim(x);
  if (sample.values.size() != factor_dim_)
    throw std::invalid_argument("sample has " + std::to_string(sample.values.size()) +
                                " factor draws, model needs " + std::to_string(factor_dim_));
  switch (kind_) {
    case ModelKind::gaussian_linear: {
      double acc = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        double y = mu_[i];
        for (std::size_t k = 0; k <= i; ++k) y += chol_(i, k) * sample.values[k];
        acc += x[i] * y;
      }
      return acc;
    }
    case ModelKind::additive_smooth: {
      double acc = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) acc += x[i] * x[i];
      return acc + sigma_w_ * sample.values[0];
    }
    case ModelKind::quadratic_gamma: {
      double g = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        double y = mu_[i];
        for (std::size_t k = 0; k <= i; ++k) y += chol_(i, k) * sample.values[k];
        g += x[i] * y;
      }
      return g * g;
    }
    case ModelKind::option_basket: {
      double acc = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        double y = mu_[i];
        for (std::size_t k = 0; k <= i; ++k) y += chol_(i, k) * sample.values[k];
        const double payoff = y - strikes_[i];
        acc += x[i] * (payoff > 0.0 ? payoff : 0.0);
      }
      return acc;
    }
    case ModelKind::discrete_table:
      return outcomes_[bin_of(cumprobs_, sample.values[0])];
    case ModelKind::custom:
      return custom_.eval(x, sample);
  }
  throw std::logic_error("unreachable model kind");
}

double LossModel::pathwise_derivative(std::span<const double> x,
                                      const PrimitiveSample& sample, int i, int n) const {
  check_dim(x);
  if (i < 1 || static_cast<std::size_t>(i) > dim_)
    throw std::invalid_argument("derivative axis " + std::to_string(i) + " out of range");
  if (n < 1) throw std::invalid_argument("derivative order must be >= 1");
  if (sample.values.size() != factor_dim_)
    throw std::invalid_argument("sample has " + std::to_string(sample.values.size()) +
                                " factor draws, model needs " + std::to_string(factor_dim_));
  const std::size_t axis = static_cast<std::size_t>(i - 1);
  switch (kind_) {
    case ModelKind::gaussian_linear: {
      if (n >= 2) return 0.0;
      double y = mu_[axis];
      for (std::size_t k = 0; k <= axis; ++k) y += chol_(axis, k) * sample.values[k];
      return y;
    }
    case ModelKind::additive_smooth: {
      if (n == 1) return 2.0 * x[axis];
      if (n == 2) return 2.0;
      return 0.0;
    }
    case ModelKind::quadratic_gamma: {
      if (n >= 3) return 0.0;
      double y_axis = mu_[axis];
      for (std::size_t k = 0; k <= axis; ++k) y_axis += chol_(axis, k) * sample.values[k];
      if (n == 2) return 2.0 * y_axis * y_axis;
      double g = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        double y = mu_[j];
        for (std::size_t k = 0; k <= j; ++k) y += chol_(j, k) * sample.values[k];
        g += x[j] * y;
      }
      return 2.0 * g * y_axis;
    }
    case ModelKind::option_basket: {
      // Right derivative at the payoff kink y = strike; the kink has
      // probability zero under continuous factors.
      if (n >= 2) return 0.0;
      double y = mu_[axis];
      for (std::size_t k = 0; k <= axis; ++k) y += chol_(axis, k) * sample.values[k];
      const double payoff = y - strikes_[axis];
      return payoff > 0.0 ? payoff : 0.0;
    }
    case ModelKind::discrete_table:
      return 0.0;
    case ModelKind::custom:
      if (custom_.analytic) return custom_.deriv(x, sample, i, n);
      return fd_pathwise(*this, x, sample, i, n);
  }
  throw std::logic_error("unreachable model kind");
}

PrimitiveSample LossModel::primitive_at(std::uint64_t seed, std::uint64_t index) const {
  PrimitiveSample s;
  s.index = index;
  s.values.resize(factor_dim_);
  const bool normals = kind_ == ModelKind::gaussian_linear ||
                       kind_ == ModelKind::additive_smooth ||
                       kind_ == ModelKind::quadratic_gamma ||
                       kind_ == ModelKind::option_basket ||
                       (kind_ == ModelKind::custom && custom_.normal_primitives);
  for (std::size_t k = 0; k < factor_dim_; ++k)
    s.values[k] = normals ? normal01(seed, index, k) : uniform01(seed, index, k);
  return s;
}

std::optional<std::vector<DiscreteAtom>> LossModel::atom_support() const {
  if (kind_ == ModelKind::discrete_table) {
    std::vector<DiscreteAtom> atoms;
    atoms.reserve(outcomes_.size());
    for (std::size_t j = 0; j < outcomes_.size(); ++j)
      atoms.push_back({probabilities_[j], PrimitiveSample{j, {bin_midpoint(cumprobs_, j)}}});
    return atoms;
  }
  if (kind_ == ModelKind::custom && custom_.atoms) return custom_.atoms();
  return std::nullopt;
}

HomogeneityReport homogeneity_check(const LossModel& model, std::span<const double> x,
                                    std::span<const double> scales,
                                    std::size_t sample_count, std::uint64_t seed) {
  if (!model.homogeneity_degree())
    throw not_applicable_error("homogeneity_check: model declares no homogeneity degree");
  if (sample_count < 1) throw std::invalid_argument("homogeneity_check: sample_count must be >= 1");
  for (double lambda : scales)
    if (!(lambda > 0.0)) throw std::invalid_argument("homogeneity_check: scales must be positive");

  const double k = *model.homogeneity_degree();
  std::vector<double> scaled(x.size());
  HomogeneityReport report;
  report.declared_degree = k;
  for (std::size_t idx = 0; idx < sample_count; ++idx) {
    const PrimitiveSample s = model.primitive_at(seed, idx);
    const double base = model.evaluate(x, s);
    for (double lambda : scales) {
      for (std::size_t j = 0; j < x.size(); ++j) scaled[j] = lambda * x[j];
      const double lhs = model.evaluate(scaled, s);
      const double residual = std::abs(lhs - std::pow(lambda, k) * base) / (1.0 + std::abs(base));
      report.max_residual = std::max(report.max_residual, residual);
    }
  }
  report.pass = report.max_residual <= 1e-9;
  return report;
}

}  // namespace riskdiff
