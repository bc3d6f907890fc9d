#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskdiff/numerics.hpp"

namespace riskdiff {

enum class ModelKind {
  gaussian_linear,
  additive_smooth,
  quadratic_gamma,
  option_basket,
  discrete_table,
  custom,
};

enum class LawType { absolutely_continuous, discrete, mixed };

std::string to_string(ModelKind kind);
std::string to_string(LawType law);

// Realization of the underlying risk factors consumed by a model: standard
// normal coordinates for the Gaussian families, a single uniform in (0,1) for
// table-driven models. values are a pure function of (seed, index).
struct PrimitiveSample {
  std::uint64_t index = 0;
  std::vector<double> values;
};

// One atom of a finite law: its probability and a representative primitive
// that evaluate() maps to the atom's outcome exactly.
struct DiscreteAtom {
  double probability = 0.0;
  PrimitiveSample sample;
};

// Hooks for kind=custom models registered by name. When analytic is false,
// pathwise_derivative falls back to a Richardson-extrapolated forward
// divided difference on the fixed sample (orders 1..4 only).
struct CustomSpec {
  std::string name;
  std::size_t dim = 1;
  std::size_t factor_dim = 1;
  LawType law = LawType::discrete;
  std::optional<double> homogeneity;
  bool analytic = true;
  // Primitive coordinates are uniforms in (0,1) unless this is set.
  bool normal_primitives = false;
  std::function<double(std::span<const double>, const PrimitiveSample&)> eval;
  std::function<double(std::span<const double>, const PrimitiveSample&, int, int)> deriv;
  std::function<std::vector<DiscreteAtom>()> atoms;
};

// Loss model L: Omega x R^d -> R with exact pathwise derivatives in x.
// Immutable after construction; evaluation is pure and thread-safe.
class LossModel {
 public:
  static LossModel gaussian_linear(std::vector<double> mu, Matrix sigma);
  static LossModel additive_smooth(std::size_t dim, double sigma_w);
  static LossModel quadratic_gamma(std::vector<double> mu, Matrix sigma);
  static LossModel option_basket(std::vector<double> mu, Matrix sigma,
                                 std::vector<double> strikes);
  static LossModel discrete_table(std::vector<double> outcomes,
                                  std::vector<double> probabilities);
  static LossModel custom(const std::string& name, const nlohmann::json& params);

  // Parses {"kind","dim","params","homogeneity_degree","continuity"}.
  // Absent homogeneity_degree/continuity fall back to the kind's defaults;
  // an explicit null leaves the degree undeclared.
  static LossModel from_json(const nlohmann::json& doc);
  static LossModel from_json_file(const std::string& path);
  nlohmann::json to_json() const;

  std::size_t dim() const { return dim_; }
  ModelKind kind() const { return kind_; }
  LawType continuity() const { return law_; }
  std::optional<double> homogeneity_degree() const { return homogeneity_; }
  bool derivative_bound_integrable() const { return envelope_integrable_; }
  std::size_t factor_dim() const { return factor_dim_; }
  const std::string& id() const { return id_; }

  double evaluate(std::span<const double> x, const PrimitiveSample& sample) const;
  // i is 1-based, n >= 1. Exact analytic derivative for built-in models.
  double pathwise_derivative(std::span<const double> x, const PrimitiveSample& sample,
                             int i, int n) const;
  // Regenerates the primitive for (seed, index) bitwise.
  PrimitiveSample primitive_at(std::uint64_t seed, std::uint64_t index) const;
  // Finite laws expose their atoms for exact enumeration; nullopt otherwise.
  std::optional<std::vector<DiscreteAtom>> atom_support() const;

 private:
  LossModel() = default;
  void check_dim(std::span<const double> x) const;

  ModelKind kind_ = ModelKind::gaussian_linear;
  LawType law_ = LawType::absolutely_continuous;
  std::size_t dim_ = 0;
  std::size_t factor_dim_ = 0;
  std::optional<double> homogeneity_;
  bool envelope_integrable_ = true;
  std::string id_;

  std::vector<double> mu_;
  Matrix sigma_;
  Matrix chol_;
  std::vector<double> strikes_;
  double sigma_w_ = 1.0;
  std::vector<double> outcomes_;
  std::vector<double> probabilities_;
  std::vector<double> cumprobs_;
  CustomSpec custom_;
  nlohmann::json params_json_;
};

struct HomogeneityReport {
  bool pass = false;
  double max_residual = 0.0;
  double declared_degree = 0.0;
};

// Max over samples and scales of |L(lambda x) - lambda^k L(x)| / (1 + |L(x)|);
// pass iff <= 1e-9. Undeclared degree -> not_applicable_error.
HomogeneityReport homogeneity_check(const LossModel& model, std::span<const double> x,
                                    std::span<const double> scales,
                                    std::size_t sample_count, std::uint64_t seed);

}  // namespace riskdiff
