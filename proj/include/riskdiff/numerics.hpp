#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace riskdiff {

// Neumaier-compensated accumulator. Used for every estimator reduction so
// results do not depend on how sample generation was partitioned.
class NeumaierSum {
public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_total(std::span<const double> values) {
  NeumaierSum s;
  for (double v : values) s.add(v);
  return s.value();
}

inline double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean of empty range");
  return compensated_total(values) / static_cast<double>(values.size());
}

// Sample variance (divisor n-1; returns 0 for n < 2).
inline double sample_variance(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double m = mean(values);
  NeumaierSum s;
  for (double v : values) {
    const double d = v - m;
    s.add(d * d);
  }
  return s.value() / static_cast<double>(n - 1);
}

// Dense square matrix, row-major. Small dimensions only (portfolio weights).
class Matrix {
public:
  Matrix() = default;
  explicit Matrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}
  static Matrix identity(std::size_t n) {
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  std::size_t dim() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

  bool symmetric(double tol = 1e-12) const {
    double scale = 1.0;
    for (double v : a_) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j)
        if (std::abs((*this)(i, j) - (*this)(j, i)) > tol * scale) return false;
    return true;
  }

  // y = A x
  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != n_) throw std::invalid_argument("matrix/vector dimension mismatch");
    std::vector<double> y(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      NeumaierSum s;
      for (std::size_t j = 0; j < n_; ++j) s.add((*this)(i, j) * x[j]);
      y[i] = s.value();
    }
    return y;
  }

private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

// Lower Cholesky factor of a symmetric positive semidefinite matrix.
// Zero pivots (up to tolerance) produce a zero column, so degenerate
// covariances such as sigma = 0 factor cleanly.
inline Matrix cholesky_psd(const Matrix& sigma) {
  const std::size_t n = sigma.dim();
  if (!sigma.symmetric()) throw std::domain_error("covariance matrix is not symmetric");
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(sigma(i, i)));
  const double tol = 1e-12 * std::max(scale, 1.0);

  Matrix l(n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = sigma(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -tol) throw std::domain_error("covariance matrix is not positive semidefinite");
    if (d <= tol) {
      // Rank-deficient direction: leave the column at zero, but the
      // remaining rows must be consistent with it.
      for (std::size_t i = j + 1; i < n; ++i) {
        double v = sigma(i, j);
        for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
        if (std::abs(v) > 1e-8 * std::max(scale, 1.0))
          throw std::domain_error("covariance matrix is not positive semidefinite");
      }
      continue;
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = sigma(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }
  return l;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  NeumaierSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add(a[i] * b[i]);
  return s.value();
}

}  // namespace riskdiff
