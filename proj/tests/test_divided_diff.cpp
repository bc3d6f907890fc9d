#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskdiff/divided_diff.hpp"

using namespace riskdiff;

namespace {

double cube(std::span<const double> x) { return x[0] * x[0] * x[0]; }

// Exact for integer bases and small exponents; avoids any pow() slack.
double ipow(int base, int exp) {
  double r = 1.0;
  for (int k = 0; k < exp; ++k) r *= base;
  return r;
}

}  // namespace

TEST_CASE("stencil coefficients are the signed binomials") {
  CHECK(stencil(1).coefficients == std::vector<double>{-1.0, 1.0});
  CHECK(stencil(2).coefficients == std::vector<double>{1.0, -2.0, 1.0});
  CHECK(stencil(3).coefficients == std::vector<double>{-1.0, 3.0, -3.0, 1.0});
  CHECK(stencil(0).coefficients == std::vector<double>{1.0});
  CHECK_THROWS_AS(stencil(-1), std::invalid_argument);
}

TEST_CASE("stencil moments vanish below the order and hit n factorial at it") {
  for (int n = 1; n <= 8; ++n) {
    const Stencil s = stencil(n);
    REQUIRE(s.coefficients.size() == static_cast<std::size_t>(n) + 1);

    double factorial = 1.0;
    for (int k = 2; k <= n; ++k) factorial *= k;
    // All terms are exact integers below 2^53, so both sums are exact.
    for (int k = 0; k <= n; ++k) {
      double moment = 0.0;
      for (int j = 0; j <= n; ++j)
        moment += s.coefficients[static_cast<std::size_t>(j)] * ipow(j, k);
      if (k < n)
        CHECK(moment == 0.0);
      else
        CHECK(moment == factorial);
    }
  }
}

TEST_CASE("the cubic fixture reproduces the exact 6 + 6/m error law") {
  const std::vector<double> x{1.0};
  CHECK(divided_difference(cube, x, 1, 2, 10) == doctest::Approx(6.6).epsilon(1e-12));
  for (long m : {10L, 20L, 40L}) {
    const double expected = 6.0 + 6.0 / static_cast<double>(m);
    const double got = divided_difference(cube, x, 1, 2, m);
    CHECK(std::fabs(got - expected) <= 1e-9 * expected);
  }
}

TEST_CASE("richardson extrapolation of the cubic table lands on 6") {
  const std::vector<double> x{1.0};
  const std::vector<long> schedule{10, 20, 40};
  const ConvergenceTable t = convergence_table(cube, x, 1, 2, schedule);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].m == 10);
  CHECK(t.rows[2].m == 40);
  CHECK(t.rows[0].estimate == doctest::Approx(6.6).epsilon(1e-12));
  CHECK(t.rows[1].estimate == doctest::Approx(6.3).epsilon(1e-12));
  CHECK(t.rows[2].estimate == doctest::Approx(6.15).epsilon(1e-12));
  CHECK(std::fabs(t.extrapolated - 6.0) <= 1e-9);
  CHECK(t.stable);
}

TEST_CASE("constants, polynomials, and linear maps are handled exactly") {
  const std::vector<double> x2{2.0};
  const WeightFunction constant = [](std::span<const double>) { return 3.25; };
  CHECK(divided_difference(constant, x2, 1, 1, 100) == 0.0);
  CHECK(divided_difference(constant, x2, 1, 3, 9) == 0.0);

  const std::vector<double> x5{5.0};
  const WeightFunction square = [](std::span<const double> v) { return v[0] * v[0]; };
  for (long m : {1L, 7L, 1000L})
    CHECK(divided_difference(square, x5, 1, 2, m) == doctest::Approx(2.0).epsilon(1e-6));

  const std::vector<double> x11{1.0, 1.0};
  const std::vector<long> sched{5, 10, 20};
  const WeightFunction linear = [](std::span<const double> v) {
    return 4.0 * v[0] - 2.0 * v[1];
  };
  const ConvergenceTable t = convergence_table(linear, x11, 1, 1, sched);
  for (const ConvergenceRow& r : t.rows)
    CHECK(r.estimate == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(t.extrapolated == doctest::Approx(4.0).epsilon(1e-12));

  CHECK(divided_difference(cube, x2, 1, 3, 7) == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("the forward stencil sees only the right branch of |x| at 0") {
  const std::vector<double> x0{0.0};
  const std::vector<long> sched{10, 20, 40};
  const WeightFunction absf = [](std::span<const double> v) { return std::fabs(v[0]); };
  const ConvergenceTable t = convergence_table(absf, x0, 1, 1, sched);
  for (const ConvergenceRow& r : t.rows)
    CHECK(r.estimate == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.stable);
}

TEST_CASE("schedules must be strictly increasing with at least three entries") {
  const std::vector<double> x{1.0};
  const std::vector<long> two{10, 20};
  const std::vector<long> repeat{10, 10, 20};
  const std::vector<long> down{40, 20, 10};
  CHECK_THROWS_AS(convergence_table(cube, x, 1, 2, two), std::invalid_argument);
  CHECK_THROWS_AS(convergence_table(cube, x, 1, 2, repeat), std::invalid_argument);
  CHECK_THROWS_AS(convergence_table(cube, x, 1, 2, down), std::invalid_argument);
  CHECK_THROWS_AS(divided_difference(cube, x, 1, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(divided_difference(cube, x, 0, 2, 10), std::invalid_argument);
  CHECK_THROWS_AS(divided_difference(cube, x, 2, 1, 10), std::invalid_argument);
}

TEST_CASE("the cancellation guard trips when n*log10(m) exceeds 12") {
  const std::vector<double> x{0.5};
  const std::vector<long> sched{100'000, 200'000, 400'000};
  const WeightFunction expf = [](std::span<const double> v) { return std::exp(v[0]); };
  const ConvergenceTable t = convergence_table(expf, x, 1, 3, sched);
  CHECK_FALSE(t.stable);
}

TEST_CASE("convergence tables serialize as csv with a trailing extrapolation line") {
  const std::vector<double> x{1.0};
  const std::vector<long> sched{10, 20, 40};
  const ConvergenceTable t = convergence_table(cube, x, 1, 2, sched);
  const std::string csv = convergence_csv(t);
  CHECK(csv.rfind("m,estimate\n", 0) == 0);
  CHECK(csv.find("# extrapolated,") != std::string::npos);
  CHECK(csv.find("10,") != std::string::npos);
}
