#include "riskdiff/normal.hpp"

#include <cmath>
#include <stdexcept>

namespace riskdiff {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

double poly(const double* c, int n, double r) {
  double v = c[0];
  for (int i = 1; i < n; ++i) v = v * r + c[i];
  return v;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0,1)");

  // Coefficients from Wichura (1988), AS 241, PPND16.
  static const double a[8] = {
      2.5090809287301226727e+3, 3.3430575583588128105e+4, 6.7265770927008700853e+4,
      4.5921953931549871457e+4, 1.3731693765509461125e+4, 1.9715909503065514427e+3,
      1.3314166789178437745e+2, 3.3871328727963666080e+0};
  static const double b[8] = {
      5.2264952788528545610e+3, 2.8729085735721942674e+4, 3.9307895800092710610e+4,
      2.1213794301586595867e+4, 5.3941960214247511077e+3, 6.8718700749205790830e+2,
      4.2313330701600911252e+1, 1.0};
  static const double c[8] = {
      7.7454501427834140764e-4, 2.27238449892691845833e-2, 2.4178072517745061177e-1,
      1.27045825245236838258e+0, 3.64784832476320460504e+0, 5.7694972214606914055e+0,
      4.6303378461565452959e+0, 1.42343711074968357734e+0};
  static const double d[8] = {
      1.05075007164441684324e-9, 5.475938084995344946e-4, 1.51986665636164571966e-2,
      1.4810397642748007459e-1,  6.8976733498510000455e-1, 1.6763848301838038494e+0,
      2.05319162663775882187e+0, 1.0};
  static const double e[8] = {
      2.01033439929228813265e-7, 2.71155556874348757815e-5, 1.2426609473880784386e-3,
      2.65321895265761230930e-2, 2.96560571828504891230e-1, 1.7848265399172913358e+0,
      5.4637849111641143699e+0,  6.6579046435011037772e+0};
  static const double f[8] = {
      2.04426310338993978564e-15, 1.4215117583164458887e-7, 1.8463183175100546818e-5,
      7.868691311456132591e-4,    1.48753612908506148525e-2, 1.3692988092273580531e-1,
      5.9983220655588793769e-1,   1.0};

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(a, 8, r) / poly(b, 8, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double v;
  if (r <= 5.0) {
    r -= 1.6;
    v = poly(c, 8, r) / poly(d, 8, r);
  } else {
    r -= 5.0;
    v = poly(e, 8, r) / poly(f, 8, r);
  }
  return q < 0.0 ? -v : v;
}

}  // namespace riskdiff
