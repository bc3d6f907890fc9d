#pragma once

namespace riskdiff {

// Standard normal density.
double normal_pdf(double x);

// Inverse standard normal CDF, Wichura's PPND16 rational approximation
// (algorithm AS 241). Relative accuracy ~1e-16 over (0,1); this keeps every
// sampled path and oracle quantile independent of platform libm variance.
// p outside (0,1) -> domain error.
double normal_quantile(double p);

}  // namespace riskdiff
