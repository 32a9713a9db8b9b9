#pragma once

namespace harmon::stats {

// log Gamma(x) for x > 0; reentrant (does not touch the global signgam).
double log_gamma(double x);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction with a
/// log-gamma prefactor. Uses I_x(a,b) = 1 - I_{1-x}(b,a) past the mode so the
/// fraction converges fast; absolute accuracy about 1e-14.
double reg_inc_beta(double x, double a, double b);

/// P(F <= x) for an F(d1, d2) variable.
double f_cdf(double x, double d1, double d2);

/// P(F > x), evaluated directly rather than as 1 - f_cdf so small p-values keep
/// their relative precision.
double f_sf(double x, double d1, double d2);

}  // namespace harmon::stats
