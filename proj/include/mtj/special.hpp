#pragma once

namespace mtj {

/// Regularized incomplete beta function I_x(a, b), a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

/// Inverse of I_x(a, b) in x, to an absolute tolerance of about 1e-15.
double incomplete_beta_inverse(double a, double b, double p);

/// CDF and quantile of the F distribution with (d1, d2) degrees of freedom;
/// non-integer degrees of freedom are allowed.
double f_cdf(double x, double d1, double d2);
double f_quantile(double p, double d1, double d2);

}  // namespace mtj
