#pragma once

namespace remex::stats {

/// Standard normal CDF.
double normal_cdf(double x);

/// Upper tail of the standard normal, 1 - Phi(x), without cancellation.
double normal_sf(double x);

/// Inverse of the standard normal CDF for p in (0, 1).
///
/// Acklam's rational approximation (relative error about 1e-9) followed by one
/// Halley refinement against erfc, which brings the result to near machine
/// precision over the whole open interval.
double normal_quantile(double p);

/// Survival function of the chi-square distribution with one degree of freedom.
double chi_square1_sf(double x);

/// Two-sided normal p-value for a z statistic.
double two_sided_p(double z);

}  // namespace remex::stats
