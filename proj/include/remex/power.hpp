#pragma once

#include "remex/designs.hpp"
#include "remex/inference.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace remex {

struct PowerSpec {
  double alpha = 0.05;
  double power = 0.8;
  /// Minimum detectable effect, on the same scale as the variance below.
  double mde = 0.0;
  /// Var(delta-hat) * n: the variance of the estimate at one user per group.
  double variance_per_unit = 1.0;

  void check() const;
};

struct SampleSize {
  double z_alpha = 0.0;  ///< z_{1 - alpha/2}
  double z_power = 0.0;  ///< z_{power}
  double unrounded = 0.0;
  std::int64_t n = 0;  ///< users per group
};

SampleSize sample_size(const PowerSpec& spec);
/// ceil((z_{1-alpha/2} + z_{power})^2 * variance_per_unit / mde^2), users per group.
std::int64_t required_sample_size(const PowerSpec& spec);
double required_sample_size_unrounded(const PowerSpec& spec);

/// One design's variance of the effect estimate, ready for comparison.
struct DesignVariance {
  std::string name;
  EffectScale scale = EffectScale::Relative;
  double variance = 0.0;
};

struct ComparisonRow {
  std::string name;
  double variance = 0.0;
  double percent = 100.0;  ///< samples needed relative to the baseline
};

struct DesignComparison {
  std::string baseline;
  EffectScale scale = EffectScale::Relative;
  std::vector<ComparisonRow> rows;

  const ComparisonRow& row(std::string_view name) const;
};

/// percent = 100 * Var_design / Var_baseline; all entries must share one effect scale.
DesignComparison compare_designs(std::span<const DesignVariance> designs, std::string_view baseline);

/// Comparable per-period variance of a fit's first effect parameter: the
/// relative-scale variance as is, and on the absolute scale Var / k^2 so the
/// cumulative total effect is put on a per-period footing.
DesignVariance comparable_variance(const FitResult& fit, std::string name = {});

/// Compares fitted designs; the baseline is matched by design family name.
DesignComparison compare_designs(std::span<const FitResult> fits, std::string_view baseline);

/// Closed-form comparison for equal groups without missingness. Supported
/// kinds are Parallel, Crossover and Cumulative (reported per period).
DesignComparison compare_closed_form(double s1, double s2, double rho, DesignKind baseline,
                                     std::span<const DesignKind> kinds);

}  // namespace remex
