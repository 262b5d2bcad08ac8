#include "remex/power.hpp"

#include "remex/errors.hpp"
#include "remex/stats.hpp"

#include <algorithm>
#include <cmath>

namespace remex {

void PowerSpec::check() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  if (!(power > 0.0 && power < 1.0)) throw UsageError("power must lie in (0, 1)");
  if (mde == 0.0 || !std::isfinite(mde)) throw UsageError("minimum detectable effect must be nonzero");
  if (!(variance_per_unit > 0.0) || !std::isfinite(variance_per_unit)) {
    throw UsageError("per-unit variance must be positive");
  }
}

SampleSize sample_size(const PowerSpec& spec) {
  spec.check();
  SampleSize s;
  s.z_alpha = stats::normal_quantile(1.0 - spec.alpha / 2.0);
  s.z_power = stats::normal_quantile(spec.power);
  const double z = s.z_alpha + s.z_power;
  s.unrounded = z * z * spec.variance_per_unit / (spec.mde * spec.mde);
  s.n = static_cast<std::int64_t>(std::ceil(s.unrounded));
  return s;
}

std::int64_t required_sample_size(const PowerSpec& spec) { return sample_size(spec).n; }

double required_sample_size_unrounded(const PowerSpec& spec) { return sample_size(spec).unrounded; }

const ComparisonRow& DesignComparison::row(std::string_view name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw UsageError("comparison has no design '" + std::string(name) + "'");
}

DesignComparison compare_designs(std::span<const DesignVariance> designs, std::string_view baseline) {
  if (designs.empty()) throw UsageError("nothing to compare");
  const EffectScale scale = designs.front().scale;
  const DesignVariance* base = nullptr;
  for (const auto& d : designs) {
    if (d.scale != scale) {
      throw UsageError("cannot compare designs on different effect scales (" + d.name + " is " +
                       std::string(to_string(d.scale)) + ")");
    }
    if (!(d.variance > 0.0) || !std::isfinite(d.variance)) {
      throw UsageError("design " + d.name + " has a non-positive effect variance");
    }
    if (d.name == baseline) base = &d;
  }
  if (base == nullptr) throw UsageError("baseline design '" + std::string(baseline) + "' is not among the inputs");

  DesignComparison out;
  out.baseline = std::string(baseline);
  out.scale = scale;
  for (const auto& d : designs) {
    out.rows.push_back({d.name, d.variance, 100.0 * d.variance / base->variance});
  }
  return out;
}

DesignVariance comparable_variance(const FitResult& fit, std::string name) {
  const auto& effects = fit.model.effect_parameters();
  if (effects.empty()) throw UsageError("model has no effect parameter");
  const auto e = static_cast<Eigen::Index>(effects.front());
  DesignVariance d;
  d.name = name.empty() ? std::string(family_name(fit.model.kind())) : std::move(name);
  d.scale = fit.model.scale();
  d.variance = fit.covariance(e, e);
  if (d.scale == EffectScale::Absolute) {
    const double k = fit.model.effect_baseline_coefficient();
    d.variance /= k * k;
  }
  return d;
}

DesignComparison compare_designs(std::span<const FitResult> fits, std::string_view baseline) {
  std::vector<DesignVariance> v;
  v.reserve(fits.size());
  for (const auto& f : fits) v.push_back(comparable_variance(f));
  return compare_designs(v, baseline);
}

DesignComparison compare_closed_form(double s1, double s2, double rho, DesignKind baseline,
                                     std::span<const DesignKind> kinds) {
  std::vector<DesignVariance> v;
  bool has_base = false;
  for (DesignKind k : kinds) {
    if (k != DesignKind::Parallel && k != DesignKind::Crossover && k != DesignKind::Cumulative) {
      throw UsageError("closed-form comparison supports parallel, crossover and cumulative, not " +
                       std::string(to_string(k)));
    }
    double var = closed_form_variance(k, s1, s2, rho);
    if (k == DesignKind::Cumulative) var /= 4.0;  // total effect is twice the per-period effect
    v.push_back({std::string(to_string(k)), EffectScale::Absolute, var});
    has_base = has_base || k == baseline;
  }
  if (!has_base) {
    double var = closed_form_variance(baseline, s1, s2, rho);
    if (baseline == DesignKind::Cumulative) var /= 4.0;
    v.insert(v.begin(), {std::string(to_string(baseline)), EffectScale::Absolute, var});
  }
  return compare_designs(v, to_string(baseline));
}

}  // namespace remex
