#include "remex/inference.hpp"

#include "remex/errors.hpp"
#include "remex/stats.hpp"

#include <cmath>
#include <sstream>

namespace remex {

namespace {

constexpr double kRankThreshold = 1e-10;
constexpr double kStepTolerance = 1e-10;
constexpr int kMaxIterations = 100;

/// Lower Cholesky factor of Sigma, ridge-regularized when Sigma is singular.
Eigen::MatrixXd whitening_factor(const Eigen::MatrixXd& sigma, std::vector<std::string>& warnings) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd l = llt.matrixL();
    if (l.diagonal().minCoeff() > 0.0) return l;
  }
  const double trace = sigma.trace();
  const double eps = trace > 0.0 ? 1e-12 * trace : 1e-12;
  Eigen::MatrixXd ridged = sigma;
  ridged.diagonal().array() += eps;
  Eigen::LLT<Eigen::MatrixXd> llt2(ridged);
  if (llt2.info() != Eigen::Success) {
    throw DataError("covariance of the observed means is not positive semidefinite");
  }
  std::ostringstream os;
  os << "covariance of the observed means is singular; ridge " << eps << " added to its diagonal";
  warnings.push_back(os.str());
  return llt2.matrixL();
}

std::vector<Eigen::Index> free_columns(const DesignModel& model) {
  std::vector<Eigen::Index> cols;
  for (std::size_t k = 0; k < model.parameter_count(); ++k) {
    if (!model.pinned()[k]) cols.push_back(static_cast<Eigen::Index>(k));
  }
  return cols;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
  return out;
}

Eigen::ColPivHouseholderQR<Eigen::MatrixXd> checked_qr(const Eigen::MatrixXd& jw,
                                                       const DesignModel& model) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jw);
  qr.setThreshold(kRankThreshold);
  if (qr.rank() < jw.cols()) {
    throw IdentifiabilityError("model " + model.label() + " is not identifiable from these moments (rank " +
                               std::to_string(qr.rank()) + " of " + std::to_string(jw.cols()) + ")");
  }
  return qr;
}

void finish(FitResult& r, const Eigen::MatrixXd& l, const std::vector<Eigen::Index>& cols) {
  const DesignModel& model = r.model;
  const auto p = static_cast<Eigen::Index>(model.parameter_count());
  const Eigen::MatrixXd jw =
      l.triangularView<Eigen::Lower>().solve(select_columns(model.jacobian(r.estimates), cols));
  const Eigen::MatrixXd info = jw.transpose() * jw;
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) {
    throw IdentifiabilityError("Fisher information of " + model.label() + " is singular");
  }
  const Eigen::MatrixXd free_cov =
      llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));

  r.covariance = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t a = 0; a < cols.size(); ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      const double v = 0.5 * (free_cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +
                              free_cov(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)));
      r.covariance(cols[a], cols[b]) = v;
      r.covariance(cols[b], cols[a]) = v;
    }
  }
  r.se.resize(p);
  r.z.resize(p);
  r.p.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double var = r.covariance(k, k);
    r.se(k) = var > 0.0 ? std::sqrt(var) : 0.0;
    if (r.se(k) > 0.0) {
      r.z(k) = r.estimates(k) / r.se(k);
      r.p(k) = stats::two_sided_p(r.z(k));
    } else {
      r.z(k) = 0.0;
      r.p(k) = 1.0;
    }
  }

  const Eigen::VectorXd resid = l.triangularView<Eigen::Lower>().solve(
      Eigen::VectorXd(r.observed - model.mean_vector(r.estimates)));
  r.objective = resid.squaredNorm();

  r.relative_effects.clear();
  if (model.scale() == EffectScale::Absolute) {
    const auto mu = static_cast<Eigen::Index>(model.parameter_index("mu"));
    const double k = model.effect_baseline_coefficient();
    const double base = k * r.estimates(mu);
    if (base == 0.0) {
      r.warnings.push_back("baseline mean is zero; relative effects are undefined");
    } else {
      for (std::size_t e : model.effect_parameters()) {
        const auto ei = static_cast<Eigen::Index>(e);
        RelativeEffect re;
        re.parameter = model.parameter_names()[e];
        re.estimate = r.estimates(ei) / base;
        // gradient of delta / (k mu) with respect to (delta, mu)
        const double gd = 1.0 / base;
        const double gm = -r.estimates(ei) * k / (base * base);
        const double var = gd * gd * r.covariance(ei, ei) + 2.0 * gd * gm * r.covariance(ei, mu) +
                           gm * gm * r.covariance(mu, mu);
        re.se = var > 0.0 ? std::sqrt(var) : 0.0;
        re.z = re.se > 0.0 ? re.estimate / re.se : 0.0;
        re.p = re.se > 0.0 ? stats::two_sided_p(re.z) : 1.0;
        r.relative_effects.push_back(re);
      }
    }
  }
}

FitResult fit_affine(FitResult r, const Eigen::MatrixXd& l, const std::vector<Eigen::Index>& cols) {
  const DesignModel& model = r.model;
  const auto p = static_cast<Eigen::Index>(model.parameter_count());
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(p);
  // beta(lambda) = beta(0) + J lambda exactly for affine models.
  const Eigen::VectorXd offset = model.mean_vector(zero);
  const Eigen::MatrixXd jw =
      l.triangularView<Eigen::Lower>().solve(select_columns(model.jacobian(zero), cols));
  const Eigen::VectorXd yw =
      l.triangularView<Eigen::Lower>().solve(Eigen::VectorXd(r.observed - offset));
  const auto qr = checked_qr(jw, model);
  const Eigen::VectorXd free = qr.solve(yw);
  r.estimates = Eigen::VectorXd::Zero(p);
  for (std::size_t c = 0; c < cols.size(); ++c) r.estimates(cols[c]) = free(static_cast<Eigen::Index>(c));
  r.iterations = 0;
  r.final_step = 0.0;
  r.converged = true;
  finish(r, l, cols);
  return r;
}

FitResult fit_gauss_newton(FitResult r, const Eigen::MatrixXd& l, const std::vector<Eigen::Index>& cols) {
  const DesignModel& model = r.model;
  const auto p = static_cast<Eigen::Index>(model.parameter_count());
  auto lower = l.triangularView<Eigen::Lower>();

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(p);
  const auto mu = static_cast<Eigen::Index>(model.parameter_index("mu"));
  const Eigen::VectorXd mu_column = model.jacobian(lambda).col(mu);
  const double mu_coef = mu_column.mean();
  lambda(mu) = mu_coef != 0.0 ? r.observed.mean() / mu_coef : r.observed.mean();

  auto objective = [&](const Eigen::VectorXd& lam) {
    return lower.solve(Eigen::VectorXd(r.observed - model.mean_vector(lam))).squaredNorm();
  };

  double q = objective(lambda);
  double step_norm = 0.0;
  for (int it = 1; it <= kMaxIterations; ++it) {
    const Eigen::MatrixXd jw = lower.solve(select_columns(model.jacobian(lambda), cols));
    const Eigen::VectorXd rw = lower.solve(Eigen::VectorXd(r.observed - model.mean_vector(lambda)));
    const auto qr = checked_qr(jw, model);
    const Eigen::VectorXd dir_free = qr.solve(rw);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(p);
    for (std::size_t c = 0; c < cols.size(); ++c) dir(cols[c]) = dir_free(static_cast<Eigen::Index>(c));

    double t = 1.0;
    Eigen::VectorXd next = lambda + dir;
    double q_next = objective(next);
    while (q_next > q && t > 1e-12) {
      t *= 0.5;
      next = lambda + t * dir;
      q_next = objective(next);
    }
    step_norm = (t * dir).norm();
    const double scale = std::max(lambda.norm(), next.norm());
    lambda = next;
    q = std::min(q, q_next);
    r.iterations = it;
    r.final_step = scale > 0.0 ? step_norm / scale : step_norm;
    if (r.final_step <= kStepTolerance) {
      r.estimates = lambda;
      r.converged = true;
      finish(r, l, cols);

      const Eigen::MatrixXd jf = lower.solve(select_columns(model.jacobian(lambda), cols));
      const Eigen::VectorXd resid =
          lower.solve(Eigen::VectorXd(r.observed - model.mean_vector(lambda)));
      const Eigen::VectorXd yw = lower.solve(r.observed);
      const double grad = (jf.transpose() * resid).norm();
      const double ref = (jf.transpose() * yw).norm();
      if (grad > 1e-8 * ref) {
        std::ostringstream os;
        os << "stationarity residual " << grad << " exceeds 1e-8 of the reference gradient " << ref;
        r.warnings.push_back(os.str());
      }
      return r;
    }
  }
  std::vector<double> last(lambda.data(), lambda.data() + lambda.size());
  std::ostringstream os;
  os << "Gauss-Newton did not converge for " << model.label() << " after " << kMaxIterations
     << " iterations (relative step " << r.final_step << ")";
  throw ConvergenceError(os.str(), std::move(last));
}

}  // namespace

double FitResult::estimate(std::string_view name) const {
  return estimates(static_cast<Eigen::Index>(model.parameter_index(name)));
}

double FitResult::standard_error(std::string_view name) const {
  return se(static_cast<Eigen::Index>(model.parameter_index(name)));
}

double FitResult::variance(std::string_view name) const {
  const auto i = static_cast<Eigen::Index>(model.parameter_index(name));
  return covariance(i, i);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> stack_moments(const DesignModel& model,
                                                           const MetricMoments& moments) {
  const auto& cells = model.layout();
  const auto n = static_cast<Eigen::Index>(cells.size());
  Eigen::VectorXd m(n);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const Cell& ca = cells[static_cast<std::size_t>(a)];
    if (ca.group < 0 || static_cast<std::size_t>(ca.group) >= moments.groups.size()) {
      throw DataError("model " + model.label() + " needs group " + std::to_string(ca.group) +
                      " but the data has " + std::to_string(moments.groups.size()) + " group(s)");
    }
    const GroupMoments& g = moments.groups[static_cast<std::size_t>(ca.group)];
    const auto ia = static_cast<Eigen::Index>(g.index_of(ca.period));
    m(a) = g.mean(ia);
    for (Eigen::Index b = 0; b < n; ++b) {
      const Cell& cb = cells[static_cast<std::size_t>(b)];
      if (cb.group != ca.group) continue;
      sigma(a, b) = g.covariance(ia, static_cast<Eigen::Index>(g.index_of(cb.period)));
    }
  }
  return {std::move(m), std::move(sigma)};
}

FitResult fit(const DesignModel& model, const MetricMoments& moments) {
  if (design_shape(model.kind()).additive_only && !moments.metric.additive()) {
    throw UsageError("the " + std::string(to_string(model.kind())) +
                     " design needs an additive metric (a simple average), got " +
                     moments.metric.to_string());
  }
  auto [m, sigma] = stack_moments(model, moments);
  return fit(model, m, sigma);
}

FitResult fit(const DesignModel& model, const Eigen::VectorXd& observed,
              const Eigen::MatrixXd& covariance) {
  const auto n = static_cast<Eigen::Index>(model.size());
  if (observed.size() != n || covariance.rows() != n || covariance.cols() != n) {
    throw UsageError("stacked moments have dimension " + std::to_string(observed.size()) + ", model " +
                     model.label() + " has " + std::to_string(n) + " mean entries");
  }
  if (!observed.allFinite() || !covariance.allFinite()) {
    throw DataError("observed means or their covariance contain non-finite values");
  }
  FitResult r;
  r.model = model;
  r.observed = observed;
  r.observed_covariance = covariance;
  const Eigen::MatrixXd l = whitening_factor(covariance, r.warnings);
  const auto cols = free_columns(model);
  if (model.scale() == EffectScale::Absolute) return fit_affine(std::move(r), l, cols);
  return fit_gauss_newton(std::move(r), l, cols);
}

double closed_form_variance(DesignKind kind, double s1, double s2, double rho) {
  if (!(s1 > 0.0) || !(s2 > 0.0) || !(rho > -1.0 && rho < 1.0)) {
    throw UsageError("closed-form variance needs s1, s2 > 0 and -1 < rho < 1");
  }
  const double a = s1 * s1;
  const double b = s2 * s2;
  const double c = rho * s1 * s2;
  switch (kind) {
    case DesignKind::TTest:
      return a + b;
    case DesignKind::Cuped:
      return 2.0 * a * (1.0 - rho * rho);
    case DesignKind::Parallel:
      return 2.0 * a * b * (1.0 - rho * rho) / (a + b - 2.0 * c);
    case DesignKind::Cumulative:
      return 2.0 * (a + b + 2.0 * c);
    case DesignKind::Crossover:
      return 2.0 * a * b * (1.0 - rho * rho) / (a + b + 2.0 * c);
    default:
      throw UsageError("no closed-form variance for design " + std::string(to_string(kind)));
  }
}

Eigen::VectorXd contrast(const DesignModel& model,
                         std::initializer_list<std::pair<std::string_view, double>> terms) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  for (const auto& [name, w] : terms) c(static_cast<Eigen::Index>(model.parameter_index(name))) += w;
  return c;
}

TestResult wald_test(const FitResult& fit, const Eigen::VectorXd& c, double level,
                     std::string description) {
  if (c.size() != fit.estimates.size()) {
    throw UsageError("contrast has length " + std::to_string(c.size()) + ", expected " +
                     std::to_string(fit.estimates.size()));
  }
  if (c.isZero(0.0)) throw UsageError("contrast vector is zero");
  if (!(level > 0.0 && level <= 1.0)) throw UsageError("test level must be in (0, 1]");
  const double var = c.dot(fit.covariance * c);
  if (!(var > 0.0)) throw DataError("contrast has zero variance; the Wald test is undefined");
  const double est = c.dot(fit.estimates);
  TestResult t;
  if (description.empty()) {
    std::ostringstream os;
    bool first = true;
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      if (c(k) == 0.0) continue;
      const double w = c(k);
      if (!first) os << (w < 0 ? " - " : " + ");
      else if (w < 0) os << "-";
      if (std::fabs(w) != 1.0) os << std::fabs(w) << "*";
      os << fit.model.parameter_names()[static_cast<std::size_t>(k)];
      first = false;
    }
    os << " = 0";
    description = os.str();
  }
  t.description = std::move(description);
  t.statistic = est * est / var;
  t.df = 1;
  t.p_value = stats::chi_square1_sf(t.statistic);
  t.level = level;
  t.rejected = t.p_value < level;
  return t;
}

FitResult reduce_model(const FitResult& full, double level) {
  if (full.model.kind() != DesignKind::ReRandomized) {
    throw UsageError("model reduction applies to the re-randomized design with a carryover term");
  }
  const TestResult t =
      wald_test(full, contrast(full.model, {{"alpha", 1.0}}), level, "alpha = 0 (no carryover)");
  if (t.rejected) return full;
  const DesignModel reduced = build_model(DesignKind::ReRandomizedNoCarryover, full.model.scale(),
                                          full.model.has_pre_period());
  FitResult r = fit(reduced, full.observed, full.observed_covariance);
  r.reduced = true;
  return r;
}

}  // namespace remex
