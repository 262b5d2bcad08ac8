#pragma once

#include "remex/designs.hpp"
#include "remex/moments.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace remex {

/// Effect re-expressed relative to the control baseline, %delta = delta / (k mu).
struct RelativeEffect {
  std::string parameter;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

struct FitResult {
  DesignModel model;
  Eigen::VectorXd estimates;
  Eigen::MatrixXd covariance;  ///< inverse Fisher information; zero rows for pinned parameters
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p;
  double objective = 0.0;  ///< (m - beta)^T Sigma^-1 (m - beta) at the estimate
  int iterations = 0;
  double final_step = 0.0;
  bool converged = true;
  bool reduced = false;  ///< produced by reduce_model dropping the carryover term
  std::vector<std::string> warnings;
  /// Filled on the absolute scale for every effect parameter.
  std::vector<RelativeEffect> relative_effects;
  /// Stacked observations the fit used (kept so the model can be refit).
  Eigen::VectorXd observed;
  Eigen::MatrixXd observed_covariance;

  double estimate(std::string_view name) const;
  double standard_error(std::string_view name) const;
  double variance(std::string_view name) const;
};

/// Stacks the moments of the cells the model references: m and its
/// block-diagonal covariance (groups are independent).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> stack_moments(const DesignModel& model,
                                                           const MetricMoments& moments);

/// Maximum-likelihood fit of the model to asymptotically normal means.
/// Absolute-scale models are solved in closed form by generalized least
/// squares; relative-scale models by damped Gauss-Newton.
FitResult fit(const DesignModel& model, const MetricMoments& moments);
FitResult fit(const DesignModel& model, const Eigen::VectorXd& observed,
              const Eigen::MatrixXd& covariance);

/// Textbook Var(delta-hat) for two equal groups without missingness.
/// s1, s2 are the per-group standard errors of the period means (for Cuped,
/// s1 is the experiment period and s2 the baseline) and rho their correlation.
double closed_form_variance(DesignKind kind, double s1, double s2, double rho);

struct TestResult {
  std::string description;
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
  double level = 0.05;
  bool rejected = false;
};

/// Builds a contrast vector from (parameter, weight) pairs.
Eigen::VectorXd contrast(const DesignModel& model,
                         std::initializer_list<std::pair<std::string_view, double>> terms);

/// Wald chi-square(1) test of c^T lambda = 0.
TestResult wald_test(const FitResult& fit, const Eigen::VectorXd& c, double level = 0.05,
                     std::string description = {});

/// Tests the carryover term of a re-randomized fit and, unless it is
/// significant at `level`, refits without it on the same observations.
FitResult reduce_model(const FitResult& full, double level = 0.05);

}  // namespace remex
