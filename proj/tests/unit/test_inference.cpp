#include "remex/inference.hpp"
#include "remex/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace remex;

namespace {

using CellCov = std::function<double(const Cell&, const Cell&)>;

/// Block-diagonal covariance over the model layout; groups are independent.
Eigen::MatrixXd layout_covariance(const DesignModel& m, const CellCov& within) {
  const auto n = static_cast<Eigen::Index>(m.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Cell a = m.layout()[static_cast<std::size_t>(i)];
      const Cell b = m.layout()[static_cast<std::size_t>(j)];
      if (a.group == b.group) s(i, j) = within(a, b);
    }
  }
  return s;
}

/// Two experiment periods: variance s1^2 in period 1, s2^2 in period 2, correlation rho.
CellCov two_period(double s1, double s2, double rho) {
  return [=](const Cell& a, const Cell& b) {
    const double sa = a.period == 1 ? s1 : s2;
    const double sb = b.period == 1 ? s1 : s2;
    return (a.period == b.period ? 1.0 : rho) * sa * sb;
  };
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

/// Draws m ~ N(beta, sigma).
class Sampler {
 public:
  Sampler(const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma, std::uint64_t seed)
      : beta_(beta), l_(sigma.llt().matrixL()), rng_(seed) {}
  Eigen::VectorXd draw() {
    Eigen::VectorXd z(beta_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd_(rng_);
    return beta_ + l_ * z;
  }

 private:
  Eigen::VectorXd beta_;
  Eigen::MatrixXd l_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> nd_;
};

double normal_equation_residual(const FitResult& r) {
  const Eigen::MatrixXd j = r.model.jacobian(r.estimates);
  const Eigen::MatrixXd si = r.observed_covariance.inverse();
  const Eigen::VectorXd g = j.transpose() * si * (r.observed - r.model.mean_vector(r.estimates));
  const Eigen::VectorXd scale = j.transpose() * si * r.observed;
  return g.norm() / std::max(1.0, scale.norm());
}

}  // namespace

TEST(Fit, TTestIsTheDifferenceInMeans) {
  const auto m = build_model(DesignKind::TTest, EffectScale::Absolute);
  const auto r = fit(m, vec({10, 12}), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(r.estimate("mu"), 10, 1e-12);
  EXPECT_NEAR(r.estimate("delta"), 2, 1e-12);
  EXPECT_NEAR(r.standard_error("delta"), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.objective, 0.0, 1e-20);
  ASSERT_EQ(r.relative_effects.size(), 1u);
  EXPECT_NEAR(r.relative_effects[0].estimate, 0.2, 1e-12);
}

TEST(ClosedForm, WorkedValues) {
  EXPECT_NEAR(closed_form_variance(DesignKind::Crossover, 1, 1, 0.5), 0.5, 1e-15);
  EXPECT_NEAR(closed_form_variance(DesignKind::Parallel, 1, 1, 0.5), 1.5, 1e-15);
  EXPECT_NEAR(closed_form_variance(DesignKind::Cuped, 1, 1, 0.5), 1.5, 1e-15);
  EXPECT_NEAR(closed_form_variance(DesignKind::TTest, 1, 1, 0.5), 2.0, 1e-15);
  EXPECT_NEAR(closed_form_variance(DesignKind::Cumulative, 1, 1, 0.5), 6.0, 1e-15);
  EXPECT_THROW(closed_form_variance(DesignKind::Crossover, 0, 1, 0), UsageError);
  EXPECT_THROW(closed_form_variance(DesignKind::Crossover, 1, 1, 1), UsageError);
  EXPECT_THROW(closed_form_variance(DesignKind::ReRandomized, 1, 1, 0), UsageError);
}

TEST(ClosedForm, FisherVarianceMatchesOnAGrid) {
  for (double s1 : {0.5, 1.0, 2.0}) {
    for (double s2 : {0.5, 1.0, 2.0}) {
      for (double rho : {-0.6, 0.0, 0.3, 0.9}) {
        const std::string at = " at s1=" + std::to_string(s1) + " s2=" + std::to_string(s2) +
                               " rho=" + std::to_string(rho);
        for (DesignKind k : {DesignKind::Crossover, DesignKind::Parallel}) {
          const auto m = build_model(k, EffectScale::Absolute);
          const auto r = fit(m, m.mean_vector(vec({1, 0.3, 0.2})),
                             layout_covariance(m, two_period(s1, s2, rho)));
          const double want = closed_form_variance(k, s1, s2, rho);
          EXPECT_NEAR(r.variance("delta"), want, 1e-8 * want) << to_string(k) << at;
        }
        {
          // group means with variance s1^2 and s2^2 respectively
          const auto m = build_model(DesignKind::TTest, EffectScale::Absolute);
          Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
          s(0, 0) = s1 * s1;
          s(1, 1) = s2 * s2;
          const auto r = fit(m, vec({1, 2}), s);
          EXPECT_NEAR(r.variance("delta"), closed_form_variance(DesignKind::TTest, s1, s2, rho), 1e-12) << at;
        }
        {
          // baseline has sd s2, experiment period sd s1
          const auto m = build_model(DesignKind::Cuped, EffectScale::Absolute);
          const auto r = fit(m, m.mean_vector(vec({1, 0.5, 0.1})),
                             layout_covariance(m, [=](const Cell& a, const Cell& b) {
                               const double sa = a.period == kPrePeriod ? s2 : s1;
                               const double sb = b.period == kPrePeriod ? s2 : s1;
                               return (a.period == b.period ? 1.0 : rho) * sa * sb;
                             }));
          const double want = closed_form_variance(DesignKind::Cuped, s1, s2, rho);
          EXPECT_NEAR(r.variance("delta"), want, 1e-8 * want) << at;
        }
        {
          const auto m = build_model(DesignKind::Cumulative, EffectScale::Absolute);
          const double v = s1 * s1 + s2 * s2 + 2 * rho * s1 * s2;
          const auto r = fit(m, vec({3, 4}), Eigen::Matrix2d::Identity() * v);
          const double want = closed_form_variance(DesignKind::Cumulative, s1, s2, rho);
          EXPECT_NEAR(r.variance("delta_total"), want, 1e-8 * want) << at;
          EXPECT_EQ(r.standard_error("theta"), 0.0);
        }
      }
    }
  }
}

TEST(ClosedForm, OrderingProperties) {
  for (double s : {0.5, 1.0, 3.0}) {
    for (double rho : {0.0, 0.2, 0.5, 0.8}) {
      const double cross = closed_form_variance(DesignKind::Crossover, s, s, rho);
      const double par = closed_form_variance(DesignKind::Parallel, s, s, rho);
      const double cuped = closed_form_variance(DesignKind::Cuped, s, s, rho);
      const double tt = closed_form_variance(DesignKind::TTest, s, s, rho);
      EXPECT_LE(cross, par);
      EXPECT_LE(cuped, tt);
      // crossover never loses to cumulative on a per-period footing
      EXPECT_LE(cross, closed_form_variance(DesignKind::Cumulative, s, s, rho) / 4 + 1e-15);
    }
  }
}

TEST(Fit, AbsoluteSolutionSatisfiesNormalEquations) {
  for (DesignKind k : {DesignKind::Crossover, DesignKind::ParallelTwoDelta, DesignKind::ReRandomized,
                       DesignKind::Cuped}) {
    const auto m = build_model(k, EffectScale::Absolute);
    const Eigen::MatrixXd s = layout_covariance(m, [](const Cell& a, const Cell& b) {
      return a.period == b.period ? 1.0 + 0.1 * a.group : 0.4;
    });
    Sampler draw(m.mean_vector(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m.parameter_count()), 0.5)),
                 s, 3);
    const auto r = fit(m, draw.draw(), s);
    EXPECT_LE(normal_equation_residual(r), 1e-10) << to_string(k);
  }
}

TEST(Fit, GaussNewtonReachesAStationaryPoint) {
  for (DesignKind k : {DesignKind::Crossover, DesignKind::Parallel, DesignKind::ReRandomized,
                       DesignKind::CrossoverTwoDelta}) {
    const auto m = build_model(k, EffectScale::Relative);
    Eigen::VectorXd lam = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m.parameter_count()), 0.1);
    lam(0) = 5.0;
    const Eigen::MatrixXd s = layout_covariance(m, two_period(0.3, 0.4, 0.5));
    Sampler draw(m.mean_vector(lam), s, 4);
    const auto r = fit(m, draw.draw(), s);
    EXPECT_TRUE(r.converged);
    EXPECT_GE(r.iterations, 1);
    EXPECT_LE(r.final_step, 1e-10);
    EXPECT_LE(normal_equation_residual(r), 1e-8) << to_string(k);
  }
}

TEST(Fit, RelativeCrossoverIsUnbiasedInRepeatedSampling) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Relative);
  const Eigen::VectorXd truth = vec({10, 1, 0.05});
  const Eigen::MatrixXd s = layout_covariance(m, two_period(0.2, 0.25, 0.6));
  Sampler draw(m.mean_vector(truth), s, 5);
  const int K = 2000;
  double sum = 0, sumsq = 0, fisher = 0;
  for (int k = 0; k < K; ++k) {
    const auto r = fit(m, draw.draw(), s);
    const double d = r.estimate("delta");
    sum += d;
    sumsq += d * d;
    fisher += r.variance("delta");
  }
  const double mean = sum / K;
  const double var = (sumsq - sum * sum / K) / (K - 1);
  EXPECT_LE(std::fabs(mean - truth(2)), 3 * std::sqrt(var / K));
  EXPECT_NEAR(var / (fisher / K), 1.0, 0.1);
}

TEST(Fit, RefitOnStoredObservationsIsIdentical) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Relative);
  const Eigen::MatrixXd s = layout_covariance(m, two_period(0.3, 0.3, 0.2));
  const auto a = fit(m, m.mean_vector(vec({4, 0.2, 0.1})) + vec({0.01, -0.02, 0.03, 0.0}), s);
  const auto b = fit(a.model, a.observed, a.observed_covariance);
  EXPECT_EQ(a.estimates, b.estimates);
  EXPECT_EQ(a.covariance, b.covariance);
}

TEST(Fit, UnidentifiableRelativeModelIsReported) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Relative);
  EXPECT_THROW(fit(m, Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4)), IdentifiabilityError);
}

TEST(Fit, DimensionMismatchIsAUsageError) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Absolute);
  EXPECT_THROW(fit(m, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)), UsageError);
}

TEST(Fit, RelativeEffectOnTheAbsoluteScale) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Absolute);
  const auto r = fit(m, m.mean_vector(vec({8, 1, 2})), layout_covariance(m, two_period(1, 1, 0.5)));
  ASSERT_EQ(r.relative_effects.size(), 1u);
  EXPECT_NEAR(r.relative_effects[0].estimate, 0.25, 1e-12);
  EXPECT_GT(r.relative_effects[0].se, 0.0);
}

TEST(Wald, RejectsDegenerateContrasts) {
  const auto m = build_model(DesignKind::Crossover, EffectScale::Absolute);
  const auto r = fit(m, m.mean_vector(vec({1, 0, 0})), layout_covariance(m, two_period(1, 1, 0)));
  EXPECT_THROW(wald_test(r, Eigen::VectorXd::Zero(3)), UsageError);
  EXPECT_THROW(wald_test(r, Eigen::VectorXd::Ones(2)), UsageError);
  const auto t = wald_test(r, contrast(m, {{"delta", 1}}));
  EXPECT_NEAR(t.statistic, 0.0, 1e-20);
  EXPECT_FALSE(t.rejected);
  EXPECT_EQ(t.description, "delta = 0");
}

TEST(Wald, TwoDeltaNullIsCalibrated) {
  const auto m = build_model(DesignKind::ParallelTwoDelta, EffectScale::Absolute);
  const Eigen::MatrixXd s = layout_covariance(m, two_period(1.0, 1.2, 0.4));
  Sampler draw(m.mean_vector(vec({5, 0.5, 0.3, 0.3})), s, 6);
  const int K = 1000;
  int quiet = 0;
  for (int k = 0; k < K; ++k) {
    const auto r = fit(m, draw.draw(), s);
    if (!wald_test(r, contrast(m, {{"delta1", 1}, {"delta2", -1}})).rejected) ++quiet;
  }
  EXPECT_GE(quiet, 930);
}

TEST(Reduce, DropsCarryoverOnlyWhenItIsNotSignificant) {
  const auto m = build_model(DesignKind::ReRandomized, EffectScale::Absolute);
  const Eigen::MatrixXd s = layout_covariance(m, two_period(0.1, 0.1, 0.3));
  const auto strong = fit(m, m.mean_vector(vec({5, 0.2, 1.0, 2.0})), s);
  const auto kept = reduce_model(strong);
  EXPECT_FALSE(kept.reduced);
  EXPECT_EQ(kept.model.kind(), DesignKind::ReRandomized);

  const auto none = fit(m, m.mean_vector(vec({5, 0.2, 1.0, 0.0})), s);
  const auto dropped = reduce_model(none);
  EXPECT_TRUE(dropped.reduced);
  EXPECT_EQ(dropped.model.kind(), DesignKind::ReRandomizedNoCarryover);
  EXPECT_NEAR(dropped.estimate("delta"), 1.0, 1e-10);
  EXPECT_EQ(dropped.observed, none.observed);

  // at level 1 every p-value below 1 rejects, so the full model stays;
  // at a vanishing level nothing rejects and the model always reduces
  const auto noisy = fit(m, m.mean_vector(vec({5, 0.2, 1.0, 0.0})) + Eigen::VectorXd::Constant(8, 0.01), s);
  EXPECT_FALSE(reduce_model(noisy, 1.0).reduced);
  EXPECT_TRUE(reduce_model(strong, 1e-300).reduced);

  EXPECT_THROW(reduce_model(fit(build_model(DesignKind::Crossover, EffectScale::Absolute),
                                vec({1, 1, 1, 1}), Eigen::MatrixXd::Identity(4, 4))),
               UsageError);
}

TEST(Fit, CumulativeNeedsAnAdditiveMetric) {
  MetricMoments mm;
  mm.metric = MetricDef::ratio("a", "b");
  for (int g = 0; g < 2; ++g) {
    GroupMoments gm;
    gm.n = 10;
    gm.periods = {1, 2, kTotalPeriod};
    gm.mean = Eigen::Vector3d(1, 1, 1);
    gm.covariance = Eigen::Matrix3d::Identity();
    mm.groups.push_back(gm);
  }
  EXPECT_THROW(fit(build_model(DesignKind::Cumulative, EffectScale::Absolute), mm), UsageError);
  const auto r = fit(build_model(DesignKind::Crossover, EffectScale::Absolute), mm);
  EXPECT_NEAR(r.estimate("delta"), 0.0, 1e-12);
}

TEST(Reduce, RepeatedSamplingWithAndWithoutCarryover) {
  const auto m = build_model(DesignKind::ReRandomized, EffectScale::Absolute);
  const Eigen::MatrixXd s = layout_covariance(m, two_period(0.5, 0.6, 0.4));
  Sampler none(m.mean_vector(vec({5, 0.2, 1.0, 0.0})), s, 7);
  const int K = 1000;
  int reduced = 0;
  double alpha_se = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto full = fit(m, none.draw(), s);
    const auto r = reduce_model(full);
    if (r.reduced) {
      ++reduced;
      EXPECT_LE(r.variance("delta"), full.variance("delta"));
    }
    alpha_se = full.standard_error("alpha");
  }
  EXPECT_GE(reduced, 930);

  Sampler strong(m.mean_vector(vec({5, 0.2, 1.0, 10 * alpha_se})), s, 8);
  int kept = 0;
  for (int k = 0; k < 200; ++k) kept += reduce_model(fit(m, strong.draw(), s)).reduced ? 0 : 1;
  EXPECT_EQ(kept, 200);
}
