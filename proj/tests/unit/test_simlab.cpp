#include "remex/simlab.hpp"
#include "remex/errors.hpp"
#include "remex/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace remex;

namespace {

struct Stat {
  double n = 0, s = 0, ss = 0;
  void add(double x) {
    n += 1;
    s += x;
    ss += x * x;
  }
  double mean() const { return s / n; }
  double var() const { return (ss - s * s / n) / (n - 1); }
  double se() const { return std::sqrt(var() / n); }
};

}  // namespace

TEST(Simlab, DegenerateConfigurationReproducesMu) {
  SimConfig c;
  c.users_per_group = 20;
  c.sigma = 0;
  c.sigma_u = 0;
  c.mu = 3.5;
  c.missingness = false;
  const auto ds = generate(c);
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    for (int t = 1; t <= 2; ++t) {
      ASSERT_TRUE(ds.present(u, t));
      EXPECT_EQ(ds.components(u, t)[0], 3.5);
    }
  }
}

TEST(Simlab, WithoutMissingnessEveryoneIsPresent) {
  SimConfig c;
  c.users_per_group = 200;
  c.condition = 3;
  c.missingness = false;
  c.pre_period = true;
  const auto ds = generate(c);
  EXPECT_TRUE(ds.has_pre_period());
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    for (int t = 0; t <= 2; ++t) EXPECT_TRUE(ds.present(u, t));
  }
  EXPECT_NEAR(calibrate_activity(c).mean_activity, 0.66, 1e-8);
}

TEST(Simlab, GroundTruthOfTheDiluteEffect) {
  SimConfig c;
  c.condition = 3;
  const auto act = calibrate_activity(c);
  EXPECT_NEAR(act.present_activity, 0.66, 1e-8);
  EXPECT_NEAR(act.missing_rate, 0.5, 1e-8);
  const auto gt = ground_truth(c, DesignKind::Crossover);
  ASSERT_EQ(gt.size(), 1u);
  EXPECT_NEAR(gt[0], 6.6, 1e-7);
  c.condition = 1;
  EXPECT_EQ(ground_truth(c, DesignKind::Crossover)[0], 0.0);
  c.condition = 3;
  c.carryover = 1.5;
  const auto rr = ground_truth(c, DesignKind::ReRandomized);
  ASSERT_EQ(rr.size(), 2u);
  EXPECT_EQ(rr[1], 1.5);
}

TEST(Simlab, SameSeedSameData) {
  SimConfig c;
  c.users_per_group = 100;
  c.condition = 4;
  c.seed = 77;
  std::ostringstream a, b, d;
  write_csv(a, generate(c));
  write_csv(b, generate(c));
  c.seed = 78;
  write_csv(d, generate(c));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), d.str());
  EXPECT_NE(splitmix64(1), splitmix64(2));
}

TEST(Simlab, LatentDrawsHaveTheConfiguredMoments) {
  SimConfig c;
  c.users_per_group = 5000;
  c.condition = 1;
  c.seed = 123;
  const auto users = generate_latents(c);
  ASSERT_EQ(users.size(), 10000u);
  Stat u, noise, missing, activity_present;
  for (const auto& s : users) {
    u.add(s.u);
    for (std::size_t t = 0; t < s.noise.size(); ++t) {
      noise.add(s.noise[t]);
      missing.add(s.present[t] ? 0.0 : 1.0);
      if (s.present[t]) activity_present.add(s.activity);
    }
  }
  EXPECT_LE(std::fabs(u.mean()), 4 * u.se());
  // sd of a sample variance of normals: sigma^2 sqrt(2 / (n - 1))
  EXPECT_LE(std::fabs(u.var() - 4.0), 4 * 4.0 * std::sqrt(2.0 / (u.n - 1)));
  EXPECT_LE(std::fabs(noise.var() - 16.0), 4 * 16.0 * std::sqrt(2.0 / (noise.n - 1)));
  // presence is correlated within users, so allow a design effect of 2
  EXPECT_LE(std::fabs(missing.mean() - 0.5), 4 * 2 * missing.se());
  EXPECT_LE(std::fabs(activity_present.mean() - 0.66), 4 * 2 * activity_present.se());
}

TEST(Simlab, ActiveUsersAreMorePresent) {
  for (int cond : {3, 4, 5}) {
    SimConfig c;
    c.users_per_group = 2000;
    c.condition = cond;
    const auto users = generate_latents(c);
    Stat p, q, pq;
    for (const auto& s : users) {
      const double share = static_cast<double>(std::count(s.present.begin(), s.present.end(), true)) /
                           static_cast<double>(s.present.size());
      p.add(s.activity);
      q.add(share);
      pq.add(s.activity * share);
    }
    EXPECT_GT(pq.mean() - p.mean() * q.mean(), 0.0) << cond;
  }
}

TEST(Simlab, NoiseFollowsActivityInConditionsFourAndFive) {
  for (int cond : {4, 5}) {
    SimConfig c;
    c.users_per_group = 3000;
    c.condition = cond;
    Stat z;
    for (const auto& s : generate_latents(c)) {
      const double sd = (cond == 4 ? 2.0 : 4.0) * s.activity;
      for (double e : s.noise) {
        if (sd > 1e-3) z.add(e / sd);
      }
    }
    EXPECT_NEAR(z.var(), 1.0, 0.05) << cond;
  }
}

TEST(Simlab, NullMonteCarloIsCentredAndCovers) {
  SimConfig c;
  c.users_per_group = 400;
  c.condition = 1;
  c.seed = 2024;
  const auto rep = run_monte_carlo(c, DesignKind::Crossover, 100);
  EXPECT_EQ(rep.failed, 0u);
  const auto& e = rep.estimator("delta");
  EXPECT_EQ(e.replications, 100u);
  EXPECT_LE(std::fabs(e.mean_estimate), 4 * e.mc_standard_error);
  EXPECT_GE(e.coverage, 0.85);
  EXPECT_NEAR(e.variance_ratio, 1.0, 0.4);
}

TEST(Simlab, FisherVarianceHalvesWhenUsersDouble) {
  SimConfig c;
  c.condition = 3;
  c.users_per_group = 500;
  const double v1 = run_monte_carlo(c, DesignKind::Parallel, 20).estimator("delta").mean_fisher_variance;
  c.users_per_group = 1000;
  const double v2 = run_monte_carlo(c, DesignKind::Parallel, 20).estimator("delta").mean_fisher_variance;
  EXPECT_NEAR(v1 / v2, 2.0, 0.15);
}

TEST(Simlab, BootstrapOfIdenticalUsersHasNoSpread) {
  ExperimentDataset ds(MetricDef::average("value"), 2, 1, 2);
  for (int g = 0; g < 2; ++g) {
    for (int i = 0; i < 10; ++i) {
      const auto u = ds.add_user("g" + std::to_string(g) + "u" + std::to_string(i), g);
      const double lift = g == 0 ? 1.0 : 0.0;  // group 0 is treated in both periods
      const double x1 = 1.0 + lift, x2 = 2.0 + lift;
      ds.set_observation(u, 1, std::span<const double>(&x1, 1));
      ds.set_observation(u, 2, std::span<const double>(&x2, 1));
    }
  }
  const auto b = bootstrap(ds, DesignKind::Parallel, 100, 1);
  EXPECT_EQ(b.skipped, 0u);
  EXPECT_LE(b.bootstrap_variance, 1e-20);
  EXPECT_NEAR(b.estimate, 1.0, 1e-9);
}

TEST(Simlab, BootstrapAgreesWithFisherOnGeneratedData) {
  SimConfig c;
  c.condition = 3;
  c.users_per_group = 600;
  c.seed = 9;
  const auto b = bootstrap(generate(c), DesignKind::Crossover, 400, 10);
  EXPECT_NEAR(b.ratio, 1.0, 0.25);
  EXPECT_THROW(bootstrap(generate(c), DesignKind::Crossover, 50, 10), UsageError);
}

TEST(Simlab, InvalidConfigurationsAreRejected) {
  SimConfig c;
  c.condition = 6;
  EXPECT_THROW(generate(c), UsageError);
  c.condition = 1;
  c.sigma = -1;
  EXPECT_THROW(generate(c), UsageError);
  c.sigma = 1;
  c.target_missing_rate = 0.95;
  EXPECT_THROW(calibrate_activity(c), UsageError);
  EXPECT_THROW(run_monte_carlo(SimConfig{}, DesignKind::Crossover, 0), UsageError);
}
