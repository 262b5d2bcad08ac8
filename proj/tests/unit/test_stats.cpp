#include "remex/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

using namespace remex::stats;

TEST(NormalQuantile, MatchesReferenceValues) {
  // reference values from a 30-digit evaluation of the probit function
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-13);
  EXPECT_NEAR(normal_quantile(0.8), 0.8416212335729143, 1e-13);
  EXPECT_NEAR(normal_quantile(0.95), 1.6448536269514722, 1e-13);
  EXPECT_NEAR(normal_quantile(0.999), 3.090232306167813, 1e-12);
  EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-10);
  EXPECT_DOUBLE_EQ(normal_quantile(0.5), 0.0);
}

TEST(NormalQuantile, InvertsTheCdfAcrossTheRange) {
  for (double p = 1e-12; p < 1.0; p *= 3.7) {
    EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-13 * std::max(p, 1e-3)) << p;
    const double q = 1.0 - p;  // 1 - q is exact, unlike 1 - p for tiny p
    EXPECT_NEAR(normal_quantile(q) + normal_quantile(1.0 - q), 0.0, 1e-9) << p;
  }
}

TEST(NormalQuantile, RejectsClosedEndpoints) {
  EXPECT_THROW(normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(normal_quantile(1.0), std::domain_error);
  EXPECT_THROW(normal_quantile(-0.1), std::domain_error);
}

TEST(Tails, ChiSquareAndTwoSidedAgree) {
  EXPECT_NEAR(chi_square1_sf(3.841458820694124), 0.05, 1e-12);
  EXPECT_NEAR(two_sided_p(1.959963984540054), 0.05, 1e-12);
  for (double z : {0.0, 0.3, 1.0, 2.5, 6.0}) {
    EXPECT_NEAR(two_sided_p(z), chi_square1_sf(z * z), 1e-15);
    EXPECT_NEAR(two_sided_p(-z), two_sided_p(z), 0.0);
  }
  EXPECT_DOUBLE_EQ(two_sided_p(0.0), 1.0);
  EXPECT_NEAR(normal_sf(10.0), 7.619853024160527e-24, 1e-36);
}
