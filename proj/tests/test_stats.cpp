#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "oracles.hpp"
#include "repdecode/stats.hpp"
#include "test_support.hpp"

using namespace repdecode;
using namespace repdecode::stats;

TEST(IncompleteBeta, MatchesBoost) {
  for (double a : {0.5, 1.0, 2.5, 7.0, 30.0})
    for (double b : {0.5, 1.0, 3.0, 12.0})
      for (double x : {1e-6, 0.01, 0.2, 0.5, 0.77, 0.99, 1 - 1e-9})
        EXPECT_NEAR(incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-12) << a << " " << b << " " << x;
  EXPECT_EQ(incomplete_beta(2, 3, 0), 0.0);
  EXPECT_EQ(incomplete_beta(2, 3, 1), 1.0);
  EXPECT_THROW(incomplete_beta(0, 1, 0.5), NumericalError);
}

TEST(StudentT, CdfAndTailMatchBoost) {
  for (double df : {1.0, 2.0, 5.0, 29.0, 200.0}) {
    const boost::math::students_t dist(df);
    for (double t : {-8.0, -2.1, -0.3, 0.0, 0.4, 1.7, 3.0, 12.0}) {
      EXPECT_NEAR(student_t_cdf(t, df), boost::math::cdf(dist, t), 1e-12) << df << " " << t;
      EXPECT_NEAR(student_t_two_sided_p(t, df), 2 * boost::math::cdf(boost::math::complement(dist, std::abs(t))),
                  1e-12);
    }
  }
  EXPECT_EQ(student_t_two_sided_p(0.0, 4), 1.0);
}

TEST(PairedT, SignFollowsTheShift) {
  const auto base = tsupport::gaussian_vector(12, 1);
  for (double c : {-0.7, 0.25, 3.0}) {
    auto treat = base;
    for (auto& x : treat) x += c;
    treat[3] += 0.01;
    const auto r = paired_t({base, treat});
    EXPECT_EQ(r.t > 0, c > 0);
    EXPECT_EQ(r.df, 11u);
    EXPECT_EQ(r.n, 12u);
  }
}

TEST(PairedT, ConstantDifferenceIsAnError) {
  EXPECT_THROW(paired_t({{1, 2, 3, 4}, {2, 3, 4, 5}}), NumericalError);
  EXPECT_THROW(paired_t({{1, 2, 3}, {1, 2}}), DataError);
  EXPECT_THROW(paired_t({{1}, {2}}), DataError);
}

TEST(PairedT, MatchesHighPrecisionReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto base = tsupport::gaussian_vector(30, seed, 2.0, 1.0);
    const auto treat = tsupport::gaussian_vector(30, seed + 1000, 2.3, 1.2);
    const auto r = paired_t({base, treat});
    const auto ref = oracle::paired_t_reference(base, treat);
    EXPECT_LT(std::abs(r.t - ref.t), 1e-10) << seed;
    EXPECT_LT(std::abs(r.p - ref.p), 1e-8) << seed;
  }
}

TEST(PairedT, AntisymmetryAndShiftInvariance) {
  const auto base = tsupport::gaussian_vector(15, 4);
  const auto treat = tsupport::gaussian_vector(15, 5, 0.4);
  const auto fwd = paired_t({base, treat});
  const auto rev = paired_t({treat, base});
  EXPECT_NEAR(fwd.t, -rev.t, 1e-12);
  EXPECT_NEAR(fwd.p, rev.p, 1e-12);
  auto b2 = base, t2 = treat;
  for (auto& x : b2) x += 17.0;
  for (auto& x : t2) x += 17.0;
  const auto shifted = paired_t({b2, t2});
  EXPECT_NEAR(shifted.t, fwd.t, 1e-9);
  EXPECT_NEAR(shifted.p, fwd.p, 1e-9);
}

TEST(PairedT, SignificanceThreshold) {
  TTestResult r;
  r.p = 0.009;
  EXPECT_TRUE(r.significant(0.01));
  r.p = 0.01;
  EXPECT_FALSE(r.significant(0.01));
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_EQ(quantile_sorted(v, 0.0), 1.0);
  EXPECT_EQ(quantile_sorted(v, 1.0), 5.0);
  EXPECT_EQ(quantile_sorted(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.1), 1.4);
}

TEST(Bootstrap, ConstantVectorGivesDegenerateInterval) {
  const auto ci = bootstrap_ci(std::vector<double>(20, 2.5), 0.95, 1000, 1);
  EXPECT_EQ(ci.lo, 2.5);
  EXPECT_EQ(ci.hi, 2.5);
}

TEST(Bootstrap, BracketsTheSampleMean) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto v = tsupport::gaussian_vector(25, seed, 1.0, 2.0);
    const auto ci = bootstrap_ci(v, 0.95, 1000, seed);
    const double m = mean(v);
    EXPECT_LE(ci.lo, m);
    EXPECT_GE(ci.hi, m);
  }
}

TEST(Bootstrap, DeterministicGivenSeed) {
  const auto v = tsupport::gaussian_vector(40, 2);
  const auto a = bootstrap_ci(v, 0.9, 2000, 5), b = bootstrap_ci(v, 0.9, 2000, 5), c = bootstrap_ci(v, 0.9, 2000, 6);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_NE(a.lo, c.lo);
}

TEST(Bootstrap, WidthShrinksWithSampleSizeOnAverage) {
  double small = 0, large = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = bootstrap_ci(tsupport::gaussian_vector(20, seed), 0.95, 1000, seed);
    const auto b = bootstrap_ci(tsupport::gaussian_vector(200, seed + 500), 0.95, 1000, seed);
    small += a.hi - a.lo;
    large += b.hi - b.lo;
  }
  EXPECT_LT(large, small);
}

TEST(Bootstrap, CoverageOfTheTrueMean) {
  constexpr double mu = 3.0;
  int covered = 0;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    const auto v = tsupport::gaussian_vector(100, 10'000 + trial, mu, 1.5);
    const auto ci = bootstrap_ci(v, 0.95, 10000, trial);
    covered += ci.lo <= mu && mu <= ci.hi;
  }
  EXPECT_GE(covered, 180);
}

TEST(Bootstrap, Errors) {
  EXPECT_THROW(bootstrap_ci({}, 0.95, 10, 0), DataError);
  EXPECT_THROW(bootstrap_ci({1, 2}, 1.0, 10, 0), UsageError);
  EXPECT_THROW(bootstrap_ci({1, 2}, 0.95, 0, 0), UsageError);
}
