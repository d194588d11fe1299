#include <cmath>

#include <gtest/gtest.h>

#include "flowgp/schedule.hpp"
#include "support.hpp"

using namespace flowgp;
using namespace flowgp::testing;

namespace {

// alpha(t) = exp(-1/2 int_0^t beta) by composite Simpson on the raw beta(s).
double alpha_by_quadrature(const Schedule& s, double t) {
  const int n = 2000;
  const double h = t / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * (s.beta0 + (s.beta1 - s.beta0) * (i * h));
  }
  return std::exp(-0.5 * acc * h / 3.0);
}

}  // namespace

TEST(Schedule, AlphaAtEndpoints) {
  const Schedule s;
  EXPECT_EQ(s.alpha(0.0), 1.0);
  EXPECT_NEAR(s.alpha(1.0), std::exp(-2.5000025), 1e-12);
}

TEST(Schedule, AlphaMatchesQuadratureOfBeta) {
  auto rng = rng_for(21);
  const Schedule s;
  for (int i = 0; i < 50; ++i) {
    const double t = uniform(rng, 0.0, 1.0);
    EXPECT_NEAR(s.alpha(t), alpha_by_quadrature(s, t), 1e-12);
  }
}

TEST(Schedule, BetaIsTheLogDerivativeOfAlpha) {
  const Schedule s;
  for (double t : {0.05, 0.3, 0.7, 0.95}) {
    const double h = 1e-6;
    const double d = (s.log_alpha(t + h) - s.log_alpha(t - h)) / (2.0 * h);
    EXPECT_NEAR(-2.0 * d, s.beta(t), 1e-7);
  }
}

TEST(Schedule, AlphaStrictlyDecreasing) {
  const Schedule s;
  double prev = s.alpha(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double a = s.alpha(i / 1000.0);
    EXPECT_LT(a, prev);
    prev = a;
  }
}

TEST(Schedule, OneMinusAlphaSquaredIsAccurateNearZero) {
  const Schedule s;
  // At t = 1e-9 the direct form loses all digits; the series gives beta0 t.
  const double t = 1e-9;
  EXPECT_NEAR(s.one_minus_alpha_sq(t) / (s.beta0 * t + 0.5 * (s.beta1 - s.beta0) * t * t), 1.0, 1e-6);
  for (double u : {0.1, 0.5, 1.0}) EXPECT_NEAR(s.one_minus_alpha_sq(u), 1.0 - s.alpha(u) * s.alpha(u), 1e-14);
}

TEST(Schedule, SnrHasGuardedCap) {
  const Schedule s;
  EXPECT_NEAR(s.snr(0.0), 1e4, 1e-8);
  EXPECT_GT(s.snr(0.5), s.snr(0.6));
}

TEST(Schedule, OutOfRangeTimesThrow) {
  const Schedule s;
  EXPECT_THROW(s.alpha(-1e-9), DomainError);
  EXPECT_THROW(s.beta(1.0 + 1e-9), DomainError);
  EXPECT_THROW(s.alpha(std::nan("")), DomainError);
}

TEST(Schedule, ValidateRejectsNonDecreasingAlpha) {
  Schedule s;
  s.beta1 = s.beta0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.beta0 = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Schedule, InvertSnrRoundTripsRandomTimes) {
  auto rng = rng_for(22);
  const Schedule s;
  for (int i = 0; i < 100; ++i) {
    const double t = uniform(rng, 1e-4, 1.0 - 1e-4);
    EXPECT_NEAR(s.invert_snr(s.snr(t)), t, 1e-10);
  }
}

TEST(TimeGrid, EndpointsAndLength) {
  const auto g = build_time_grid(Schedule{}, 1000, 1e-3);
  ASSERT_EQ(g.steps(), 1000);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 1e-3);
}

TEST(TimeGrid, StrictlyDecreasing) {
  for (Index steps : {1, 2, 10, 1000}) {
    const auto g = build_time_grid(Schedule{}, steps, 1e-3);
    for (std::size_t j = 0; j + 1 < g.times.size(); ++j) EXPECT_GT(g.times[j], g.times[j + 1]);
  }
}

TEST(TimeGrid, UniformInLogSnr) {
  const Schedule s;
  const auto g = build_time_grid(s, 1000, 1e-3);
  const double expected = (s.log_snr(1e-3) - s.log_snr(1.0)) / 1000.0;
  for (std::size_t j = 0; j + 1 < g.times.size(); ++j)
    EXPECT_NEAR(s.log_snr(g.times[j + 1]) - s.log_snr(g.times[j]), expected, 1e-5);
}

TEST(TimeGrid, RejectsBadArguments) {
  EXPECT_THROW(build_time_grid(Schedule{}, 0), ConfigError);
  EXPECT_THROW(build_time_grid(Schedule{}, 10, 0.0), ConfigError);
  EXPECT_THROW(build_time_grid(Schedule{}, 10, 1.0), ConfigError);
}
