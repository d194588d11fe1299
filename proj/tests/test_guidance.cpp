#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "flowgp/guidance.hpp"
#include "support.hpp"

using namespace flowgp;
using namespace flowgp::testing;

namespace {

// y = G f0 + N(0, s2 I) under the base N(m, K); the exact guidance is the
// gradient in f_t of log N(y; G mu, G Sigma G^T + s2 I) with (mu, Sigma) the
// bridge moments, computed here with dense inverses.
struct LinearGaussianCase {
  Vector mean;
  Matrix cov;
  Matrix g;
  Vector y;
  double s2;
  FlowOperator flow;
  std::shared_ptr<GaussianResidual> lik;

  Vector exact_guidance(const Vector& f, double t) const {
    const double a = Schedule{}.alpha(t);
    const Index m = mean.size();
    const Matrix amat = a * a * cov + (1.0 - a * a) * Matrix::Identity(m, m);
    const auto bridge = dense_condition(mean, cov, a * Matrix::Identity(m, m), f, (1.0 - a * a) * Matrix::Identity(m, m));
    const Matrix s = g * bridge.cov * g.transpose() + s2 * Matrix::Identity(y.size(), y.size());
    return a * cov * amat.inverse() * g.transpose() * s.inverse() * (y - g * bridge.mean);
  }
};

LinearGaussianCase linear_case(Index m, Index n, std::mt19937_64& rng) {
  const Vector mean = 0.3 * random_matrix(m, 1, rng);
  const Matrix cov = spd_with_spectrum(random_spectrum(m, 0.1, 1.5, rng), rng);
  const Matrix g = 0.4 * random_matrix(n, m, rng);
  const Vector y = random_matrix(n, 1, rng);
  const double s2 = 1.0;
  auto lik = std::make_shared<GaussianResidual>(LinearResidual::from_dense(g, y), std::sqrt(s2));
  return {mean, cov, g, y, s2, FlowOperator(GaussianState::from_moments(mean, cov), Schedule{}), lik};
}

class NegInfLikelihood final : public Likelihood {
 public:
  explicit NegInfLikelihood(Index m) : m_(m) {}
  Index dim() const override { return m_; }
  std::string name() const override { return "impossible"; }
  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    logp = Vector::Constant(f.cols(), -std::numeric_limits<double>::infinity());
    if (scores) scores->setConstant(f.rows(), f.cols(), std::numeric_limits<double>::quiet_NaN());
  }

 private:
  Index m_;
};

}  // namespace

TEST(Weights, UniformLogWeightsGiveFullEss) {
  const auto w = normalise_log_weights(Vector::Constant(8, -3.0));
  EXPECT_NEAR(w.ess, 8.0, 1e-12);
  EXPECT_NEAR(w.weights.sum(), 1.0, 1e-15);
}

TEST(Weights, DominantWeightGivesUnitEss) {
  const auto w = normalise_log_weights((Vector(3) << 0.0, -800.0, -900.0).finished());
  EXPECT_EQ(w.ess, 1.0);
  EXPECT_EQ(w.weights(0), 1.0);
}

TEST(Weights, ShiftInvariantAndBounded) {
  auto rng = rng_for(61);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector l = 30.0 * random_matrix(10, 1, rng);
    const auto a = normalise_log_weights(l);
    const auto b = normalise_log_weights((l.array() + 1234.5).matrix());
    EXPECT_LT((a.weights - b.weights).norm(), 1e-12);
    EXPECT_GE(a.ess, 1.0 - 1e-12);
    EXPECT_LE(a.ess, 10.0 + 1e-12);
  }
}

TEST(Weights, NanIsIgnoredAndAllNegInfCollapses) {
  const auto w = normalise_log_weights((Vector(3) << std::nan(""), 0.0, 0.0).finished());
  EXPECT_EQ(w.weights(0), 0.0);
  EXPECT_NEAR(w.ess, 2.0, 1e-12);
  const auto c = normalise_log_weights(Vector::Constant(4, -std::numeric_limits<double>::infinity()));
  EXPECT_TRUE(c.collapsed);
  EXPECT_EQ(c.weights.norm(), 0.0);
}

TEST(Clip, NormNeverExceedsTau) {
  auto rng = rng_for(62);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector v = std::pow(10.0, uniform(rng, -3, 6)) * random_matrix(6, 1, rng);
    const Vector c = smooth_clip(v, 100.0);
    EXPECT_LE(c.norm(), 100.0 * (1.0 + 1e-12));
    EXPECT_GT(c.dot(v), 0.0);
    EXPECT_LT((c / c.norm() - v / v.norm()).norm(), 1e-10);
  }
}

TEST(Clip, NearIdentityForSmallVectors) {
  // |v| = 0.5, so the shrink factor is tanh(x)/x with x = 5e-3, i.e. 1 - x^2/3 to leading order.
  const Vector v = (Vector(2) << 0.3, -0.4).finished();
  EXPECT_NEAR(smooth_clip(v, 100.0).norm(), 100.0 * std::tanh(5e-3), 1e-7);  // 1e-8 regulariser in the divisor
  EXPECT_LT((smooth_clip(v, 100.0) - v).norm(), 0.5 * 2.5e-5 / 3.0 * 1.01);
  EXPECT_THROW(smooth_clip(Vector::Constant(2, std::nan("")), 1.0), DomainError);
  EXPECT_THROW(smooth_clip(v, 0.0), ConfigError);
}

TEST(Guidance, ConstantLikelihoodGivesZeroWithFullEss) {
  auto rng = rng_for(63);
  const auto flow = FlowOperator::standard(4, Schedule{});
  const ConstantLikelihood c(4);
  const auto bank = NoiseBank::draw(4, 7, rng);
  const auto r = guidance_mc(flow, c, random_matrix(4, 1, rng).col(0), 0.5, bank);
  EXPECT_EQ(r.value.norm(), 0.0);
  EXPECT_NEAR(r.ess, 7.0, 1e-12);
}

TEST(Guidance, FisherIsZeroInExpectationForConstantLikelihood) {
  // Uniform weights leave alpha/(1 - alpha^2) * L * mean(eps); each coordinate of the
  // bank mean has standard error 1/sqrt(S) before the bridge factor is applied.
  auto rng = rng_for(72);
  const auto c = linear_case(4, 2, rng);
  const ConstantLikelihood lik(4);
  const double t = 0.5;
  const Index s = 20000;
  const auto bank = NoiseBank::draw(4, s, rng);
  const auto r = guidance_fisher(c.flow, lik, random_matrix(4, 1, rng).col(0), t, bank);
  const Schedule sch;
  const Matrix l = c.flow.bridge_factor(t);
  const Vector sd = (sch.alpha(t) / sch.one_minus_alpha_sq(t)) * l.rowwise().norm() / std::sqrt(double(s));
  for (Index i = 0; i < 4; ++i) EXPECT_LT(std::abs(r.value(i)), 3.0 * sd(i)) << i;
  EXPECT_NEAR(r.ess, double(s), 1e-6 * s);
}

TEST(Guidance, ZeroBankReducesMcToDps) {
  auto rng = rng_for(64);
  const auto c = linear_case(5, 2, rng);
  const Vector f = random_matrix(5, 1, rng);
  const auto mc = guidance_mc(c.flow, *c.lik, f, 0.3, NoiseBank::zeros(5, 4));
  const auto dps = guidance_dps(c.flow, *c.lik, f, 0.3);
  EXPECT_LT((mc.value - dps.value).norm(), 1e-12 * (1.0 + dps.value.norm()));
}

TEST(Guidance, DpsAndMpgdMatchClosedForms) {
  auto rng = rng_for(65);
  const auto c = linear_case(5, 3, rng);
  const Vector f = random_matrix(5, 1, rng);
  const double t = 0.4, a = Schedule{}.alpha(t);
  const Matrix amat = a * a * c.cov + (1.0 - a * a) * Matrix::Identity(5, 5);
  const Vector mu = c.mean + a * c.cov * amat.inverse() * (f - a * c.mean);
  const Vector grad = c.g.transpose() * (c.y - c.g * mu) / c.s2;
  EXPECT_LT((guidance_mpgd(c.flow, *c.lik, f, t).value - grad).norm(), 1e-10 * grad.norm());
  const Vector dps = a * c.cov * amat.inverse() * grad;
  EXPECT_LT((guidance_dps(c.flow, *c.lik, f, t).value - dps).norm(), 1e-10 * dps.norm());
}

TEST(Guidance, McConvergesToExactLinearGaussianGuidance) {
  auto rng = rng_for(66);
  const auto c = linear_case(6, 3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const double t = uniform(rng, 0.05, 1.0);
    const Vector f = random_matrix(6, 1, rng);
    const Vector exact = c.exact_guidance(f, t);
    const auto bank = NoiseBank::draw(6, 40000, rng);
    const auto r = guidance_mc(c.flow, *c.lik, f, t, bank);
    EXPECT_LT((r.value - exact).norm(), 0.03 * exact.norm()) << "t = " << t;
  }
}

TEST(Guidance, FisherConvergesToExactLinearGaussianGuidance) {
  auto rng = rng_for(67);
  const auto c = linear_case(6, 3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    // The Fisher form divides by 1 - alpha^2, so it is noisy at small t.
    const double t = uniform(rng, 0.3, 1.0);
    const Vector f = random_matrix(6, 1, rng);
    const Vector exact = c.exact_guidance(f, t);
    const auto r = guidance_fisher(c.flow, *c.lik, f, t, NoiseBank::draw(6, 40000, rng));
    EXPECT_LT((r.value - exact).norm(), 0.05 * exact.norm()) << "t = " << t;
  }
}

TEST(Guidance, SingleDrawMcIsJacobianTimesScoreAtThatDraw) {
  auto rng = rng_for(68);
  const auto c = linear_case(4, 2, rng);
  const Vector f = random_matrix(4, 1, rng);
  const double t = 0.6;
  const auto bank = NoiseBank::draw(4, 1, rng);
  const Vector x0 = c.flow.bridge_mean(f, t).col(0) + c.flow.bridge_factor(t) * bank.eps.col(0);
  const Vector expected = c.flow.apply_denoiser_jacobian(c.lik->at(x0).second, t).col(0);
  const auto r = guidance_mc(c.flow, *c.lik, f, t, bank);
  EXPECT_LT((r.value - expected).norm(), 1e-12 * (1.0 + expected.norm()));
  EXPECT_EQ(r.ess, 1.0);
}

TEST(Guidance, CollapsedWeightsReturnZero) {
  auto rng = rng_for(69);
  const auto flow = FlowOperator::standard(3, Schedule{});
  const NegInfLikelihood lik(3);
  const auto r = guidance_mc(flow, lik, Vector::Zero(3), 0.5, NoiseBank::draw(3, 5, rng));
  EXPECT_TRUE(r.collapsed);
  EXPECT_EQ(r.value.norm(), 0.0);
  EXPECT_TRUE(guidance_fisher(flow, lik, Vector::Zero(3), 0.5, NoiseBank::draw(3, 5, rng)).collapsed);
}

TEST(Guidance, DispatchMatchesDirectCalls) {
  auto rng = rng_for(70);
  const auto c = linear_case(4, 2, rng);
  const Vector f = random_matrix(4, 1, rng);
  const auto bank = NoiseBank::draw(4, 6, rng);
  GuidanceConfig cfg;
  for (Estimator e : {Estimator::MC, Estimator::Fisher, Estimator::DPS, Estimator::MPGD}) {
    cfg.estimator = e;
    const Vector via = guidance(c.flow, *c.lik, f, 0.5, cfg, bank).value;
    Vector direct;
    switch (e) {
      case Estimator::MC: direct = guidance_mc(c.flow, *c.lik, f, 0.5, bank).value; break;
      case Estimator::Fisher: direct = guidance_fisher(c.flow, *c.lik, f, 0.5, bank).value; break;
      case Estimator::DPS: direct = guidance_dps(c.flow, *c.lik, f, 0.5).value; break;
      case Estimator::MPGD: direct = guidance_mpgd(c.flow, *c.lik, f, 0.5).value; break;
    }
    EXPECT_EQ((via - direct).norm(), 0.0) << to_string(e);
  }
}

TEST(Guidance, EstimatorNamesRoundTrip) {
  for (Estimator e : {Estimator::MC, Estimator::Fisher, Estimator::DPS, Estimator::MPGD})
    EXPECT_EQ(estimator_from_string(to_string(e)), e);
  EXPECT_THROW(estimator_from_string("bogus"), ConfigError);
}

TEST(Guidance, BankDimensionIsChecked) {
  auto rng = rng_for(71);
  const auto flow = FlowOperator::standard(3, Schedule{});
  const ConstantLikelihood c(3);
  EXPECT_THROW(guidance_mc(flow, c, Vector::Zero(3), 0.5, NoiseBank::draw(4, 2, rng)), DimensionError);
}
