#include <gtest/gtest.h>

#include <gpreach/complexity.hpp>

using namespace gpreach;

namespace {

GpPosterior single_datum()
{
  return GpPosterior(Kernel::squared_exponential(1.0, VectorXd::Ones(1)), MatrixXd::Zero(1, 1), VectorXd::Ones(1), 1.0);
}

GpPosterior empty_gp(double sf2 = 1.0)
{
  return GpPosterior(Kernel::squared_exponential(sf2, VectorXd::Ones(1)), MatrixXd(0, 1), VectorXd(0), 1.0, 1);
}

}  // namespace

TEST(BetaD, NoDataHandArithmetic)
{
  const double beta = beta_d(empty_gp(), 1.0, 0.1);
  EXPECT_NEAR(std::sqrt(beta), 1.0 + std::sqrt(2.0 * std::log(20.0)), 1e-12);
  EXPECT_NEAR(beta, 11.887, 1e-3);
}

TEST(BetaD, LargeLambdaLimitAndMonotoneInData)
{
  MatrixXd Z(3, 1);
  Z << 0, 0.5, 1;
  GpPosterior wide(Kernel::squared_exponential(1.0, VectorXd::Ones(1)), Z, VectorXd::Ones(3), 1e4);
  EXPECT_NEAR(beta_d(wide, 1.0, 0.1), std::pow(1.0 + std::sqrt(2.0 * std::log(20.0)), 2), 1e-6);
  double prev = 0.0;
  for (Index D = 1; D <= 3; ++D) {
    GpPosterior gp(Kernel::squared_exponential(1.0, VectorXd::Ones(1)), Z.topRows(D), VectorXd::Ones(D), 0.1);
    const double b = beta_d(gp, 1.0, 0.1);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_THROW(beta_d(wide, 1.0, 1.5), ConfigError);
}

TEST(CdSubGaussian, HandArithmetic)
{
  EXPECT_NEAR(c_d_subgaussian(empty_gp(), 2.0, 0.1), 2.0, 1e-15);

  // alpha = 0.5, sigma(z1)^2 = 0.5, ||mu||^2 = 0.25, lambda = 1, logdet = ln 2.
  const double beta = std::pow(1.0 + std::sqrt(std::log(2.0) + 2.0 * std::log(20.0)), 2);
  const double want = 0.5 * (1.0 - 0.25 + 2.0 * 0.5 * std::sqrt(beta) * std::sqrt(0.5) + beta * 0.5);
  EXPECT_NEAR(c_d_subgaussian(single_datum(), 1.0, 0.1), want, 1e-12);

  double prev = -1e300;
  for (double bg : {0.5, 1.0, 2.0, 4.0}) {
    const double c = c_d_subgaussian(single_datum(), bg, 0.1);
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(CdBounded, HandArithmetic)
{
  EXPECT_NEAR(c_d_bounded(empty_gp(), 3.0, 0.0), 4.5, 1e-15);
  EXPECT_NEAR(c_d_bounded(single_datum(), 1.0, 0.0), 0.25, 1e-15);
  double prev = -1.0;
  for (double w : {0.0, 0.01, 0.1, 0.5}) {
    const double c = c_d_bounded(single_datum(), 1.0, w);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(CdBounded, EqualsClosedRearrangement)
{
  // (B^2 - ||mu||^2 - lambda^2 ||alpha||^2 + 4 wbar ||alpha||_1 + D wbar^2 / lambda^2) / 2
  MatrixXd Z(6, 2);
  Z << 0, 0, 1, 0, 0, 1, 1, 1, -1, 0.5, 0.3, -0.8;
  VectorXd y(6);
  y << 0.2, -0.4, 0.1, 0.9, -0.3, 0.05;
  const double lam = 0.2, w = 0.03, B = 2.0;
  GpPosterior gp(Kernel::squared_exponential(0.7, VectorXd::Constant(2, 0.9)), Z, y, lam);
  const VectorXd & a = gp.alpha();
  const double mu2   = std::pow(gp.mean_rkhs_norm(), 2);
  const double want  = 0.5 * (B * B - mu2 - lam * lam * a.squaredNorm() + 4 * w * a.lpNorm<1>() + 6 * w * w / (lam * lam));
  EXPECT_NEAR(c_d_bounded(gp, B, w), want, 1e-10 * std::abs(want));
}

TEST(NSamples, ArithmeticOracle)
{
  EXPECT_EQ(n_samples(5.0, 0.01, NoiseMode::SubGaussian), 784u);
  EXPECT_EQ(n_samples(5.0, 0.01, NoiseMode::Bounded), 682u);
  EXPECT_EQ(n_samples(1e-12, 0.01, NoiseMode::SubGaussian), 1u);
  EXPECT_EQ(n_samples(0.0, 0.01, NoiseMode::Bounded), 1u);
  // 60-digit reference values.
  EXPECT_EQ(n_samples(30.0, 0.01, NoiseMode::SubGaussian), 56620333862463ull);
  EXPECT_EQ(n_samples(12.5, 1e-3, NoiseMode::Bounded), 1853605ull);
  EXPECT_THROW(n_samples(800.0, 0.01, NoiseMode::Bounded), InfeasibleSampleCount);
  EXPECT_THROW(n_samples(1.0, 0.0, NoiseMode::Bounded), ConfigError);
}

TEST(NSamples, MonotoneSweeps)
{
  std::uint64_t prev = 0;
  for (int i = 0; i < 20; ++i) {
    const auto n = n_samples(0.5 + 0.5 * i, 0.05, NoiseMode::Bounded);
    EXPECT_GE(n, prev);
    prev = n;
  }
  prev = ~0ull;
  for (int i = 1; i <= 20; ++i) {
    const auto n = n_samples(4.0, 0.04 * i, NoiseMode::SubGaussian);
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(NSamplesVector, ReducesAndAccumulates)
{
  EXPECT_EQ(n_samples_vector({2.0}, {3.0}, 0.01, NoiseMode::SubGaussian), n_samples(5.0, 0.01, NoiseMode::SubGaussian));
  EXPECT_EQ(n_samples_vector({1.0, 1.0, 1.0}, {2.0 / 3, 2.0 / 3, 2.0 / 3}, 0.01, NoiseMode::SubGaussian), 784u);
  EXPECT_GE(n_samples_vector({1.0, 1.0}, {1.0, 1.0}, 0.01, NoiseMode::Bounded),
            n_samples_vector({1.0}, {1.0}, 0.01, NoiseMode::Bounded));
}

TEST(RateBound, ArithmeticAndMonotone)
{
  EXPECT_NEAR(rate_bound(KernelKind::SquaredExponential, std::exp(-1.0), 1, 1.0), std::exp(1.0), 1e-12);
  EXPECT_NEAR(rate_bound(KernelKind::Matern, 0.5, 2.5, 1.0, 2.5), std::exp(2.0), 1e-12);
  double prev = 1e300;
  for (double e = 0.05; e < 1.0; e += 0.05) {
    const double v = rate_bound(KernelKind::Matern, e, 1, 0.3, 1.5);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(EstimatePhi, SinglePointPriorMatchesNormalCdf)
{
  const GpPosterior gp = empty_gp();
  const auto e = estimate_phi(gp, 1.96, MatrixXd::Zero(1, 1), 100000, 3, Center::ZeroMeanPrior);
  const double truth = 0.0512888631304642;
  EXPECT_LE(e.phi_lo, truth);
  EXPECT_GE(e.phi_hi, truth);
  EXPECT_FALSE(e.censored);
}

TEST(EstimatePhi, TrivialAndCensoredCases)
{
  const GpPosterior gp = empty_gp();
  MatrixXd grid(3, 1);
  grid << 0, 1, 2;
  const auto big = estimate_phi(gp, 100.0, grid, 200, 1, Center::ZeroMeanPrior);
  EXPECT_EQ(big.p_hat, 1.0);
  EXPECT_EQ(big.phi_hat, 0.0);
  const auto tiny = estimate_phi(gp, 1e-9, grid, 200, 1, Center::ZeroMeanPrior);
  EXPECT_TRUE(tiny.censored);
  EXPECT_NEAR(tiny.phi_hat, std::log(201.0), 1e-12);
}

TEST(EstimatePhi, NonIncreasingInEpsAndPriorDominatesPosterior)
{
  MatrixXd Z(4, 1);
  Z << -1, 0, 1, 2;
  GpPosterior gp(Kernel::squared_exponential(1.0, VectorXd::Constant(1, 0.7)), Z, VectorXd::Zero(4), 0.3);
  MatrixXd grid(20, 1);
  for (int i = 0; i < 20; ++i) { grid(i, 0) = -1.5 + 0.2 * i; }
  const std::vector<double> eps = {0.2, 0.4, 0.6, 0.8, 1.0, 1.5};
  const auto post  = estimate_phi_table(gp, eps, grid, 20000, 5, Center::PosteriorMean);
  const auto prior = estimate_phi_table(gp, eps, grid, 20000, 5, Center::ZeroMeanPrior);
  for (size_t i = 0; i + 1 < eps.size(); ++i) { EXPECT_GE(post[i].phi_hi, post[i + 1].phi_lo); }
  // Posterior draws are more concentrated: their exponent is no larger than the prior's.
  for (size_t i = 0; i < eps.size(); ++i) { EXPECT_LE(post[i].phi_lo, prior[i].phi_hi); }
}

TEST(Certify, MonotoneInEpsAndRejectsEmptyList)
{
  MatrixXd Z(5, 1);
  Z << -1, -0.5, 0, 0.5, 1;
  auto gp = std::make_shared<const GpPosterior>(Kernel::squared_exponential(0.5, VectorXd::Constant(1, 0.6)), Z,
                                                VectorXd::Constant(5, 0.1), 0.05);
  MatrixXd grid(30, 1);
  for (int i = 0; i < 30; ++i) { grid(i, 0) = -1.0 + 2.0 * i / 29.0; }
  ComplexityOptions opt;
  opt.eps   = {0.05, 0.1, 0.2, 0.4};
  opt.delta = 0.1;
  opt.Bg    = {1.0};
  opt.wbar  = 0.01;
  opt.draws = 5000;
  const auto rep = certify({gp}, grid, opt);
  for (size_t i = 0; i + 1 < rep.rows.size(); ++i) { EXPECT_GE(rep.rows[i].N, rep.rows[i + 1].N); }
  opt.eps.clear();
  EXPECT_THROW(certify({gp}, grid, opt), ConfigError);
}
