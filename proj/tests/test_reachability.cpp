#include <gtest/gtest.h>

#include <numbers>

#include <gpreach/plants.hpp>
#include <gpreach/reachability.hpp>

using namespace gpreach;

namespace {

VectorXd v2(double a, double b) { return (VectorXd(2) << a, b).finished(); }

std::vector<VectorXd> rollout_fn(const KnownModel & m, const DynamicsFunction & g, VectorXd x,
                                 const std::vector<VectorXd> & us, std::size_t from = 0)
{
  std::vector<VectorXd> xs{x};
  for (std::size_t k = from; k < us.size(); ++k) {
    x = m.step(x, us[k], g.value(m.gp_input(x, us[k])));
    xs.push_back(x);
  }
  return xs;
}

}  // namespace

TEST(TubeRadii, Arithmetic)
{
  EXPECT_NEAR(tube_radii(1.0, 0.1, 3)(3), 0.3, 1e-15);
  EXPECT_NEAR(tube_radii(2.0, 0.1, 3)(3), 0.7, 1e-15);
  EXPECT_EQ(tube_radii(1.7, 0.0, 6), VectorXd::Zero(7));
  EXPECT_EQ(tube_radii(1.3, 0.2, 0).size(), 1);
  EXPECT_THROW(tube_radii(1.0, 0.1, -1), ConfigError);
}

TEST(TubeRadii, RecursionIdentityAndClosedForm)
{
  for (double L : {0.5, 0.96, 1.0, 1.0016, 2.0}) {
    const VectorXd r = tube_radii(L, 0.037, 40);
    EXPECT_EQ(r(0), 0.0);
    for (Index k = 0; k < 40; ++k) {
      EXPECT_EQ(r(k + 1), L * r(k) + 0.037);
      EXPECT_GE(r(k + 1), r(k));
      EXPECT_NEAR(r(k + 1), tube_radius_closed_form(L, 0.037, k + 1), 1e-12 * std::max(1.0, r(k + 1)));
    }
  }
}

TEST(UncertaintyBudget, ScalarAndVector)
{
  const auto b = UncertaintyBudget::make((MatrixXd(2, 1) << 0, 1).finished(), VectorXd::Constant(1, 0.01),
                                         VectorXd::Constant(1, 0.1));
  EXPECT_NEAR(b.epsbar(), 0.11, 1e-15);
  EXPECT_NEAR(b.epistemic(), 0.01, 1e-15);
  MatrixXd Bd = MatrixXd::Zero(4, 3);
  Bd.topRows(3) = 5.0 * MatrixXd::Identity(3, 3);
  const auto c = UncertaintyBudget::make(Bd, VectorXd::Constant(3, 0.1), VectorXd::Constant(3, 0.01));
  EXPECT_NEAR(c.epsbar(), 3 * 5.0 * 0.11, 1e-12);
  const auto w = UncertaintyBudget::make(Bd, VectorXd::Constant(3, 0.1), VectorXd::Constant(3, 0.01),
                                         Metric::weighted(VectorXd::Constant(4, 4.0).asDiagonal().toDenseMatrix()));
  EXPECT_NEAR(w.epsbar(), 2.0 * c.epsbar(), 1e-12);
}

TEST(Tightenings, Arithmetic)
{
  const Tightenings t = tightenings(1.0, 0.11, 0.01, 3);
  EXPECT_NEAR(t.c(0), 0.11, 1e-15);
  EXPECT_NEAR(t.c(1), 0.13, 1e-15);
  EXPECT_NEAR(t.c(2), 0.15, 1e-15);
  EXPECT_EQ(t.Delta(0), 0.0);
  EXPECT_NEAR(t.Delta(1), 0.11, 1e-15);
  EXPECT_NEAR(t.Delta(2), 0.24, 1e-15);
  const Tightenings s = tightenings(1.0, 0.11, 0.01, 3, TighteningRule::SampleLipschitz);
  EXPECT_NEAR(s.c(2), 0.11, 1e-15);
  EXPECT_THROW(tightenings(1.0, 0.1, 0.0, 0), ConfigError);
}

TEST(Contains, EuclideanAndWeighted)
{
  ReachTube t;
  t.radii   = VectorXd::Zero(2);
  t.centers = {{v2(0, 0), v2(1, 1)}, {v2(0, 0), v2(2, 2)}};
  EXPECT_TRUE(t.contains(1, v2(2, 2)));
  EXPECT_FALSE(t.contains(1, v2(1.5, 1.5)));
  EXPECT_THROW(t.contains(2, v2(0, 0)), DimensionError);

  t.radii  = VectorXd::Constant(2, 0.9);
  t.metric = Metric::weighted((MatrixXd(2, 2) << 4, 0, 0, 1).finished());
  EXPECT_FALSE(t.contains(0, v2(0.5, 0.0)));
  EXPECT_TRUE(t.contains(0, v2(0.0, 0.5)));
}

TEST(BuildTube, ZeroBudgetSingleSampleIsTheTrajectory)
{
  const KnownModel m = pendulum_model(10.0, 0.015);
  MatrixXd Z(2, 2);
  Z << 2.5, 0.0, 3.0, 1.0;
  auto gp = std::make_shared<const GpPosterior>(Kernel::squared_exponential(0.01, VectorXd::Ones(2)), Z,
                                                VectorXd::Constant(2, 0.01), 0.01);
  std::vector<SampledDynamics> s{SampledDynamics::from_posteriors({gp}, RngStream(1, 0))};
  std::vector<VectorXd> us(6, VectorXd::Constant(1, 0.5));
  LipschitzConfig lip{1.05, Metric{}, std::nullopt};
  const auto budget = UncertaintyBudget::make(m.Bd(v2(0, 0)), VectorXd::Zero(1), VectorXd::Zero(1));
  const ReachTube t = build_tube(s, m, v2(2.4, 0.1), us, lip, budget);
  EXPECT_EQ(t.radii, VectorXd::Zero(7));
  ASSERT_EQ(t.centers.size(), 1u);
  for (Index k = 0; k <= 6; ++k) { EXPECT_TRUE(t.contains(k, t.centers[0][static_cast<size_t>(k)])); }
  EXPECT_FALSE(t.contains(6, t.centers[0][6] + v2(1e-9, 0)));
}

TEST(Baseline, ZeroUncertaintyAndGeometricGrowth)
{
  const KnownModel m = pendulum_model(10.0, 0.015);
  auto gp0 = std::make_shared<const GpPosterior>(Kernel::squared_exponential(0.0, VectorXd::Ones(2)), MatrixXd(0, 2),
                                                 VectorXd(0), 0.1, 2);
  std::vector<VectorXd> us(5, VectorXd::Zero(1));
  LipschitzConfig lip{2.0, Metric{}, std::nullopt};
  const auto zero = baseline_sequential_tube({gp0}, m, v2(3, 0), us, lip, VectorXd::Constant(1, 4.0), VectorXd::Zero(1));
  EXPECT_EQ(zero.radii, VectorXd::Zero(6));

  // Zero signal variance and wbar = 0.1 makes the per-step term exactly 0.1.
  const auto grow = baseline_sequential_tube({gp0}, m, v2(3, 0), us, lip, VectorXd::Constant(1, 4.0),
                                             VectorXd::Constant(1, 0.1));
  for (Index k = 0; k <= 5; ++k) { EXPECT_NEAR(grow.radii(k), 0.1 * (std::pow(2.0, k) - 1.0), 1e-14); }
}

TEST(Baseline, ShellUsesLargestStd)
{
  const KnownModel m = pendulum_model(10.0, 0.015);
  auto gp = std::make_shared<const GpPosterior>(Kernel::squared_exponential(1.0, VectorXd::Constant(2, 0.5)),
                                                MatrixXd::Zero(1, 2), VectorXd::Zero(1), 0.01);
  std::vector<VectorXd> us(3, VectorXd::Zero(1));
  LipschitzConfig lip{1.0, Metric{}, std::nullopt};
  const auto b = baseline_sequential_tube({gp}, m, v2(0, 0), us, lip, VectorXd::Ones(1), VectorXd::Zero(1));
  EXPECT_NEAR(b.radii(1), gp->stddev(v2(0, 0)), 1e-12);
  EXPECT_GT(b.radii(2) - b.radii(1), gp->stddev(v2(0, 0)));
  EXPECT_THROW(baseline_sequential_tube({gp}, m, v2(0, 0), us, lip, VectorXd::Ones(1), VectorXd::Zero(1), 0),
               ConfigError);
}

TEST(ClosedLoopJacobian, MatchesFiniteDifferences)
{
  const KnownModel m = car_model(1.105, 1.738, 0.06);
  LambdaFunction g(2, 3, [](const VectorXd & z) { return car_reference(z, 1.105, 1.738, 0.06); });
  VectorXd x(4), u(2);
  x << 0.3, -0.2, 0.15, 6.0;
  u << 0.1, 0.3;
  MatrixXd K = MatrixXd::Zero(2, 4);
  K(0, 1)    = -0.2;
  K(0, 2)    = -0.5;
  const MatrixXd J = closed_loop_jacobian(m, g, x, u + K * x, &K);
  for (Index j = 0; j < 4; ++j) {
    VectorXd xp = x, xm = x;
    xp(j) += 1e-6;
    xm(j) -= 1e-6;
    auto F = [&](const VectorXd & y) {
      const VectorXd uu = u + K * y;
      return m.step(y, uu, g.value(m.gp_input(y, uu)));
    };
    EXPECT_LE((J.col(j) - (F(xp) - F(xm)) / 2e-6).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(OptimizeDiagonalMetric, NeverWorseThanIdentity)
{
  MatrixXd A(2, 2);
  A << 1.0, 0.3, 0.0, 0.9;
  const MatrixXd Bd = (MatrixXd(2, 1) << 0, 1).finished();
  const VectorXd w  = optimize_diagonal_metric({A}, Bd, VectorXd::Constant(1, 0.1), 10);
  EXPECT_EQ(w.minCoeff(), 1.0);
  auto final_radius = [&](const Metric & mt) {
    const double L  = mt.operator_norm(A);
    const double eb = mt.induced_from_euclidean(Bd.col(0)) * 0.1;
    return tube_radius_closed_form(L, eb, 10) / std::sqrt(mt.is_weighted() ? mt.weight().diagonal().minCoeff() : 1.0);
  };
  EXPECT_LE(final_radius(Metric::weighted(MatrixXd(w.asDiagonal()))), final_radius(Metric{}) + 1e-12);
}

// One-step-shifted candidate deviation stays below c_i for an eps-close sample.
TEST(Tightenings, ShiftedCandidateDeviationBound)
{
  const double l = 10.0, dt = 0.015, eps = 0.004, wbar = 0.002;
  const KnownModel m = pendulum_model(l, dt);
  LambdaFunction gstar(2, 1, [&](const VectorXd & z) { return VectorXd::Constant(1, pendulum_reference(z, l, dt)); });
  LambdaFunction gn(2, 1, [&](const VectorXd & z) {
    return VectorXd::Constant(1, pendulum_reference(z, l, dt) + 0.9 * eps * std::sin(3.0 * z(0) - 2.0 * z(1) + 0.4));
  });

  // L of the true dynamics over the region the rollouts visit.
  MatrixXd XU(0, 3);
  for (double th = 1.5; th <= 4.5; th += 0.1) {
    for (double om = -3.0; om <= 3.0; om += 0.5) {
      XU.conservativeResize(XU.rows() + 1, 3);
      XU.row(XU.rows() - 1) << th, om, 0.0;
    }
  }
  const double L = estimate_lipschitz(m, {&gstar}, XU, Metric{}, nullptr, 1.10);
  const Index H  = 12;
  const auto b   = UncertaintyBudget::make(m.Bd(v2(0, 0)), VectorXd::Constant(1, eps), VectorXd::Constant(1, wbar));
  const auto t   = tightenings(L, b.epsbar(), b.epistemic(), H);

  RngStream rng(21, 0);
  BoundedNoise noise(VectorXd::Constant(1, wbar), NoiseKind::Uniform, RngStream(21, 1));
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd x0 = v2(rng.uniform(2.4, 3.8), rng.uniform(-1.0, 1.0));
    std::vector<VectorXd> us;
    for (Index i = 0; i < H; ++i) { us.push_back(VectorXd::Constant(1, 0.0)); }
    const auto pred = rollout_fn(m, gn, x0, us);
    // True step, then re-predict from the measured state with the shifted inputs.
    const VectorXd x1 = m.step(x0, us[0], gstar.value(m.gp_input(x0, us[0])) + noise.draw());
    const auto cand   = rollout_fn(m, gn, x1, us, 1);
    for (Index i = 0; i + 1 < H; ++i) {
      const double dev = (cand[static_cast<size_t>(i)] - pred[static_cast<size_t>(i + 1)]).norm();
      EXPECT_LE(dev, t.c(i) + 1e-12) << "trial " << trial << " i " << i;
    }
  }
}
