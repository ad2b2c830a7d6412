#include <gtest/gtest.h>

#include <gpreach/mpc.hpp>

using namespace gpreach;

namespace {

VectorXd s1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

// x+ = a x + u + g(x)
KnownModel scalar_plant(double a)
{
  KnownModel m;
  m.name     = "scalar";
  m.nx       = 1;
  m.nu       = 1;
  m.ng       = 1;
  m.f        = [a](const VectorXd & x, const VectorXd & u) { return (a * x + u).eval(); };
  m.Bd       = [](const VectorXd &) { return m1(1.0); };
  m.partials = [a](const VectorXd &, const VectorXd &, const VectorXd &, MatrixXd & A, MatrixXd & B) {
    A = m1(a);
    B = m1(1.0);
  };
  m.gp_inputs = {0};
  return m;
}

std::shared_ptr<DynamicsFunction> constant_fn(double c)
{
  return std::make_shared<LambdaFunction>(1, 1, [c](const VectorXd &) { return s1(c); },
                                          [](const VectorXd &) { return m1(0.0); });
}

std::shared_ptr<DynamicsFunction> sine_fn(double amp, double phase)
{
  return std::make_shared<LambdaFunction>(
      1, 1, [=](const VectorXd & z) { return s1(amp * std::sin(z(0) + phase)); },
      [=](const VectorXd & z) { return m1(amp * std::cos(z(0) + phase)); });
}

Polytope interval(double lo, double hi) { return Polytope::from_box(Box{s1(lo), s1(hi)}); }

OcpConfig scalar_cfg(Index H, double q, double r, double pf)
{
  OcpConfig c;
  c.H     = H;
  c.Q     = m1(q);
  c.R     = m1(r);
  c.Pf    = m1(pf);
  c.x_ref = s1(0.0);
  c.u_ref = s1(0.0);
  c.x_eq  = s1(0.0);
  c.u_eq  = s1(0.0);
  c.K     = m1(0.0);
  c.X     = interval(-100.0, 100.0);
  c.U     = interval(-100.0, 100.0);
  c.tight = no_tightening(H);
  return c;
}

std::vector<const DynamicsFunction *> raw(const std::vector<std::shared_ptr<DynamicsFunction>> & v)
{
  std::vector<const DynamicsFunction *> out;
  for (const auto & p : v) { out.push_back(p.get()); }
  return out;
}

// Brute-force sample-summed cost of an open-loop input pair on the scalar plant.
double brute_cost(const KnownModel & m, const OcpConfig & c, const std::vector<std::shared_ptr<DynamicsFunction>> & fns,
                  double x0, double v0, double v1)
{
  double J = 0.0;
  for (const auto & g : fns) {
    double x = x0;
    for (double v : {v0, v1}) {
      J += c.Q(0, 0) * x * x + c.R(0, 0) * v * v;
      x = m.step(s1(x), s1(v), g->value(s1(x)))(0);
    }
    J += c.Pf(0, 0) * x * x;
  }
  return J;
}

}  // namespace

TEST(SolveOcp, ScalarStateConstraintActive)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(1, 0.0, 1.0, 0.0);
  c.X                = interval(-1.0, 1.0);
  auto g             = constant_fn(0.0);
  const auto sol     = solve_ocp(c, m, {g.get()}, s1(2.0), std::nullopt, 50, 50);
  // Grid oracle: min u^2 over |2 + u| <= 1.
  double best = 1e300, ubest = 0.0;
  for (int i = 0; i <= 200000; ++i) {
    const double u = -10.0 + 1e-4 * i;
    if (std::abs(2.0 + u) <= 1.0 && u * u < best) {
      best  = u * u;
      ubest = u;
    }
  }
  EXPECT_NEAR(ubest, -1.0, 1e-4);
  EXPECT_EQ(sol.status, OcpStatus::Converged);
  EXPECT_NEAR(sol.first_input()(0), -1.0, 1e-8);
  EXPECT_NEAR(sol.objective, 1.0, 1e-8);
  EXPECT_LE(sol.kkt_residual, 1e-6);
}

TEST(SolveOcp, StationaryReferenceHasZeroCost)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(5, 1.0, 1.0, 1.0);
  c.x_ref = c.x_eq = s1(0.5);
  auto g           = constant_fn(0.0);
  const auto sol   = solve_ocp(c, m, {g.get()}, s1(0.5), std::nullopt, 20, 20);
  EXPECT_NEAR(sol.objective, 0.0, 1e-14);
  EXPECT_LE(sol.v.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(sol.status, OcpStatus::Converged);
}

TEST(SolveOcp, OpposingDriftsMatchGridSearch)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(2, 1.0, 0.5, 1.0);
  c.U                = interval(-0.4, 0.4);
  const std::vector<std::shared_ptr<DynamicsFunction>> fns = {sine_fn(0.2, 0.3), sine_fn(-0.15, -0.2)};
  const double x0 = 1.0;
  const auto sol  = solve_ocp(c, m, raw(fns), s1(x0), std::nullopt, 50, 50);
  ASSERT_TRUE(sol.feasible());
  double best = 1e300, b0 = 0, b1 = 0;
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      const double v0 = -0.4 + 0.002 * i, v1 = -0.4 + 0.002 * j;
      const double J  = brute_cost(m, c, fns, x0, v0, v1);
      if (J < best) {
        best = J;
        b0   = v0;
        b1   = v1;
      }
    }
  }
  EXPECT_LE(sol.objective, best + 1e-9);
  EXPECT_NEAR(sol.objective, brute_cost(m, c, fns, x0, sol.v(0), sol.v(1)), 1e-12);
  EXPECT_NEAR(sol.v(0), b0, 4e-3);
  EXPECT_NEAR(sol.v(1), b1, 4e-3);
  EXPECT_LE(sol.kkt_residual, 1e-6);
}

TEST(SolveOcp, PrestabilizedInputsAreTightened)
{
  // With u_i = K x_i + v_i, the input row at stage 1 loses |K| Delta_1 = 0.1.
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(2, 1.0, 1e-3, 1.0);
  c.x_ref = c.x_eq = s1(10.0);
  c.K                = m1(-0.5);
  c.U                = interval(-1.0, 1.0);
  c.tight.c          = (VectorXd(2) << 0.2, 0.2).finished();
  c.tight.Delta      = (VectorXd(3) << 0.0, 0.2, 0.4).finished();
  auto g             = constant_fn(0.0);
  const auto sol     = solve_ocp(c, m, {g.get()}, s1(0.0), std::nullopt, 50, 50);
  ASSERT_EQ(sol.status, OcpStatus::Converged);
  EXPECT_NEAR(sol.u[0][0](0), 1.0, 1e-8);
  EXPECT_NEAR(sol.u[0][1](0), 0.9, 1e-8);
  EXPECT_LE(sol.kkt_residual, 1e-6);
}

TEST(SolveOcp, InfeasibleWhenStateRowCannotBeMet)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(1, 1.0, 1.0, 0.0);
  c.X                = interval(-1.0, 1.0);
  c.U                = interval(-0.5, 0.5);
  auto g             = constant_fn(0.0);
  const auto sol     = solve_ocp(c, m, {g.get()}, s1(3.0), std::nullopt, 30, 30);
  EXPECT_EQ(sol.status, OcpStatus::Infeasible);
  EXPECT_FALSE(sol.violated_rows.empty());
  EXPECT_NEAR(sol.first_input()(0), -0.5, 1e-6);
}

TEST(SolveOcp, TerminalSetRowIsRespected)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(3, 0.0, 1.0, 1.0);
  c.rho              = 0.25;
  c.tight.c          = VectorXd::Constant(3, 0.05);
  c.tight.Delta      = (VectorXd(4) << 0.0, 0.05, 0.1, 0.15).finished();
  auto g             = constant_fn(0.0);
  const auto sol     = solve_ocp(c, m, {g.get()}, s1(2.0), std::nullopt, 100, 100);
  ASSERT_TRUE(sol.feasible());
  // Radius 0.25 - 0.05; the cheapest way in spreads the move evenly.
  EXPECT_NEAR(sol.x[0][3](0), 0.2, 1e-7);
  EXPECT_NEAR(sol.v(0), -0.6, 1e-6);
  EXPECT_LE(sol.kkt_residual, 1e-6);
  c.tight.c(2) = 0.3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SolveOcp, SensitivitiesMatchFiniteDifferences)
{
  const KnownModel m = pendulum_model(10.0, 0.015);
  auto g             = std::make_shared<LambdaFunction>(
      2, 1, [](const VectorXd & z) { return s1(0.01 * std::sin(z(0)) + 0.02 * std::tanh(z(1))); });
  OcpConfig c;
  c.H     = 4;
  c.Q     = MatrixXd::Identity(2, 2);
  c.R     = m1(0.1);
  c.Pf    = 2.0 * MatrixXd::Identity(2, 2);
  c.x_ref = c.x_eq = (VectorXd(2) << 3.0, 0.0).finished();
  c.u_ref = c.u_eq = s1(0.0);
  c.K              = (MatrixXd(1, 2) << -0.3, -0.1).finished();
  c.X              = Polytope::from_box(Box{(VectorXd(2) << 1.0, -5.0).finished(), (VectorXd(2) << 4.0, 5.0).finished()});
  c.U              = interval(-2.0, 2.0);
  c.rho            = 3.0;
  c.tight          = no_tightening(4);
  const VectorXd x0 = (VectorXd(2) << 2.2, 1.0).finished();
  const VectorXd v  = (VectorXd(4) << 0.3, -0.2, 0.5, 0.1).finished();
  const auto e      = detail::evaluate(c, m, {g.get()}, x0, v, true);
  for (Index j = 0; j < 4; ++j) {
    VectorXd vp = v, vm = v;
    vp(j) += 1e-6;
    vm(j) -= 1e-6;
    const auto ep = detail::evaluate(c, m, {g.get()}, x0, vp, false);
    const auto em = detail::evaluate(c, m, {g.get()}, x0, vm, false);
    EXPECT_NEAR(e.grad(j), (ep.J - em.J) / 2e-6, 1e-5);
    EXPECT_LE((e.Jc.col(j) - (ep.c - em.c) / 2e-6).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(UpdateSampleSet, InfiniteBoundKeepsEverySample)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(3, 1.0, 1.0, 1.0);
  SampleSet set      = SampleSet::all({constant_fn(0.0), constant_fn(0.3), constant_fn(-0.3)});
  const auto sol     = solve_ocp(c, m, set.active_functions(), s1(1.0));
  c.tight.c          = VectorXd::Constant(3, std::numeric_limits<double>::infinity());
  const VectorXd cand = update_sample_set(set, c, m, sol, s1(5.0), 0);
  EXPECT_EQ(set.active.size(), 3u);
  EXPECT_TRUE(set.removals.empty());
  EXPECT_EQ(cand(0), sol.v(1));
  EXPECT_EQ(cand(1), sol.v(2));
  EXPECT_EQ(cand(2), c.u_eq(0));
}

TEST(UpdateSampleSet, DeviatingSampleIsRemovedAtStageZero)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(3, 1.0, 1.0, 1.0);
  c.tight.c          = VectorXd::Constant(3, 0.1);
  SampleSet set      = SampleSet::all({constant_fn(0.0), constant_fn(0.2)});
  const auto sol     = solve_ocp(c, m, set.active_functions(), s1(1.0));
  // The truth follows sample 0 exactly.
  const VectorXd x1 = m.step(s1(1.0), sol.first_input(), s1(0.0));
  update_sample_set(set, c, m, sol, x1, 7);
  ASSERT_EQ(set.active, std::vector<Index>{0});
  ASSERT_EQ(set.removals.size(), 1u);
  EXPECT_EQ(set.removals[0].time, 7);
  EXPECT_EQ(set.removals[0].sample, 1);
  EXPECT_EQ(set.removals[0].stage, 0);
  EXPECT_NEAR(set.removals[0].deviation, 0.2, 1e-12);
  EXPECT_EQ(set.removals[0].bound, 0.1);
}

TEST(UpdateSampleSet, EmptySetThrows)
{
  const KnownModel m = scalar_plant(1.0);
  OcpConfig c        = scalar_cfg(2, 1.0, 1.0, 1.0);
  c.tight.c          = VectorXd::Constant(2, 0.1);
  SampleSet set      = SampleSet::all({constant_fn(0.5), constant_fn(-0.5)});
  const auto sol     = solve_ocp(c, m, set.active_functions(), s1(1.0));
  const VectorXd x1  = m.step(s1(1.0), sol.first_input(), s1(0.0));
  EXPECT_THROW(update_sample_set(set, c, m, sol, x1, 0), CertificateViolated);
  EXPECT_TRUE(set.active.empty());
  EXPECT_THROW(solve_ocp(c, m, {}, s1(1.0)), CertificateViolated);
}

TEST(Terminal, ScalarDecreaseNeedsFourThirds)
{
  // x+ = 0.5 x, Q = 1, K = 0: P (1 - 0.25) >= 1.
  const std::vector<MatrixXd> As{m1(0.5)}, Bs{m1(0.0)};
  EXPECT_NEAR(lyapunov_inflation(m1(1.0), m1(0.0), As, Bs, m1(1.0), m1(1.0), 0.0), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(lyapunov_inflation(m1(4.0 / 3.0), m1(0.0), As, Bs, m1(1.0), m1(1.0), 0.0), 1.0, 1e-12);
  EXPECT_LE(lyapunov_inflation(m1(2.0), m1(0.0), As, Bs, m1(1.0), m1(1.0), 0.0), 1.0);
  EXPECT_NEAR(solve_dare(m1(0.5), m1(0.0), m1(1.0), m1(1.0))(0, 0), 4.0 / 3.0, 1e-12);
  Index worst = -1;
  EXPECT_TRUE(std::isinf(lyapunov_inflation(m1(1.0), m1(0.0), {m1(0.5), m1(1.1)}, {m1(0.0), m1(0.0)}, m1(1.0),
                                            m1(1.0), 0.0, &worst)));
  EXPECT_EQ(worst, 1);
}

TEST(Terminal, DareSolvesRiccatiAndIdenticalSamplesKeepIt)
{
  MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.1, 0.0, 1.05;
  B << 0.0, 0.1;
  const MatrixXd Q = MatrixXd::Identity(2, 2), R = m1(0.5);
  const MatrixXd P = solve_dare(A, B, Q, R);
  const MatrixXd K = lqr_gain(A, B, R, P);
  const MatrixXd Acl = A + B * K;
  // Closed-loop Lyapunov identity of the Riccati solution.
  EXPECT_LE((Acl.transpose() * P * Acl - P + Q + K.transpose() * R * K).norm(), 1e-9 * P.norm());
  EXPECT_NEAR(lyapunov_inflation(P, K, {A, A}, {B, B}, Q, R, 0.0), 1.0, 1e-8);

  // The same plant through design_terminal_controller with identical samples.
  KnownModel m;
  m.nx       = 2;
  m.nu       = 1;
  m.ng       = 1;
  m.f        = [A, B](const VectorXd & x, const VectorXd & u) { return (A * x + B * u).eval(); };
  m.Bd       = [](const VectorXd &) { return MatrixXd::Zero(2, 1); };
  m.gp_inputs = {0};
  auto g     = constant_fn(0.0);
  const auto t = design_terminal_controller(m, *g, {g.get(), g.get()}, VectorXd::Zero(2), s1(0.0), Q, R);
  EXPECT_EQ(t.inflation, 1.0);
  EXPECT_LE((t.P - P).norm(), 1e-6 * P.norm());
}

TEST(Terminal, LevelIsRobustlyInvariant)
{
  const KnownModel m = scalar_plant(0.9);
  auto mean          = constant_fn(0.0);
  std::vector<std::shared_ptr<DynamicsFunction>> fns = {sine_fn(0.01, 0.0), sine_fn(-0.01, 0.5), mean};
  auto t = design_terminal_controller(m, *mean, raw(fns), s1(0.0), s1(0.0), m1(1.0), m1(1.0));
  const Polytope X = interval(-1.0, 1.0), U = interval(-1.0, 1.0);
  select_terminal_level(t, m, raw(fns), X, U, Metric::euclidean(), 0.002, 0.01, m1(1.0), m1(1.0), s1(0.0), s1(0.0));
  ASSERT_GT(t.rho, 0.0);
  EXPECT_LE(t.rho, t.rho_max);
  const double sp = std::sqrt(t.P(0, 0));
  for (const auto & g : fns) {
    for (double s : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
      const double x  = s * t.rho / sp;
      const double u  = t.K(0, 0) * x;
      const double xn = m.step(s1(x), s1(u), g->value(s1(x)))(0);
      EXPECT_LE(sp * std::abs(xn), t.rho - 0.002 * sp + 1e-12);
    }
  }
  EXPECT_GE(t.ell_s, 0.0);
  EXPECT_THROW(select_terminal_level(t, m, raw(fns), X, U, Metric::euclidean(), 5.0, 0.01, m1(1.0), m1(1.0), s1(0.0),
                                     s1(0.0)),
               InfeasibleError);
}

TEST(AverageCost, EquilibriumAndSingleStep)
{
  RunLog log;
  for (int k = 0; k < 5; ++k) {
    StepRecord r;
    r.stage_cost = 0.125;
    r.applied    = k < 4;
    log.steps.push_back(r);
  }
  EXPECT_EQ(average_cost(log), 0.125);
  RunLog one;
  StepRecord r;
  r.stage_cost = 3.0;
  r.applied    = true;
  one.steps.push_back(r);
  EXPECT_EQ(average_cost(one), 3.0);
  EXPECT_THROW(average_cost(RunLog{}), ConfigError);
}

TEST(RecedingHorizon, ZeroStepsLogsOnlyTheInitialSolve)
{
  TruePlant p{scalar_plant(1.0), constant_fn(0.0), BoundedNoise(s1(0.0), NoiseKind::Uniform, RngStream(1, 1))};
  OcpConfig c   = scalar_cfg(3, 1.0, 1.0, 1.0);
  SampleSet set = SampleSet::all({constant_fn(0.0)});
  RecedingOptions o;
  o.steps            = 0;
  const RunLog log   = receding_horizon(c, p, set, s1(1.0), o);
  ASSERT_EQ(log.steps.size(), 1u);
  EXPECT_FALSE(log.steps[0].applied);
  EXPECT_EQ(log.outcome, "ok");
}

TEST(RecedingHorizon, NominalClosedLoopFollowsPrediction)
{
  auto g = sine_fn(0.1, 0.0);
  TruePlant p{scalar_plant(1.0), g, BoundedNoise(s1(0.0), NoiseKind::Uniform, RngStream(1, 1))};
  OcpConfig c = scalar_cfg(5, 1.0, 0.3, 2.0);
  c.U         = interval(-0.5, 0.5);
  c.tight.c   = VectorXd::Constant(5, 1e-9);
  c.tight.Delta.setLinSpaced(6, 0.0, 5e-9);
  SampleSet set = SampleSet::all({g});
  RecedingOptions o;
  o.steps              = 12;
  o.record_predictions = true;
  const RunLog log     = receding_horizon(c, p, set, s1(2.0), o);
  ASSERT_EQ(log.steps.size(), 13u);
  EXPECT_EQ(log.outcome, "ok");
  EXPECT_TRUE(log.removals.empty());
  for (size_t k = 0; k + 1 < log.steps.size(); ++k) {
    EXPECT_LE(std::abs(log.steps[k + 1].x(0) - log.predictions[k][0][1](0)), 1e-12);
    EXPECT_TRUE(log.steps[k].feasible);
  }
  EXPECT_LT(std::abs(log.steps.back().x(0)), 0.5);
}

TEST(CostConstants, MatchesGeometricSums)
{
  const auto a = cost_constants(1.0, 2.0, 1.0, 1.0, 1, 0.0, 0.0);
  EXPECT_EQ(a.K1, 1.0);
  EXPECT_EQ(a.K2, 1.0);
  // H = 3, L = 2: sum L^i = 3, sum (L^i + 2 sum_{j<i} L^j) = 5, L^2 = 4.
  const auto b = cost_constants(0.5, 2.0, 3.0, 7.0, 3, 0.1, 0.01);
  EXPECT_NEAR(b.K1, 0.5 * (3 * 3.0 + 4 * 7.0), 1e-12);
  EXPECT_NEAR(b.K2, 0.5 * (5 * 3.0 + 7.0 * (4 + 2 * 3)), 1e-12);
  EXPECT_NEAR(b.Lc, 0.1 * b.K1 + 0.01 * b.K2, 1e-12);
  // Closed forms for L != 1.
  const double L = 1.3, Ll = 0.7, Lf = 2.1;
  const Index H  = 10;
  const double G = (std::pow(L, H - 1) - 1.0) / (L - 1.0);
  double inner   = 0.0;
  for (Index i = 0; i <= H - 2; ++i) { inner += (std::pow(L, i) - 1.0) / (L - 1.0); }
  const auto c = cost_constants(1.0, L, Ll, Lf, H, 0.0, 0.0);
  EXPECT_NEAR(c.K1, G * Ll + std::pow(L, H - 1) * Lf, 1e-10);
  EXPECT_NEAR(c.K2, Ll * (G + 2 * inner) + Lf * (std::pow(L, H - 1) + 2 * G), 1e-10);
  EXPECT_THROW(cost_constants(1.0, L, Ll, Lf, 0, 0.0, 0.0), ConfigError);
}
