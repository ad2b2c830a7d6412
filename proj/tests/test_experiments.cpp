#include <gtest/gtest.h>

#include <gpreach/experiments.hpp>

using namespace gpreach;

TEST(Experiments, ClosedLoopRunsDoNotShareSampleState)
{
  RunConfig c = RunConfig::defaults("pendulum");
  c.n_lin     = 10;
  const Problem p = build_problem(c);
  const MpcDesign d = design_mpc(p, SampleChoice{2e-3, 4, false, false});
  const MpcRun a = run_mpc(p, d, 3, 6);
  run_mpc(p, d, 4, 6);   // commits other visited points, but only to its own copies
  const MpcRun b = run_mpc(p, d, 3, 6);
  ASSERT_EQ(a.log.steps.size(), b.log.steps.size());
  for (size_t k = 0; k < a.log.steps.size(); ++k) {
    EXPECT_EQ(a.log.steps[k].x, b.log.steps[k].x) << "step " << k;
    EXPECT_EQ(a.log.steps[k].u, b.log.steps[k].u) << "step " << k;
  }
  EXPECT_EQ(a.log.removals.size(), b.log.removals.size());
}
