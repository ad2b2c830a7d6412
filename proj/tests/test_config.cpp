#include <gtest/gtest.h>

#include <gpreach/config.hpp>

using namespace gpreach;

TEST(RunConfig, DefaultsAreValid)
{
  EXPECT_NO_THROW(RunConfig::defaults("pendulum").validate());
  EXPECT_NO_THROW(RunConfig::defaults("car").validate());
  EXPECT_THROW(RunConfig::defaults("boat"), ConfigError);
}

TEST(RunConfig, EmitParseRoundTrip)
{
  for (const char * plant : {"pendulum", "car"}) {
    RunConfig c = RunConfig::defaults(plant);
    c.seed      = 17;
    c.lambda    = 0.1 + 0.2;   // not exactly representable in short decimal form
    c.eps       = {1.0 / 3.0, 2e-5};
    const RunConfig back = RunConfig::parse(c.emit());
    EXPECT_EQ(back, c) << plant;
  }
}

TEST(RunConfig, PlantKeySelectsDefaultsBeforeOverrides)
{
  const RunConfig c = RunConfig::parse("# comment line\ngp.lambda = 0.5\nplant = car   # trailing\n");
  EXPECT_EQ(c.plant, "car");
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.x0.size(), 4u);
  EXPECT_EQ(c.eps, RunConfig::defaults("car").eps);
}

TEST(RunConfig, RejectsBadInput)
{
  EXPECT_THROW(RunConfig::parse("mpc.horizonn = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("complexity.eps =\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("complexity.delta = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("complexity.delta = 0\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("gp.lambda = abc\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("mpc.horizon = 2.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("mpc.eps_close = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("just some words\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("mpc.x0 = 1, 2, 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("kernel.nu = 2\n"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(RunConfig, ListsAndBooleans)
{
  RunConfig c = RunConfig::defaults("pendulum");
  c.set("complexity.eps", " 1e-3 ,2e-3,  4e-3 ");
  EXPECT_EQ(c.eps, (std::vector<double>{1e-3, 2e-3, 4e-3}));
  c.set("mpc.commit_visited", "0");
  EXPECT_FALSE(c.commit_visited);
  c.set("mpc.commit_visited", "true");
  EXPECT_TRUE(c.commit_visited);
}
