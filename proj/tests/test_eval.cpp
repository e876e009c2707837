#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "sqog/eval.hpp"

using namespace sqog;

namespace {

OfflineDataset line_dataset(const std::vector<std::pair<double, double>>& sa) {
  OfflineDataset ds;
  ds.env_id = "line-reach";
  ds.state_dim = ds.action_dim = 1;
  for (const auto& [s, a] : sa) ds.transitions.push_back({{s}, {a}, 0.0, {s}, false});
  return ds;
}

}  // namespace

TEST(McOracle, HorizonOneIsImmediateReward) {
  const ContinuousEnv env = make_env("line-reach");
  auto zero = [](const Vector&, Rng&) { return Vector{0.0}; };
  McOracleConfig cfg;
  cfg.horizon = 1;
  const double s[] = {0.2}, a[] = {1.0};
  EXPECT_DOUBLE_EQ(mc_q(env, zero, s, a, cfg), env.step(s, a).reward);
}

TEST(McOracle, GeometricSumOnLineReach) {
  // From s = 0 with zero actions the state never moves; reward -0.5 forever.
  const ContinuousEnv env = make_env("line-reach");
  auto zero = [](const Vector&, Rng&) { return Vector{0.0}; };
  McOracleConfig cfg;
  cfg.horizon = 40;
  cfg.gamma = 0.9;
  const double s[] = {0.0}, a[] = {0.0};
  EXPECT_NEAR(mc_q(env, zero, s, a, cfg), -0.5 * (1.0 - std::pow(0.9, 40)) / 0.1, 1e-12);
}

TEST(McOracle, TabularAgreesWithExactQ) {
  Rng rng(13);
  const TabularMdp mdp = random_tabular_mdp(4, 3, 0.8, rng);
  const PolicyTable pi = random_policy(4, 3, rng);
  const QTable exact = exact_policy_q(mdp, pi);
  McOracleConfig cfg;
  cfg.n_rollouts = 4000;
  cfg.horizon = 120;
  cfg.seed = 5;
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(mc_q(mdp, pi, s, a, cfg), exact(s, a), 0.1) << s << "," << a;
}

TEST(McOracle, DeterministicGridworldIsExact) {
  const TabularMdp grid = make_gridworld(0.9);
  PolicyTable pi(25, 4);
  for (std::size_t s = 0; s < 25; ++s) pi(s, s % 5 == 4 ? 1 : 3) = 1.0;
  const QTable exact = exact_policy_q(grid, pi);
  McOracleConfig cfg;
  cfg.n_rollouts = 1;
  cfg.horizon = 100;
  for (std::size_t s : {0u, 7u, 18u, 23u}) EXPECT_NEAR(mc_q(grid, pi, s, 3, cfg), exact(s, 3), 1e-12);
}

TEST(Normalization, MaxAbsAndScaleInvariance) {
  const Vector c{2.0, -4.0, 1.0}, o{1.0, 0.5, -1.0};
  EXPECT_EQ(max_abs_constant(c), 4.0);
  EXPECT_EQ(max_abs_normalize(c), (Vector{0.5, -1.0, 0.25}));
  const double mae = normalized_mae(c, o);
  EXPECT_DOUBLE_EQ(mae, (0.5 + 1.5 + 1.25) / 3.0);
  Vector scaled = c;
  for (double& v : scaled) v *= 7.5;
  EXPECT_DOUBLE_EQ(normalized_mae(scaled, o), mae);
  EXPECT_THROW(max_abs_constant(Vector{0.0, 0.0}), NumericError);
  EXPECT_THROW(normalized_mae(c, Vector{1.0}), InvalidArgument);
}

TEST(QDiff, ZeroForIdenticalFunctions) {
  CriticFn f = [](std::span<const double> s, std::span<const double> a) { return s[0] - 2.0 * a[0]; };
  const std::vector<StatePoint> pts{{{0.1}, {0.3}}, {{0.5}, {-0.2}}, {{1.0}, {1.0}}};
  EXPECT_EQ(q_diff_metric(f, f, pts), 0.0);
  CriticFn g = [&](std::span<const double> s, std::span<const double> a) { return 3.0 * f(s, a); };
  EXPECT_NEAR(q_diff_metric(f, g, pts), 0.0, 1e-15);
  EXPECT_THROW(q_diff_metric(f, g, {}), InvalidArgument);
}

TEST(ActionGrid, EndpointsExact) {
  const Vector g = action_grid(-2.0, 2.0, 0.01);
  ASSERT_EQ(g.size(), 401u);
  EXPECT_EQ(g.front(), -2.0);
  EXPECT_EQ(g[200], 0.0);
  EXPECT_EQ(g.back(), 2.0);
  EXPECT_THROW(action_grid(-1.0, 1.0, 0.3), InvalidArgument);
  EXPECT_THROW(action_grid(1.0, 1.0, 0.1), InvalidArgument);
}

TEST(QGrid, ThreePointReport) {
  const OfflineDataset ds = line_dataset({{0.0, -1.0}, {0.0, -0.98}, {0.0, 1.0}, {0.5, 0.0}});
  CriticFn critic = [](std::span<const double>, std::span<const double> a) { return 1.0 + a[0]; };
  OracleFn oracle = [](std::span<const double>, std::span<const double> a) { return -2.0 * a[0] * a[0]; };
  const ChnQuery chn = ChnQuery(state_action_points(ds)).with_radius(0.0, 2.0);
  const double s[] = {0.0};
  const QGridReport rep = q_grid(critic, oracle, s, -1.0, 1.0, ds, {1.0, 0.05, 0.0}, &chn);
  ASSERT_EQ(rep.size(), 3u);
  EXPECT_EQ(rep.critic_values, (Vector{0.0, 1.0, 2.0}));
  EXPECT_EQ(rep.oracle_values, (Vector{-2.0, 0.0, -2.0}));
  EXPECT_EQ(rep.critic_norm_constant, 2.0);
  EXPECT_EQ(rep.oracle_norm_constant, 2.0);
  // Tol-ball counts at s = 0: a=-1 sees 2 of 3, a=0 none, a=1 sees 1 of 3.
  EXPECT_DOUBLE_EQ(rep.density[0], 2.0 / 3.0);
  EXPECT_EQ(rep.density[1], 0.0);
  EXPECT_DOUBLE_EQ(rep.density[2], 1.0 / 3.0);
  // (0, 0) lies on the segment between (0,-1) and (0,1).
  EXPECT_EQ(rep.in_chn, (std::vector<bool>{true, true, true}));
  EXPECT_EQ(sanity_mask(rep), (std::vector<bool>{false, true, false}));
  EXPECT_DOUBLE_EQ(*masked_mae(rep, sanity_mask(rep)), 0.5);
  EXPECT_EQ(ood_region_mask(rep, 0.5), (std::vector<bool>{false, true, true}));
  EXPECT_FALSE(masked_mae(rep, {false, false, false}).has_value());
}

TEST(QGrid, WithoutChnNothingIsContained) {
  const OfflineDataset ds = line_dataset({{0.0, 0.0}});
  CriticFn one = [](std::span<const double>, std::span<const double> a) { return 1.0 + a[0]; };
  const double s[] = {0.0};
  const QGridReport rep = q_grid(one, one, s, -1.0, 1.0, ds, {0.5, 0.05, 0.0});
  for (bool b : rep.in_chn) EXPECT_FALSE(b);
  OfflineDataset two = ds;
  two.action_dim = 2;
  EXPECT_THROW(q_grid(one, one, s, -1.0, 1.0, two, {}), InvalidArgument);
}

TEST(QGrid, CsvParsesBack) {
  const OfflineDataset ds = line_dataset({{0.0, 0.1}, {0.0, 0.3}});
  CriticFn critic = [](std::span<const double>, std::span<const double> a) { return std::sin(a[0]) + 0.3; };
  OracleFn oracle = [](std::span<const double>, std::span<const double> a) { return std::exp(a[0]) / 3.0; };
  const double s[] = {0.0};
  const QGridReport rep = q_grid(critic, oracle, s, -1.0, 1.0, ds, {0.1, 0.05, 0.0});
  const auto rows = parse_csv(grid_csv(rep));
  ASSERT_EQ(rows.size(), rep.size() + 1);
  EXPECT_EQ(rows[0].size(), 8u);
  EXPECT_EQ(rows[0][0], "action");
  const Vector cn = rep.critic_normalized();
  for (std::size_t i = 0; i < rep.size(); ++i) {
    const auto& r = rows[i + 1];
    EXPECT_EQ(std::stod(r[0]), rep.action_grid[i]);
    EXPECT_EQ(std::stod(r[1]), rep.critic_values[i]);
    EXPECT_EQ(std::stod(r[2]), rep.oracle_values[i]);
    EXPECT_EQ(std::stod(r[3]), cn[i]);
    EXPECT_EQ(std::stod(r[5]), rep.density[i]);
    EXPECT_EQ(r[7], rep.density[i] <= 0.0 ? "1" : "0");
  }
}

TEST(Report, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "sqog_test_eval_report";
  std::filesystem::remove_all(dir);
  const OfflineDataset ds = line_dataset({{0.0, 0.0}});
  CriticFn f = [](std::span<const double>, std::span<const double> a) { return a[0] + 2.0; };
  const double s[] = {0.0};
  const QGridReport rep = q_grid(f, f, s, -1.0, 1.0, ds, {0.5, 0.05, 0.0});
  write_report({MetricsRow{5, 1.0, 0.5, 2.0, -3.0, 40.0}}, {rep, rep}, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "grid_1.csv"));
  const auto rows = parse_csv(read_file(dir / "metrics.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], "5");
  EXPECT_EQ(std::stod(rows[1][5]), 40.0);
  std::filesystem::remove_all(dir);
}

TEST(KeyStates, DensestDistinctStates) {
  // Cluster near 1.0 (4 points) is densest, then the cluster near -1.0 (3).
  const OfflineDataset ds = line_dataset({{-1.0, 0.0},
                                          {1.02, 0.0},
                                          {-0.99, 0.0},
                                          {1.0, 0.0},
                                          {1.01, 0.0},
                                          {-1.01, 0.0},
                                          {0.99, 0.0},
                                          {3.0, 0.0}});
  // Brute-force counts: every member of a cluster sees the whole cluster.
  const auto keys = key_states(ds, 2, 0.05);
  ASSERT_EQ(keys.size(), 2u);
  EXPECT_EQ(keys[0], (Vector{1.02}));
  EXPECT_EQ(keys[1], (Vector{-1.0}));
  EXPECT_EQ(key_states(ds, 10, 0.05).size(), 3u);
}
