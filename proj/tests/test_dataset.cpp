#include <cmath>
#include <filesystem>
#include <map>

#include <gtest/gtest.h>

#include "sqog/dataset.hpp"

using namespace sqog;

namespace {

OfflineDataset tiny_dataset() {
  OfflineDataset ds;
  ds.env_id = "line-reach";
  ds.state_dim = 1;
  ds.action_dim = 1;
  ds.behavior_id = "hand";
  ds.seed = 9;
  ds.ref_scores = {-10.0, -1.0};
  ds.transitions = {{{0.1}, {0.5}, -0.35, {0.15}, false},
                    {{0.15}, {-1.0 / 3.0}, -0.3833333333333333, {0.11666666666666667}, false},
                    {{0.11666666666666667}, {1.0}, -0.2833333333333333, {0.21666666666666667}, true}};
  return ds;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sqog_test_dataset_" + name);
}

}  // namespace

TEST(GenerateDataset, SingleTransition) {
  const auto ds = generate_dataset(make_env("line-reach"), BehaviorPolicy::uniform_random(), 1, 0);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_NO_THROW(ds.validate());
}

TEST(GenerateDataset, ExactCountAndChaining) {
  const ContinuousEnv env = make_env("line-reach");
  const auto ds = generate_dataset(env, BehaviorPolicy::from_tier("medium"), 123, 5);
  EXPECT_EQ(ds.size(), 123u);
  // Episodes of length 50 chain internally.
  for (std::size_t i = 0; i + 1 < ds.size(); ++i) {
    if ((i + 1) % 50 == 0) continue;
    EXPECT_EQ(ds.transitions[i].next_state, ds.transitions[i + 1].state);
  }
  for (const auto& t : ds.transitions) {
    EXPECT_GE(t.action[0], -1.0);
    EXPECT_LE(t.action[0], 1.0);
  }
}

TEST(GenerateDataset, SameSeedSameBytes) {
  const ContinuousEnv env = make_env("line-reach");
  const auto a = generate_dataset(env, BehaviorPolicy::uniform_random(), 1000, 3);
  const auto b = generate_dataset(env, BehaviorPolicy::uniform_random(), 1000, 3);
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
  const auto c = generate_dataset(env, BehaviorPolicy::uniform_random(), 1000, 4);
  EXPECT_NE(dataset_hash(a), dataset_hash(c));
}

TEST(GenerateDataset, MediumNoiseMatchesSigma) {
  // Interior of the box: residual a - scripted(s) is the unclamped noise.
  const ContinuousEnv env = make_env("pendulum-lite");
  const auto ds = generate_dataset(env, BehaviorPolicy::scripted_gaussian(0.3), 5000, 8);
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& t : ds.transitions) {
    const double base = scripted_action(env, t.state)[0];
    if (std::abs(base) > 2.0 - 1.5 || std::abs(t.action[0]) >= 2.0) continue;
    const double e = t.action[0] - base;
    sum += e;
    sum2 += e * e;
    ++n;
  }
  ASSERT_GT(n, 500u);
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
  EXPECT_NEAR(sd, 0.3, 0.03);
}

TEST(ReferenceScores, ExpertBeatsRandom) {
  for (const char* id : {"line-reach", "pendulum-lite"}) {
    const ScoreRefs refs = compute_ref_scores(make_env(id), 1, 20);
    EXPECT_LT(refs.random_score, refs.expert_score) << id;
  }
}

TEST(EmpiricalMu, IndicatorDefinition) {
  const auto ds = tiny_dataset();
  const double s[] = {0.1}, a[] = {0.5}, other[] = {0.2};
  EXPECT_EQ(empirical_mu(ds, s, a, 0.0, 0.0), 1.0);
  EXPECT_EQ(empirical_mu(ds, s, other, 0.0, 0.0), 0.0);
  const double unseen[] = {0.9};
  EXPECT_EQ(empirical_mu(ds, unseen, a, 0.0, 0.0), 0.0);
  EXPECT_THROW(empirical_mu(ds, s, a, -1.0, 0.0), InvalidArgument);
}

TEST(EmpiricalMu, TabularCountRatios) {
  // Discrete gridworld-style dataset: states and actions are integers.
  const TabularMdp grid = make_gridworld();
  Rng rng(17);
  OfflineDataset ds;
  ds.env_id = "grid-5x5";
  ds.state_dim = ds.action_dim = 1;
  std::map<std::pair<int, int>, int> pair_counts;
  std::map<int, int> state_counts;
  for (int i = 0; i < 3000; ++i) {
    const int s = static_cast<int>(uniform_index(rng, 25));
    const int a = static_cast<int>(uniform_index(rng, s % 3 == 0 ? 2 : 4));
    std::size_t s2 = 0;
    for (std::size_t k = 0; k < 25; ++k)
      if (grid.transition(s, a, k) == 1.0) s2 = k;
    ds.transitions.push_back({{double(s)}, {double(a)}, grid.reward(s, a), {double(s2)}, false});
    ++pair_counts[{s, a}];
    ++state_counts[s];
  }
  for (int s = 0; s < 25; ++s) {
    double total = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double sv[] = {double(s)}, av[] = {double(a)};
      const double mu = empirical_mu(ds, sv, av, 0.0, 0.0);
      const auto it = pair_counts.find({s, a});
      const double oracle = it == pair_counts.end() ? 0.0 : double(it->second) / state_counts[s];
      EXPECT_DOUBLE_EQ(mu, oracle);
      total += mu;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SampleBatch, Edges) {
  const auto ds = tiny_dataset();
  Rng rng(1);
  EXPECT_THROW(sample_batch(ds, 0, rng), InvalidArgument);
  EXPECT_THROW(sample_batch(ds, 4, rng), InvalidArgument);
  OfflineDataset one = ds;
  one.transitions.resize(1);
  EXPECT_EQ(sample_batch(one, 1, rng)[0], one.transitions[0]);
}

TEST(SampleBatch, ReproducibleIndices) {
  Rng a(99), b(99);
  EXPECT_EQ(sample_indices(50, 20, a), sample_indices(50, 20, b));
}

TEST(SampleBatch, UniformFrequencies) {
  Rng rng(2024);
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws / 10; ++i)
    for (std::size_t k : sample_indices(10, 10, rng)) ++counts[k];
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  for (int c : counts) EXPECT_LE(std::abs(c - draws * 0.1), 3 * sigma);
}

TEST(Jsonl, RoundTripExact) {
  const auto ds = tiny_dataset();
  const auto path = temp_path("roundtrip.jsonl");
  save(ds, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back, ds);
  std::filesystem::remove(path);
}

TEST(Jsonl, LargeRoundTripHash) {
  const auto ds = generate_dataset(make_env("pendulum-lite"), BehaviorPolicy::from_tier("medium"), 10000, 21);
  const auto back = from_jsonl(to_jsonl(ds));
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
  EXPECT_EQ(back, ds);
}

TEST(Jsonl, WrongActionDimNamesLine) {
  std::string text = to_jsonl(tiny_dataset());
  const auto pos = text.find("\"a\":[-0.");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 5, "\"a\":[0,");
  try {
    from_jsonl(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Jsonl, CountMismatchAndGarbage) {
  std::string text = to_jsonl(tiny_dataset());
  EXPECT_THROW(from_jsonl(text.substr(0, text.rfind("{\"s\""))), ParseError);
  try {
    from_jsonl(text + "not json\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
  }
}
