#pragma once

// Offline transition datasets: generation from scripted behavior policies,
// the empirical behavior density, minibatch sampling and JSON-Lines files.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "sqog/error.hpp"
#include "sqog/io.hpp"
#include "sqog/mdp.hpp"
#include "sqog/rng.hpp"

namespace sqog {

struct ScoreRefs {
  double random_score = 0.0;
  double expert_score = 1.0;

  void validate() const {
    if (!(std::isfinite(random_score) && std::isfinite(expert_score) && random_score < expert_score))
      throw InvalidArgument("score references require random_score < expert_score");
  }
  friend bool operator==(const ScoreRefs&, const ScoreRefs&) = default;
};

struct OfflineDataset {
  std::string env_id;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::string behavior_id;
  std::uint64_t seed = 0;
  ScoreRefs ref_scores;
  std::vector<Transition> transitions;

  std::size_t size() const noexcept { return transitions.size(); }

  void validate() const {
    if (transitions.empty()) throw InvalidArgument("dataset is empty");
    ref_scores.validate();
    for (std::size_t i = 0; i < transitions.size(); ++i) {
      const auto& t = transitions[i];
      if (t.state.size() != state_dim || t.next_state.size() != state_dim || t.action.size() != action_dim)
        throw InvalidArgument("transition " + std::to_string(i) + " has inconsistent dimensions");
    }
  }

  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

// ---------------------------------------------------------------------------
// Behavior policies
// ---------------------------------------------------------------------------

enum class BehaviorKind { UniformRandom, ScriptedProportional, ScriptedPlusGaussian };

struct BehaviorPolicy {
  BehaviorKind kind = BehaviorKind::UniformRandom;
  /// ScriptedPlusGaussian: params[0] is the pre-clamp noise sigma.
  Vector params;

  static BehaviorPolicy uniform_random() { return {BehaviorKind::UniformRandom, {}}; }
  static BehaviorPolicy scripted() { return {BehaviorKind::ScriptedProportional, {}}; }
  static BehaviorPolicy scripted_gaussian(double sigma) { return {BehaviorKind::ScriptedPlusGaussian, {sigma}}; }

  /// D4RL-style tiers: random, medium (scripted + N(0, 0.3^2)), expert.
  static BehaviorPolicy from_tier(const std::string& tier) {
    if (tier == "random") return uniform_random();
    if (tier == "medium") return scripted_gaussian(0.3);
    if (tier == "expert") return scripted();
    throw InvalidArgument("unknown dataset tier: " + tier);
  }

  std::string id() const {
    switch (kind) {
      case BehaviorKind::UniformRandom:
        return "uniform-random";
      case BehaviorKind::ScriptedProportional:
        return "scripted-proportional";
      case BehaviorKind::ScriptedPlusGaussian:
        return "scripted-plus-gaussian(" + format_real(params.at(0)) + ")";
    }
    return "?";
  }
};

/// Saturating feedback controller for each desk environment.
///  line-reach: a = clamp(10 (goal - s)).
///  pendulum-lite: energy pumping u = k (E* - E) theta_dot far from upright,
///  PD stabilization u = -(10 theta + 2 theta_dot) once |theta| < 0.4.
inline Vector scripted_action(const ContinuousEnv& env, std::span<const double> state) {
  return std::visit(
      [&](const auto& d) -> Vector {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LineReach>) {
          return env.clamp_action({10.0 * (d.goal - state[0])});
        } else {
          const double theta = wrap_angle(state[0]);
          const double theta_dot = state[1];
          if (std::abs(theta) < 0.4) return env.clamp_action({-(10.0 * theta + 2.0 * theta_dot)});
          const double omega2 = 3.0 * d.g / (2.0 * d.l);
          const double energy = 0.5 * theta_dot * theta_dot + omega2 * (std::cos(theta) - 1.0);
          return env.clamp_action({-0.5 * energy * theta_dot});
        }
      },
      env.dynamics());
}

inline Vector behavior_action(const ContinuousEnv& env, const BehaviorPolicy& behavior, std::span<const double> state,
                              Rng& rng) {
  switch (behavior.kind) {
    case BehaviorKind::UniformRandom: {
      Vector a(env.action_dim());
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = uniform(rng, env.action_low()[i], env.action_high()[i]);
      return a;
    }
    case BehaviorKind::ScriptedProportional:
      return scripted_action(env, state);
    case BehaviorKind::ScriptedPlusGaussian: {
      Vector a = scripted_action(env, state);
      const double sigma = behavior.params.at(0);
      for (double& x : a) x += sigma * standard_normal(rng);
      return env.clamp_action(std::move(a));
    }
  }
  throw InvalidArgument("bad behavior kind");
}

/// Mean undiscounted episode return over `episodes` full-horizon episodes.
template <class Policy>
double average_return(const ContinuousEnv& env, Policy&& policy, std::size_t episodes, std::uint64_t seed) {
  double total = 0.0;
  const SeedSplitter split(seed);
  for (std::size_t e = 0; e < episodes; ++e) {
    const Trajectory traj = rollout(env, policy, env.horizon(), split.derive("episode", e));
    for (const auto& t : traj.transitions) total += t.reward;
  }
  return total / static_cast<double>(episodes);
}

/// Reference scores: uniform-random and the noiseless scripted expert,
/// 100 episodes each.
inline ScoreRefs compute_ref_scores(const ContinuousEnv& env, std::uint64_t seed, std::size_t episodes = 100) {
  const SeedSplitter split(seed);
  const auto random = BehaviorPolicy::uniform_random();
  const auto expert = BehaviorPolicy::scripted();
  ScoreRefs refs;
  refs.random_score = average_return(
      env, [&](const Vector& s, Rng& rng) { return behavior_action(env, random, s, rng); }, episodes,
      split.derive("ref-random"));
  refs.expert_score = average_return(
      env, [&](const Vector& s, Rng& rng) { return behavior_action(env, expert, s, rng); }, episodes,
      split.derive("ref-expert"));
  refs.validate();
  return refs;
}

/// Exactly n transitions from consecutive full episodes; the last episode
/// may be cut short.
inline OfflineDataset generate_dataset(const ContinuousEnv& env, const BehaviorPolicy& behavior,
                                       std::size_t n_transitions, std::uint64_t seed) {
  if (n_transitions == 0) throw InvalidArgument("generate_dataset: n_transitions must be >= 1");
  OfflineDataset ds;
  ds.env_id = env.id();
  ds.state_dim = env.state_dim();
  ds.action_dim = env.action_dim();
  ds.behavior_id = behavior.id();
  ds.seed = seed;
  ds.transitions.reserve(n_transitions);

  const SeedSplitter split(seed);
  Rng init_rng = split.rng("initial-state");
  Rng action_rng = split.rng("behavior");
  while (ds.transitions.size() < n_transitions) {
    Vector state = env.initial_state(init_rng);
    for (std::size_t t = 0; t < env.horizon() && ds.transitions.size() < n_transitions; ++t) {
      Vector action = behavior_action(env, behavior, state, action_rng);
      StepResult res = env.step(state, action);
      ds.transitions.push_back({state, std::move(action), res.reward, res.next_state, res.done});
      if (res.done) break;
      state = std::move(res.next_state);
    }
  }
  ds.ref_scores = compute_ref_scores(env, split.derive("ref-scores"));
  return ds;
}

// ---------------------------------------------------------------------------
// Empirical behavior density and sampling
// ---------------------------------------------------------------------------

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
  return d;
}

inline double euclidean_distance(std::span<const double> x, std::span<const double> y) {
  return std::sqrt(squared_distance(x, y));
}

/// mu_hat(a|s) with tolerance balls: #{i : |s - s_i| <= tol_s, |a - a_i| <= tol_a}
/// over #{i : |s - s_i| <= tol_s}; 0 when no state matches.
inline double empirical_mu(const OfflineDataset& ds, std::span<const double> state, std::span<const double> action,
                           double tol_s, double tol_a) {
  if (tol_s < 0.0 || tol_a < 0.0) throw InvalidArgument("empirical_mu: tolerances must be >= 0");
  std::size_t state_hits = 0;
  std::size_t pair_hits = 0;
  for (const auto& t : ds.transitions) {
    if (euclidean_distance(state, t.state) > tol_s) continue;
    ++state_hits;
    if (euclidean_distance(action, t.action) <= tol_a) ++pair_hits;
  }
  return state_hits == 0 ? 0.0 : static_cast<double>(pair_hits) / static_cast<double>(state_hits);
}

/// Uniform with replacement.
inline std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw InvalidArgument("sample_batch: batch_size must be >= 1");
  if (batch_size > dataset_size) throw InvalidArgument("sample_batch: batch_size exceeds dataset size");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = uniform_index(rng, dataset_size);
  return idx;
}

inline std::vector<Transition> sample_batch(const OfflineDataset& ds, std::size_t batch_size, Rng& rng) {
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (std::size_t i : sample_indices(ds.size(), batch_size, rng)) batch.push_back(ds.transitions[i]);
  return batch;
}

// ---------------------------------------------------------------------------
// JSON-Lines persistence
// ---------------------------------------------------------------------------

namespace detail {

inline void append_array(std::string& out, const Vector& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_real(v[i]);
  }
  out += ']';
}

inline Vector read_array(const nlohmann::json& j, const char* key, std::size_t dim, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) throw ParseError(line, std::string("missing array field \"") + key + "\"");
  const auto& arr = j[key];
  if (arr.size() != dim)
    throw ParseError(line, std::string("field \"") + key + "\" has " + std::to_string(arr.size()) +
                               " entries, expected " + std::to_string(dim));
  Vector v;
  v.reserve(dim);
  for (const auto& x : arr) {
    if (!x.is_number()) throw ParseError(line, std::string("non-numeric entry in \"") + key + "\"");
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace detail

inline std::string to_jsonl(const OfflineDataset& ds) {
  std::string out;
  out.reserve(ds.size() * 96 + 256);
  out += "{\"env_id\":" + nlohmann::json(ds.env_id).dump();
  out += ",\"state_dim\":" + std::to_string(ds.state_dim);
  out += ",\"action_dim\":" + std::to_string(ds.action_dim);
  out += ",\"behavior_id\":" + nlohmann::json(ds.behavior_id).dump();
  out += ",\"seed\":" + std::to_string(ds.seed);
  out += ",\"n\":" + std::to_string(ds.size());
  out += ",\"random_score\":" + format_real(ds.ref_scores.random_score);
  out += ",\"expert_score\":" + format_real(ds.ref_scores.expert_score);
  out += "}\n";
  for (const auto& t : ds.transitions) {
    out += "{\"s\":";
    detail::append_array(out, t.state);
    out += ",\"a\":";
    detail::append_array(out, t.action);
    out += ",\"r\":" + format_real(t.reward);
    out += ",\"s2\":";
    detail::append_array(out, t.next_state);
    out += t.done ? ",\"d\":1}\n" : ",\"d\":0}\n";
  }
  return out;
}

inline OfflineDataset from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto parse = [&](const std::string& s) {
    try {
      return nlohmann::json::parse(s);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
  };

  OfflineDataset ds;
  std::size_t expected = 0;
  if (!std::getline(in, line)) throw ParseError(1, "empty file");
  line_no = 1;
  {
    const auto h = parse(line);
    try {
      ds.env_id = h.at("env_id").get<std::string>();
      ds.state_dim = h.at("state_dim").get<std::size_t>();
      ds.action_dim = h.at("action_dim").get<std::size_t>();
      ds.behavior_id = h.at("behavior_id").get<std::string>();
      ds.seed = h.at("seed").get<std::uint64_t>();
      expected = h.at("n").get<std::size_t>();
      ds.ref_scores.random_score = h.at("random_score").get<double>();
      ds.ref_scores.expert_score = h.at("expert_score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("bad header: ") + e.what());
    }
  }
  ds.transitions.reserve(expected);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse(line);
    Transition t;
    t.state = detail::read_array(j, "s", ds.state_dim, line_no);
    t.action = detail::read_array(j, "a", ds.action_dim, line_no);
    t.next_state = detail::read_array(j, "s2", ds.state_dim, line_no);
    if (!j.contains("r") || !j["r"].is_number()) throw ParseError(line_no, "missing numeric field \"r\"");
    t.reward = j["r"].get<double>();
    if (!j.contains("d") || !j["d"].is_number_integer()) throw ParseError(line_no, "missing integer field \"d\"");
    const auto d = j["d"].get<long long>();
    if (d != 0 && d != 1) throw ParseError(line_no, "field \"d\" must be 0 or 1");
    t.done = d == 1;
    ds.transitions.push_back(std::move(t));
  }
  if (ds.transitions.size() != expected)
    throw ParseError(line_no, "header declares n=" + std::to_string(expected) + " but file has " +
                                  std::to_string(ds.transitions.size()) + " transitions");
  if (ds.transitions.empty()) throw ParseError(line_no, "dataset has no transitions");
  try {
    ds.ref_scores.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(1, e.what());
  }
  return ds;
}

inline void save(const OfflineDataset& ds, const std::filesystem::path& path) { write_file(path, to_jsonl(ds)); }

inline OfflineDataset load_dataset(const std::filesystem::path& path) { return from_jsonl(read_file(path)); }

inline std::string dataset_hash(const OfflineDataset& ds) { return content_hash(to_jsonl(ds)); }

}  // namespace sqog
