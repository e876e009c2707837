#pragma once

// Monte Carlo Q oracle, action-grid Q reports, Q-difference metric and
// report emission.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sqog/agents.hpp"
#include "sqog/chn.hpp"
#include "sqog/dataset.hpp"
#include "sqog/error.hpp"
#include "sqog/io.hpp"
#include "sqog/mdp.hpp"
#include "sqog/rng.hpp"

namespace sqog {

struct McOracleConfig {
  std::size_t n_rollouts = 1000;
  /// Steps per rollout including the first (s, a) step.
  std::size_t horizon = 1000;
  double gamma = 0.99;
  std::uint64_t seed = 0;
  /// Environment and policy both deterministic: every rollout is identical,
  /// so a single one is run.
  bool deterministic = true;

  void validate() const {
    if (n_rollouts < 1) throw InvalidArgument("McOracleConfig: n_rollouts must be >= 1");
    if (horizon < 1) throw InvalidArgument("McOracleConfig: horizon must be >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("McOracleConfig: gamma must lie in [0,1)");
  }
};

/// Execute `action` at `state`, then follow `policy`; mean discounted return.
template <class Policy>
double mc_q(const ContinuousEnv& env, Policy&& policy, std::span<const double> state, std::span<const double> action,
            const McOracleConfig& cfg) {
  cfg.validate();
  const SeedSplitter split(cfg.seed);
  const std::size_t runs = cfg.deterministic ? 1 : cfg.n_rollouts;
  double total = 0.0;
  for (std::size_t i = 0; i < runs; ++i) {
    const StepResult first = env.step(state, action);
    double ret = first.reward;
    if (!first.done && cfg.horizon > 1) {
      const Trajectory rest = rollout_from(env, first.next_state, policy, cfg.horizon - 1, split.derive("mc", i));
      double discount = cfg.gamma;
      for (const auto& t : rest.transitions) {
        ret += discount * t.reward;
        discount *= cfg.gamma;
      }
    }
    total += ret;
  }
  return total / static_cast<double>(runs);
}

/// Tabular counterpart: sampled transitions, stochastic policy table.
/// Terminal states end the rollout.
inline double mc_q(const TabularMdp& mdp, const PolicyTable& policy, std::size_t state, std::size_t action,
                   const McOracleConfig& cfg) {
  cfg.validate();
  check_policy(mdp, policy);
  const SeedSplitter split(cfg.seed);
  auto draw = [](Rng& rng, auto&& prob, std::size_t n) {
    const double u = uniform(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += prob(i);
      if (u < acc) return i;
    }
    return n - 1;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < cfg.n_rollouts; ++i) {
    Rng rng = split.rng("mc", i);
    std::size_t s = state, a = action;
    double ret = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < cfg.horizon; ++t) {
      ret += discount * mdp.reward(s, a);
      discount *= mdp.gamma();
      const std::size_t s2 = draw(rng, [&](std::size_t k) { return mdp.transition(s, a, k); }, mdp.n_states());
      if (mdp.terminal(s2)) break;
      s = s2;
      a = draw(rng, [&](std::size_t k) { return policy(s, k); }, mdp.n_actions());
    }
    total += ret;
  }
  return total / static_cast<double>(cfg.n_rollouts);
}

// ---------------------------------------------------------------------------
// Normalization and metrics
// ---------------------------------------------------------------------------

/// max |v_i|; rejects an all-zero array.
inline double max_abs_constant(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("max-abs normalization of an empty array");
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  if (m == 0.0) throw NumericError("max-abs normalization undefined: all values are zero");
  return m;
}

inline Vector max_abs_normalize(std::span<const double> values) {
  const double m = max_abs_constant(values);
  Vector out(values.begin(), values.end());
  for (double& v : out) v /= m;
  return out;
}

/// Mean |critic/max|critic| - oracle/max|oracle||.
inline double normalized_mae(std::span<const double> critic, std::span<const double> oracle) {
  if (critic.size() != oracle.size()) throw InvalidArgument("normalized_mae: length mismatch");
  const Vector c = max_abs_normalize(critic);
  const Vector o = max_abs_normalize(oracle);
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) total += std::abs(c[i] - o[i]);
  return total / static_cast<double>(c.size());
}

struct StatePoint {
  Vector state;
  Vector action;
};

using CriticFn = std::function<double(std::span<const double> state, std::span<const double> action)>;
using OracleFn = CriticFn;

/// Q-difference metric over (state, action) samples.
inline double q_diff_metric(const CriticFn& critic, const OracleFn& oracle, const std::vector<StatePoint>& samples) {
  if (samples.empty()) throw InvalidArgument("q_diff_metric: empty sample set");
  Vector c, o;
  for (const auto& sa : samples) {
    c.push_back(critic(sa.state, sa.action));
    o.push_back(oracle(sa.state, sa.action));
  }
  return normalized_mae(c, o);
}

/// Critic and MC oracle for a trained agent; the oracle follows the agent's
/// own deterministic actor.
inline CriticFn agent_critic(const AgentNets& nets) {
  return [&nets](std::span<const double> s, std::span<const double> a) {
    Matrix sm(static_cast<Eigen::Index>(s.size()), 1), am(static_cast<Eigen::Index>(a.size()), 1);
    for (std::size_t k = 0; k < s.size(); ++k) sm(static_cast<Eigen::Index>(k), 0) = s[k];
    for (std::size_t k = 0; k < a.size(); ++k) am(static_cast<Eigen::Index>(k), 0) = a[k];
    return nets.q_values(nets.critic1, sm, am)(0, 0);
  };
}

inline OracleFn agent_oracle(const ContinuousEnv& env, const AgentNets& nets, McOracleConfig cfg) {
  return [&env, &nets, cfg](std::span<const double> s, std::span<const double> a) {
    return mc_q(env, [&](const Vector& x, Rng&) { return nets.act(x); }, s, a, cfg);
  };
}

// ---------------------------------------------------------------------------
// Action-grid reports
// ---------------------------------------------------------------------------

/// low, low + step, ..., high; `step` must divide the range.
inline Vector action_grid(double low, double high, double step) {
  if (!(step > 0.0) || !(high > low)) throw InvalidArgument("action_grid: need step > 0 and high > low");
  const auto n = static_cast<std::size_t>(std::llround((high - low) / step));
  if (std::abs(low + static_cast<double>(n) * step - high) > 1e-9 * std::max(1.0, std::abs(high)))
    throw InvalidArgument("action_grid: step does not divide the action range");
  Vector grid(n + 1);
  for (std::size_t i = 0; i <= n; ++i) grid[i] = low + (high - low) * static_cast<double>(i) / static_cast<double>(n);
  return grid;
}

struct QGridReport {
  Vector state;
  Vector action_grid;
  Vector critic_values;
  Vector oracle_values;
  /// Empirical mu_hat(a|s) with tolerance balls.
  Vector density;
  std::vector<bool> in_chn;
  double critic_norm_constant = 1.0;
  double oracle_norm_constant = 1.0;
  /// Density at or below which a cell counts as OOD.
  double density_threshold = 0.0;

  std::size_t size() const { return action_grid.size(); }
  Vector critic_normalized() const { return max_abs_normalize(critic_values); }
  Vector oracle_normalized() const { return max_abs_normalize(oracle_values); }
};

struct QGridOptions {
  double step = 0.01;
  double tol = 0.05;
  double density_threshold = 0.0;
};

/// 1-D action grid at `state`. `chn` is optional; without it every cell is
/// reported as outside the CHN.
inline QGridReport q_grid(const CriticFn& critic, const OracleFn& oracle, std::span<const double> state,
                          double action_low, double action_high, const OfflineDataset& dataset,
                          const QGridOptions& opt = {}, const ChnQuery* chn = nullptr) {
  if (dataset.action_dim != 1)
    throw InvalidArgument("q_grid: grid reports need a 1-D action space; use q_diff_metric for action_dim > 1");
  if (state.size() != dataset.state_dim) throw InvalidArgument("q_grid: state dimension mismatch");
  QGridReport rep;
  rep.state.assign(state.begin(), state.end());
  rep.action_grid = action_grid(action_low, action_high, opt.step);
  rep.density_threshold = opt.density_threshold;
  Vector point(state.begin(), state.end());
  point.push_back(0.0);
  for (double a : rep.action_grid) {
    const double act[1] = {a};
    rep.critic_values.push_back(critic(state, act));
    rep.oracle_values.push_back(oracle(state, act));
    rep.density.push_back(empirical_mu(dataset, state, act, opt.tol, opt.tol));
    point.back() = a;
    rep.in_chn.push_back(chn ? chn_contains(point, *chn) : false);
  }
  rep.critic_norm_constant = max_abs_constant(rep.critic_values);
  rep.oracle_norm_constant = max_abs_constant(rep.oracle_values);
  return rep;
}

/// True where the empirical density is below `density_threshold`.
inline std::vector<bool> ood_region_mask(const QGridReport& rep, double density_threshold) {
  std::vector<bool> mask(rep.size());
  for (std::size_t i = 0; i < rep.size(); ++i) mask[i] = rep.density[i] < density_threshold;
  return mask;
}

/// Cells compared in the sanity check: OOD (no dataset point in the
/// tolerance ball) and CHN-contained.
inline std::vector<bool> sanity_mask(const QGridReport& rep) {
  std::vector<bool> mask(rep.size());
  for (std::size_t i = 0; i < rep.size(); ++i) mask[i] = rep.density[i] <= rep.density_threshold && rep.in_chn[i];
  return mask;
}

/// Mean |normalized critic - normalized oracle| over the masked cells.
/// Returns nullopt when the mask is empty.
inline std::optional<double> masked_mae(const QGridReport& rep, const std::vector<bool>& mask) {
  const Vector c = rep.critic_normalized();
  const Vector o = rep.oracle_normalized();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rep.size(); ++i)
    if (mask[i]) {
      total += std::abs(c[i] - o[i]);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

/// The `count` dataset states with the most dataset states inside their
/// Euclidean tol-ball, ties to the first occurrence. Selected states are
/// distinct by more than tol.
inline std::vector<Vector> key_states(const OfflineDataset& ds, std::size_t count = 2, double tol = 0.05) {
  const std::size_t n = ds.size();
  if (n == 0) throw InvalidArgument("key_states: empty dataset");
  // Sort by the first coordinate so each ball only scans a window.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return ds.transitions[i].state[0] < ds.transitions[j].state[0]; });
  std::vector<std::size_t> counts(n, 0);
  std::size_t lo = 0;
  for (std::size_t oi = 0; oi < n; ++oi) {
    const auto& s = ds.transitions[order[oi]].state;
    while (ds.transitions[order[lo]].state[0] < s[0] - tol) ++lo;
    std::size_t c = 0;
    for (std::size_t oj = lo; oj < n; ++oj) {
      const auto& t = ds.transitions[order[oj]].state;
      if (t[0] > s[0] + tol) break;
      c += squared_distance(s, t) <= tol * tol;
    }
    counts[order[oi]] = c;
  }
  std::vector<Vector> out;
  std::vector<bool> taken(n, false);
  while (out.size() < count) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      bool near = false;
      for (const auto& k : out) near = near || squared_distance(ds.transitions[i].state, k) <= tol * tol;
      if (near) continue;
      if (best == n || counts[i] > counts[best]) best = i;
    }
    if (best == n) break;
    taken[best] = true;
    out.push_back(ds.transitions[best].state);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline std::string grid_csv(const QGridReport& rep) {
  const Vector cn = rep.critic_normalized();
  const Vector on = rep.oracle_normalized();
  std::string out = "action,critic_q,oracle_q,critic_q_norm,oracle_q_norm,density,in_chn,is_ood\n";
  for (std::size_t i = 0; i < rep.size(); ++i) {
    out += format_real(rep.action_grid[i]) + ',' + format_real(rep.critic_values[i]) + ',' +
           format_real(rep.oracle_values[i]) + ',' + format_real(cn[i]) + ',' + format_real(on[i]) + ',' +
           format_real(rep.density[i]) + ',' + (rep.in_chn[i] ? '1' : '0') + ',' +
           (rep.density[i] <= rep.density_threshold ? '1' : '0') + '\n';
  }
  return out;
}

/// Writes metrics.csv and grid_<k>.csv under `dir`.
inline void write_report(const std::vector<MetricsRow>& metrics, const std::vector<QGridReport>& grids,
                         const std::filesystem::path& dir) {
  write_file(dir / "metrics.csv", metrics_csv(metrics));
  for (std::size_t k = 0; k < grids.size(); ++k) write_file(dir / ("grid_" + std::to_string(k) + ".csv"), grid_csv(grids[k]));
}

/// Splits a CSV emitted by this module back into rows of fields.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::vector<std::string> fields;
    std::size_t start = pos;
    while (true) {
      const std::size_t comma = text.find(',', start);
      if (comma == std::string::npos || comma > end) {
        fields.push_back(text.substr(start, end - start));
        break;
      }
      fields.push_back(text.substr(start, comma - start));
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
    pos = end + 1;
  }
  return rows;
}

}  // namespace sqog
