#pragma once

// Finite MDPs, the desk-scale continuous environments, rollouts and exact
// policy evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sqog/error.hpp"
#include "sqog/rng.hpp"

namespace sqog {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Tabular
// ---------------------------------------------------------------------------

/// Dense (state, action) table. Used for Q-functions, policies and masks.
template <class T>
class StateActionTable {
 public:
  StateActionTable() = default;
  StateActionTable(std::size_t n_states, std::size_t n_actions, T fill = T{})
      : n_states_(n_states), n_actions_(n_actions), values_(n_states * n_actions, fill) {}

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }
  std::size_t size() const noexcept { return values_.size(); }

  T& operator()(std::size_t s, std::size_t a) { return values_[s * n_actions_ + a]; }
  const T& operator()(std::size_t s, std::size_t a) const { return values_[s * n_actions_ + a]; }

  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  bool same_shape(const StateActionTable& other) const noexcept {
    return n_states_ == other.n_states_ && n_actions_ == other.n_actions_;
  }

  friend bool operator==(const StateActionTable&, const StateActionTable&) = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<T> values_;
};

using QTable = StateActionTable<double>;
/// pi(a|s); each row sums to one.
using PolicyTable = StateActionTable<double>;
using MaskTable = StateActionTable<std::uint8_t>;

inline double sup_norm_diff(const QTable& a, const QTable& b) {
  if (!a.same_shape(b)) throw InvalidArgument("sup_norm_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

class TabularMdp {
 public:
  /// `transition` is laid out [s][a][s'], `reward` is [s][a].
  TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
             std::vector<double> reward, double gamma, std::vector<std::uint8_t> terminal = {})
      : n_states_(n_states),
        n_actions_(n_actions),
        transition_(std::move(transition)),
        reward_(std::move(reward)),
        gamma_(gamma),
        terminal_(std::move(terminal)) {
    if (n_states_ == 0 || n_actions_ == 0) throw InvalidArgument("TabularMdp: empty state or action set");
    if (transition_.size() != n_states_ * n_actions_ * n_states_)
      throw InvalidArgument("TabularMdp: transition table has wrong size");
    if (reward_.size() != n_states_ * n_actions_) throw InvalidArgument("TabularMdp: reward table has wrong size");
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw InvalidArgument("TabularMdp: gamma must lie in [0,1)");
    if (terminal_.empty()) terminal_.assign(n_states_, 0);
    if (terminal_.size() != n_states_) throw InvalidArgument("TabularMdp: terminal mask has wrong size");
    for (std::size_t s = 0; s < n_states_; ++s) {
      for (std::size_t a = 0; a < n_actions_; ++a) {
        double row = 0.0;
        for (std::size_t s2 = 0; s2 < n_states_; ++s2) {
          const double p = this->transition(s, a, s2);
          if (!(p >= 0.0)) throw InvalidArgument("TabularMdp: negative transition probability");
          row += p;
        }
        if (std::abs(row - 1.0) > 1e-12)
          throw InvalidArgument("TabularMdp: transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                ") does not sum to 1");
        if (!std::isfinite(this->reward(s, a))) throw InvalidArgument("TabularMdp: non-finite reward");
        r_max_ = std::max(r_max_, std::abs(this->reward(s, a)));
      }
    }
  }

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }
  double gamma() const noexcept { return gamma_; }
  double r_max() const noexcept { return r_max_; }
  bool terminal(std::size_t s) const { return terminal_[s] != 0; }

  double transition(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition_[(s * n_actions_ + a) * n_states_ + s2];
  }
  double reward(std::size_t s, std::size_t a) const { return reward_[s * n_actions_ + a]; }

  /// Same dynamics with a different discount.
  TabularMdp with_gamma(double gamma) const {
    return TabularMdp(n_states_, n_actions_, transition_, reward_, gamma, terminal_);
  }

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  std::vector<double> reward_;
  double gamma_;
  std::vector<std::uint8_t> terminal_;
  double r_max_ = 0.0;
};

inline void check_policy(const TabularMdp& mdp, const PolicyTable& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw InvalidArgument("policy shape does not match the MDP");
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    double row = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      if (!(policy(s, a) >= 0.0)) throw InvalidArgument("policy has a negative probability");
      row += policy(s, a);
    }
    if (std::abs(row - 1.0) > 1e-9) throw InvalidArgument("policy row " + std::to_string(s) + " does not sum to 1");
  }
}

/// V(s) = sum_a pi(a|s) Q(s,a); terminal states are worth zero.
inline Vector state_values(const TabularMdp& mdp, const PolicyTable& policy, const QTable& q) {
  Vector v(mdp.n_states(), 0.0);
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    if (mdp.terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) v[s] += policy(s, a) * q(s, a);
  }
  return v;
}

/// One policy-evaluation backup:
/// Q'(s,a) = r(s,a) + gamma * sum_s' T(s'|s,a) * sum_a' pi(a'|s') Q(s',a').
/// Terminal successors do not bootstrap.
inline QTable policy_backup(const TabularMdp& mdp, const PolicyTable& policy, const QTable& q) {
  if (q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions())
    throw InvalidArgument("policy_backup: Q shape does not match the MDP");
  const Vector v = state_values(mdp, policy, q);
  QTable out(mdp.n_states(), mdp.n_actions());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      double ev = 0.0;
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) ev += mdp.transition(s, a, s2) * v[s2];
      out(s, a) = mdp.reward(s, a) + mdp.gamma() * ev;
    }
  }
  return out;
}

/// Solves Q = r + gamma T Pi Q exactly. The state-value system
/// (I - gamma P_pi) V = r_pi is solved first, then Q = r + gamma T V.
inline QTable exact_policy_q(const TabularMdp& mdp, const PolicyTable& policy) {
  check_policy(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    if (mdp.terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double p = policy(s, a);
      if (p == 0.0) continue;
      rhs[static_cast<Eigen::Index>(s)] += p * mdp.reward(s, a);
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) {
        if (mdp.terminal(s2)) continue;
        system(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) -=
            mdp.gamma() * p * mdp.transition(s, a, s2);
      }
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  const Eigen::VectorXd v = lu.solve(rhs);
  if (!v.allFinite()) throw Error("exact_policy_q: singular Bellman system");

  QTable q(mdp.n_states(), mdp.n_actions());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      double ev = 0.0;
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2)
        if (!mdp.terminal(s2)) ev += mdp.transition(s, a, s2) * v[static_cast<Eigen::Index>(s2)];
      q(s, a) = mdp.reward(s, a) + mdp.gamma() * ev;
    }
  }
  return q;
}

/// Random MDP with Dirichlet(1) transition rows and U(-r_max, r_max) rewards.
inline TabularMdp random_tabular_mdp(std::size_t n_states, std::size_t n_actions, double gamma, Rng& rng,
                                     double r_max = 1.0) {
  std::vector<double> t(n_states * n_actions * n_states);
  std::vector<double> r(n_states * n_actions);
  for (std::size_t row = 0; row < n_states * n_actions; ++row) {
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      double u = uniform(rng);
      while (u <= 0.0) u = uniform(rng);
      t[row * n_states + s2] = -std::log(u);
      sum += t[row * n_states + s2];
    }
    // Normalize, then push the rounding residue onto the largest entry so
    // the row sums to one to within an ulp or two.
    double acc = 0.0;
    std::size_t big = 0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      t[row * n_states + s2] /= sum;
      acc += t[row * n_states + s2];
      if (t[row * n_states + s2] > t[row * n_states + big]) big = s2;
    }
    t[row * n_states + big] += 1.0 - acc;
    r[row] = uniform(rng, -r_max, r_max);
  }
  return TabularMdp(n_states, n_actions, std::move(t), std::move(r), gamma);
}

/// Uniformly random stochastic policy table (Dirichlet(1) rows).
inline PolicyTable random_policy(std::size_t n_states, std::size_t n_actions, Rng& rng) {
  PolicyTable pi(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) {
      double u = uniform(rng);
      while (u <= 0.0) u = uniform(rng);
      pi(s, a) = -std::log(u);
      sum += pi(s, a);
    }
    for (std::size_t a = 0; a < n_actions; ++a) pi(s, a) /= sum;
  }
  return pi;
}

/// 5x5 gridworld. Actions: 0 up, 1 down, 2 left, 3 right; walls block.
/// Each move costs `step_cost`; entering the goal corner (4,4) pays
/// `goal_reward` and the goal is absorbing and terminal.
inline TabularMdp make_gridworld(double gamma = 0.9, double step_cost = -0.1, double goal_reward = 1.0) {
  constexpr std::size_t kSide = 5;
  constexpr std::size_t kStates = kSide * kSide;
  constexpr std::size_t kActions = 4;
  constexpr std::size_t kGoal = kStates - 1;
  std::vector<double> t(kStates * kActions * kStates, 0.0);
  std::vector<double> r(kStates * kActions, 0.0);
  std::vector<std::uint8_t> terminal(kStates, 0);
  terminal[kGoal] = 1;
  for (std::size_t s = 0; s < kStates; ++s) {
    const std::size_t row = s / kSide;
    const std::size_t col = s % kSide;
    for (std::size_t a = 0; a < kActions; ++a) {
      std::size_t next = s;
      if (s != kGoal) {
        if (a == 0 && row > 0) next = s - kSide;
        if (a == 1 && row + 1 < kSide) next = s + kSide;
        if (a == 2 && col > 0) next = s - 1;
        if (a == 3 && col + 1 < kSide) next = s + 1;
        r[s * kActions + a] = next == kGoal ? goal_reward : step_cost;
      }
      t[(s * kActions + a) * kStates + next] = 1.0;
    }
  }
  return TabularMdp(kStates, kActions, std::move(t), std::move(r), gamma, std::move(terminal));
}

// ---------------------------------------------------------------------------
// Continuous environments
// ---------------------------------------------------------------------------

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};

/// 1-D reach task: s' = clamp(s + step_scale * a, -1, 1), reward -|s' - goal|.
struct LineReach {
  double goal = 0.5;
  double step_scale = 0.1;

  StepResult step(std::span<const double> s, std::span<const double> a) const {
    const double next = std::clamp(s[0] + step_scale * a[0], -1.0, 1.0);
    return {{next}, -std::abs(next - goal), false};
  }
  Vector initial_state(Rng& rng) const { return {uniform(rng, -1.0, 1.0)}; }
};

inline double wrap_angle(double theta) {
  constexpr double kPi = std::numbers::pi;
  double w = std::fmod(theta + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  return w - kPi;
}

/// Torque-limited pendulum, upright at theta = 0. State (theta, theta_dot),
/// semi-implicit Euler:
///   theta_dot' = clip(theta_dot + (3g/(2l) sin(theta) + 3/(m l^2) u) dt, +-max_speed)
///   theta'     = wrap(theta + theta_dot' dt)
/// The cost is charged on the pre-step state.
struct PendulumLite {
  double g = 10.0;
  double m = 1.0;
  double l = 1.0;
  double dt = 0.05;
  double max_speed = 8.0;

  StepResult step(std::span<const double> s, std::span<const double> a) const {
    const double theta = s[0];
    const double theta_dot = s[1];
    const double u = a[0];
    const double th = wrap_angle(theta);
    const double cost = th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u;
    double next_dot = theta_dot + (3.0 * g / (2.0 * l) * std::sin(theta) + 3.0 / (m * l * l) * u) * dt;
    next_dot = std::clamp(next_dot, -max_speed, max_speed);
    const double next_theta = wrap_angle(theta + next_dot * dt);
    return {{next_theta, next_dot}, -cost, false};
  }
  Vector initial_state(Rng& rng) const {
    const double theta = uniform(rng, -std::numbers::pi, std::numbers::pi);
    const double theta_dot = uniform(rng, -1.0, 1.0);
    return {theta, theta_dot};
  }
};

class ContinuousEnv {
 public:
  using Dynamics = std::variant<LineReach, PendulumLite>;

  ContinuousEnv(std::string id, Dynamics dynamics, std::size_t state_dim, Vector action_low, Vector action_high,
                std::size_t horizon)
      : id_(std::move(id)),
        dynamics_(dynamics),
        state_dim_(state_dim),
        action_low_(std::move(action_low)),
        action_high_(std::move(action_high)),
        horizon_(horizon) {}

  const std::string& id() const noexcept { return id_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t action_dim() const noexcept { return action_low_.size(); }
  const Vector& action_low() const noexcept { return action_low_; }
  const Vector& action_high() const noexcept { return action_high_; }
  std::size_t horizon() const noexcept { return horizon_; }
  const Dynamics& dynamics() const noexcept { return dynamics_; }

  /// Deterministic transition. Out-of-box actions are rejected, never clipped.
  StepResult step(std::span<const double> state, std::span<const double> action) const {
    if (state.size() != state_dim_) throw InvalidArgument(id_ + ": state has wrong dimension");
    if (action.size() != action_dim()) throw InvalidArgument(id_ + ": action has wrong dimension");
    for (std::size_t i = 0; i < action.size(); ++i) {
      if (!(action[i] >= action_low_[i] && action[i] <= action_high_[i]))
        throw InvalidArgument(id_ + ": action component " + std::to_string(i) + " = " + std::to_string(action[i]) +
                              " outside [" + std::to_string(action_low_[i]) + ", " +
                              std::to_string(action_high_[i]) + "]");
    }
    return std::visit([&](const auto& d) { return d.step(state, action); }, dynamics_);
  }

  Vector initial_state(Rng& rng) const {
    return std::visit([&](const auto& d) { return d.initial_state(rng); }, dynamics_);
  }

  /// Clamp into the action box.
  Vector clamp_action(Vector action) const {
    for (std::size_t i = 0; i < action.size(); ++i) action[i] = std::clamp(action[i], action_low_[i], action_high_[i]);
    return action;
  }

 private:
  std::string id_;
  Dynamics dynamics_;
  std::size_t state_dim_;
  Vector action_low_;
  Vector action_high_;
  std::size_t horizon_;
};

using EnvOverrides = std::map<std::string, double>;

/// Resolves "line-reach" or "pendulum-lite". Overrides are keyed by the
/// dynamics parameter names (goal, step_scale, g, m, l, dt, max_speed,
/// max_torque) plus "horizon".
inline ContinuousEnv make_env(const std::string& id, const EnvOverrides& overrides = {}) {
  auto take = [&](const std::string& key, double fallback) {
    auto it = overrides.find(key);
    return it == overrides.end() ? fallback : it->second;
  };
  auto check_keys = [&](std::initializer_list<const char*> known) {
    for (const auto& [key, value] : overrides) {
      bool ok = false;
      for (const char* k : known) ok = ok || key == k;
      if (!ok) throw InvalidArgument("unknown [env] key for " + id + ": " + key);
    }
  };
  if (id == "line-reach") {
    check_keys({"goal", "step_scale", "horizon"});
    LineReach d{take("goal", 0.5), take("step_scale", 0.1)};
    return ContinuousEnv(id, d, 1, {-1.0}, {1.0}, static_cast<std::size_t>(take("horizon", 50)));
  }
  if (id == "pendulum-lite") {
    check_keys({"g", "m", "l", "dt", "max_speed", "max_torque", "horizon"});
    PendulumLite d{take("g", 10.0), take("m", 1.0), take("l", 1.0), take("dt", 0.05), take("max_speed", 8.0)};
    const double torque = take("max_torque", 2.0);
    return ContinuousEnv(id, d, 2, {-torque}, {torque}, static_cast<std::size_t>(take("horizon", 200)));
  }
  if (id == "grid-5x5") throw InvalidArgument("grid-5x5 is tabular; use make_gridworld()");
  throw InvalidArgument("unknown environment id: " + id);
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Trajectory {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
};

/// Policies are callables `Vector(const Vector& state, Rng& rng)`; they must
/// return in-box actions.
template <class Policy>
Trajectory rollout_from(const ContinuousEnv& env, Vector state, Policy&& policy, std::size_t horizon,
                        std::uint64_t seed) {
  Trajectory traj;
  traj.seed = seed;
  Rng rng(seed);
  traj.transitions.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    Vector action = policy(std::as_const(state), rng);
    StepResult res = env.step(state, action);
    traj.transitions.push_back({state, std::move(action), res.reward, res.next_state, res.done});
    if (res.done) break;
    state = std::move(res.next_state);
  }
  return traj;
}

/// Rollout from an initial state drawn with a stream derived from `seed`.
template <class Policy>
Trajectory rollout(const ContinuousEnv& env, Policy&& policy, std::size_t horizon, std::uint64_t seed) {
  Rng init_rng(SeedSplitter(seed).derive("initial-state"));
  Vector s0 = env.initial_state(init_rng);
  return rollout_from(env, std::move(s0), std::forward<Policy>(policy), horizon, seed);
}

/// Sum_t gamma^t r_t.
inline double discounted_return(const Trajectory& traj, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("discounted_return: gamma must lie in [0,1)");
  double total = 0.0;
  double discount = 1.0;
  for (const auto& tr : traj.transitions) {
    total += discount * tr.reward;
    discount *= gamma;
  }
  return total;
}

}  // namespace sqog
