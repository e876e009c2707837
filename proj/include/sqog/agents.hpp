#pragma once

// TD3+BC baseline and the SQOG agent.
//
// SQOG adds an OOD generalization term to the TD3+BC critic loss:
//   L(theta_i) = E[(Q_i(s,a) - y)^2] + beta E[(Q_i(s, a + eta) - stopgrad Q_i(s,a))^2]
// with y = r + gamma (1 - d) min_j Q'_j(s', a'), a' from the target actor with
// clipped smoothing noise. The actor minimizes
//   J(phi) = -lambda E[Q_1(s, pi(s))] + E[|pi(s) - a|^2],  lambda = alpha / mean|Q_1(s, pi(s))|.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <sstream>
#include <string>
#include <vector>

#include "sqog/dataset.hpp"
#include "sqog/error.hpp"
#include "sqog/io.hpp"
#include "sqog/mdp.hpp"
#include "sqog/mlp.hpp"
#include "sqog/rng.hpp"

namespace sqog {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class NoiseKind { NormalClip, NormalTanh, Uniform };

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::NormalClip:
      return "normal-clip";
    case NoiseKind::NormalTanh:
      return "normal-tanh";
    case NoiseKind::Uniform:
      return "uniform";
  }
  return "?";
}

inline NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "normal-clip") return NoiseKind::NormalClip;
  if (s == "normal-tanh") return NoiseKind::NormalTanh;
  if (s == "uniform") return NoiseKind::Uniform;
  throw InvalidArgument("unknown noise kind: " + s);
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::NormalClip;
  double scale = 0.6;
  double clip = 0.5;

  void validate() const {
    if (!(clip > 0.0)) throw InvalidArgument("NoiseSpec: clip must be > 0");
    if (!(scale >= 0.0)) throw InvalidArgument("NoiseSpec: scale must be >= 0");
  }
};

/// One scalar draw of eta.
///  normal-clip: clamp(N(0, scale^2), -clip, clip)
///  normal-tanh: clip * tanh(N(0, scale^2))
///  uniform:     U(-clip, clip)
inline double sample_noise(const NoiseSpec& noise, Rng& rng) {
  switch (noise.kind) {
    case NoiseKind::NormalClip:
      return std::clamp(noise.scale * standard_normal(rng), -noise.clip, noise.clip);
    case NoiseKind::NormalTanh:
      return noise.clip * std::tanh(noise.scale * standard_normal(rng));
    case NoiseKind::Uniform:
      return uniform(rng, -noise.clip, noise.clip);
  }
  return 0.0;
}

/// a + eta, clamped to the action box.
inline Vector sample_ood_action(std::span<const double> action, const NoiseSpec& noise, std::span<const double> low,
                                std::span<const double> high, Rng& rng) {
  Vector out(action.begin(), action.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i] + sample_noise(noise, rng), low[i], high[i]);
  return out;
}

enum class AgentKind { Td3Bc, Sqog };

inline std::string to_string(AgentKind k) { return k == AgentKind::Td3Bc ? "td3bc" : "sqog"; }

inline AgentKind parse_agent_kind(const std::string& s) {
  if (s == "td3bc") return AgentKind::Td3Bc;
  if (s == "sqog") return AgentKind::Sqog;
  throw InvalidArgument("unknown agent: " + s);
}

struct SqogConfig {
  AgentKind agent = AgentKind::Sqog;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t actor_update_freq = 2;
  std::size_t batch_size = 256;
  std::size_t total_steps = 100000;
  double alpha = 150.0;
  double beta = 0.5;
  NoiseSpec noise;
  /// TD3 target smoothing; both values are multiples of the action half-range.
  double target_noise_sigma = 0.2;
  double target_noise_clip = 0.5;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  std::size_t hidden = 64;
  std::size_t eval_every = 5000;
  std::size_t eval_episodes = 10;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("config: gamma must lie in [0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("config: tau must lie in (0,1]");
    if (actor_update_freq < 1) throw InvalidArgument("config: actor_update_freq must be >= 1");
    if (batch_size < 1) throw InvalidArgument("config: batch_size must be >= 1");
    if (!(alpha > 0.0)) throw InvalidArgument("config: alpha must be > 0");
    if (!(beta >= 0.0)) throw InvalidArgument("config: beta must be >= 0");
    if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw InvalidArgument("config: learning rates must be > 0");
    if (hidden < 1) throw InvalidArgument("config: hidden must be >= 1");
    if (!(target_noise_sigma >= 0.0 && target_noise_clip >= 0.0))
      throw InvalidArgument("config: target noise parameters must be >= 0");
    noise.validate();
  }

  /// OG term active: SQOG with beta > 0.
  bool uses_og() const { return agent == AgentKind::Sqog && beta > 0.0; }
};

// ---------------------------------------------------------------------------
// Networks and data
// ---------------------------------------------------------------------------

/// Per-dimension state standardization, fitted on the dataset.
struct StateNormalizer {
  ColVector mean;
  ColVector std;

  static StateNormalizer fit(const OfflineDataset& ds) {
    const auto sd = static_cast<Eigen::Index>(ds.state_dim);
    StateNormalizer n{ColVector::Zero(sd), ColVector::Zero(sd)};
    for (const auto& t : ds.transitions)
      for (Eigen::Index k = 0; k < sd; ++k) n.mean[k] += t.state[static_cast<std::size_t>(k)];
    n.mean /= static_cast<double>(ds.size());
    for (const auto& t : ds.transitions)
      for (Eigen::Index k = 0; k < sd; ++k) {
        const double d = t.state[static_cast<std::size_t>(k)] - n.mean[k];
        n.std[k] += d * d;
      }
    n.std = (n.std / static_cast<double>(ds.size())).cwiseSqrt().array() + 1e-3;
    return n;
  }

  static StateNormalizer identity(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {ColVector::Zero(d), ColVector::Ones(d)};
  }

  Matrix apply(const Matrix& states) const {
    return ((states.colwise() - mean).array().colwise() / std.array()).matrix();
  }
};

struct Network {
  MlpSpec spec;
  ParamVector params;
};

struct AgentNets {
  Network actor, actor_target;
  Network critic1, critic2, critic1_target, critic2_target;
  AdamState actor_opt, critic1_opt, critic2_opt;
  StateNormalizer normalizer;
  Vector action_low, action_high;

  std::size_t state_dim() const { return actor.spec.input_dim(); }
  std::size_t action_dim() const { return actor.spec.output_dim(); }

  /// Targets start equal to their online networks.
  static AgentNets create(std::size_t state_dim, Vector action_low, Vector action_high, std::size_t hidden,
                          StateNormalizer normalizer, std::uint64_t seed) {
    const SeedSplitter split(seed);
    const std::size_t action_dim = action_low.size();
    AgentNets n;
    n.actor.spec = MlpSpec::actor(state_dim, hidden, action_low, action_high, split.derive("init-actor"));
    n.critic1.spec = MlpSpec::critic(state_dim + action_dim, hidden, split.derive("init-critic", 1));
    n.critic2.spec = MlpSpec::critic(state_dim + action_dim, hidden, split.derive("init-critic", 2));
    n.actor.params = init_params(n.actor.spec);
    n.critic1.params = init_params(n.critic1.spec);
    n.critic2.params = init_params(n.critic2.spec);
    n.actor_target = n.actor;
    n.critic1_target = n.critic1;
    n.critic2_target = n.critic2;
    n.actor_opt = AdamState::zeros(n.actor.params.size());
    n.critic1_opt = AdamState::zeros(n.critic1.params.size());
    n.critic2_opt = AdamState::zeros(n.critic2.params.size());
    n.normalizer = std::move(normalizer);
    n.action_low = std::move(action_low);
    n.action_high = std::move(action_high);
    return n;
  }

  /// Deterministic policy on raw (unnormalized) states, one column each.
  Matrix act(const Matrix& raw_states) const {
    return forward(actor.spec, actor.params, normalizer.apply(raw_states));
  }

  Vector act(std::span<const double> state) const {
    Matrix s(static_cast<Eigen::Index>(state.size()), 1);
    for (std::size_t k = 0; k < state.size(); ++k) s(static_cast<Eigen::Index>(k), 0) = state[k];
    const Matrix a = act(s);
    Vector out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index k = 0; k < a.rows(); ++k) out[static_cast<std::size_t>(k)] = a(k, 0);
    return env_safe(std::move(out));
  }

  /// Critic value for raw (s, a) columns.
  Matrix q_values(const Network& critic, const Matrix& raw_states, const Matrix& actions) const {
    Matrix in(raw_states.rows() + actions.rows(), raw_states.cols());
    in.topRows(raw_states.rows()) = normalizer.apply(raw_states);
    in.bottomRows(actions.rows()) = actions;
    return forward(critic.spec, critic.params, in);
  }

 private:
  /// tanh can round onto the box edge; keep actions inside for env.step.
  Vector env_safe(Vector a) const {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i], action_low[i], action_high[i]);
    return a;
  }
};

/// Dataset packed as column matrices with states already normalized.
struct TrainingData {
  Matrix states, actions, next_states;
  ColVector rewards, done;

  static TrainingData pack(const OfflineDataset& ds, const StateNormalizer& norm) {
    const auto n = static_cast<Eigen::Index>(ds.size());
    const auto sd = static_cast<Eigen::Index>(ds.state_dim);
    const auto ad = static_cast<Eigen::Index>(ds.action_dim);
    TrainingData d{Matrix(sd, n), Matrix(ad, n), Matrix(sd, n), ColVector(n), ColVector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = ds.transitions[static_cast<std::size_t>(i)];
      for (Eigen::Index k = 0; k < sd; ++k) {
        d.states(k, i) = t.state[static_cast<std::size_t>(k)];
        d.next_states(k, i) = t.next_state[static_cast<std::size_t>(k)];
      }
      for (Eigen::Index k = 0; k < ad; ++k) d.actions(k, i) = t.action[static_cast<std::size_t>(k)];
      d.rewards[i] = t.reward;
      d.done[i] = t.done ? 1.0 : 0.0;
    }
    d.states = norm.apply(d.states);
    d.next_states = norm.apply(d.next_states);
    return d;
  }

  std::size_t size() const { return static_cast<std::size_t>(rewards.size()); }
};

/// Minibatch with normalized states, one column per sample.
struct Batch {
  Matrix states, actions, next_states;
  ColVector rewards, done;

  Eigen::Index size() const { return rewards.size(); }
};

inline Batch gather(const TrainingData& data, const std::vector<std::size_t>& idx) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  Batch out{Matrix(data.states.rows(), b), Matrix(data.actions.rows(), b), Matrix(data.next_states.rows(), b),
            ColVector(b), ColVector(b)};
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
    out.states.col(j) = data.states.col(i);
    out.actions.col(j) = data.actions.col(i);
    out.next_states.col(j) = data.next_states.col(i);
    out.rewards[j] = data.rewards[i];
    out.done[j] = data.done[i];
  }
  return out;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

// ---------------------------------------------------------------------------
// Losses and updates
// ---------------------------------------------------------------------------

/// y = r + gamma (1 - d) min(Q'_1, Q'_2)(s', a'),
/// a' = clamp(actor'(s') + clamp(sigma h N, -c h, c h)), h = action half-range.
inline ColVector critic_targets(const Batch& batch, const AgentNets& nets, const SqogConfig& cfg, Rng& rng) {
  Matrix next_actions = forward(nets.actor_target.spec, nets.actor_target.params, batch.next_states);
  for (Eigen::Index r = 0; r < next_actions.rows(); ++r) {
    const auto k = static_cast<std::size_t>(r);
    const double half = 0.5 * (nets.action_high[k] - nets.action_low[k]);
    for (Eigen::Index c = 0; c < next_actions.cols(); ++c) {
      const double eps = std::clamp(cfg.target_noise_sigma * half * standard_normal(rng),
                                    -cfg.target_noise_clip * half, cfg.target_noise_clip * half);
      next_actions(r, c) = std::clamp(next_actions(r, c) + eps, nets.action_low[k], nets.action_high[k]);
    }
  }
  const Matrix in = stack_rows(batch.next_states, next_actions);
  const Matrix q1 = forward(nets.critic1_target.spec, nets.critic1_target.params, in);
  const Matrix q2 = forward(nets.critic2_target.spec, nets.critic2_target.params, in);
  const ColVector q_min = q1.row(0).cwiseMin(q2.row(0)).transpose();
  return batch.rewards.array() + cfg.gamma * (1.0 - batch.done.array()) * q_min.array();
}

/// OOD actions a + eta for a whole batch, clamped to the box.
inline Matrix sample_ood_actions(const Matrix& actions, const NoiseSpec& noise, const Vector& low, const Vector& high,
                                 Rng& rng) {
  Matrix out = actions;
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const auto k = static_cast<std::size_t>(r);
      out(r, c) = std::clamp(out(r, c) + sample_noise(noise, rng), low[k], high[k]);
    }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// mean (Q(s,a) - y)^2 and its parameter gradient.
inline LossAndGrad td_loss(const Network& critic, const Batch& batch, const ColVector& targets,
                           ForwardCache* cache_out = nullptr) {
  ForwardCache cache;
  const Matrix q = forward(critic.spec, critic.params, stack_rows(batch.states, batch.actions), &cache);
  const double n = static_cast<double>(batch.size());
  const Eigen::RowVectorXd err = q.row(0) - targets.transpose();
  LossAndGrad out;
  out.loss = err.squaredNorm() / n;
  const Matrix upstream = (2.0 / n) * err;
  out.grad = backward(critic.spec, critic.params, cache, upstream).params;
  if (cache_out) *cache_out = std::move(cache);
  return out;
}

/// mean (Q(s, a_ood) - stopgrad Q(s, a))^2. Only the perturbed branch
/// carries gradient; `anchor` holds the detached Q(s, a) values.
inline LossAndGrad og_loss(const Network& critic, const Matrix& states, const Matrix& ood_actions,
                           const Eigen::RowVectorXd& anchor) {
  ForwardCache cache;
  const Matrix q_ood = forward(critic.spec, critic.params, stack_rows(states, ood_actions), &cache);
  const double n = static_cast<double>(states.cols());
  const Eigen::RowVectorXd err = q_ood.row(0) - anchor;
  LossAndGrad out;
  out.loss = err.squaredNorm() / n;
  out.grad = backward(critic.spec, critic.params, cache, (2.0 / n) * Matrix(err)).params;
  return out;
}

/// Convenience form: evaluates the detached anchor Q(s, a) itself.
inline LossAndGrad og_loss(const Network& critic, const Batch& batch, const Matrix& ood_actions) {
  const Eigen::RowVectorXd anchor =
      forward(critic.spec, critic.params, stack_rows(batch.states, batch.actions)).row(0);
  return og_loss(critic, batch.states, ood_actions, anchor);
}

struct CriticReport {
  /// Summed over the two critics.
  double loss_td = 0.0;
  double loss_og = 0.0;
};

/// One Adam step per critic on L_TD + beta L_OG. Both critics share the same
/// perturbed actions. `og_rng` is only consumed when the OG term is active.
inline CriticReport critic_update(const Batch& batch, AgentNets& nets, const SqogConfig& cfg, Rng& target_rng,
                                  Rng& og_rng) {
  const ColVector y = critic_targets(batch, nets, cfg, target_rng);
  Matrix ood;
  if (cfg.uses_og()) ood = sample_ood_actions(batch.actions, cfg.noise, nets.action_low, nets.action_high, og_rng);

  CriticReport report;
  auto step = [&](Network& critic, AdamState& opt) {
    ForwardCache cache;
    LossAndGrad td = td_loss(critic, batch, y, &cache);
    report.loss_td += td.loss;
    ParamVector grad = std::move(td.grad);
    if (cfg.uses_og()) {
      const Eigen::RowVectorXd anchor = cache.act.back().row(0);
      const LossAndGrad og = og_loss(critic, batch.states, ood, anchor);
      report.loss_og += og.loss;
      grad.values += cfg.beta * og.grad.values;
    }
    if (!std::isfinite(report.loss_td) || !std::isfinite(report.loss_og))
      throw NumericError("critic_update: non-finite loss (td " + std::to_string(report.loss_td) + ", og " +
                         std::to_string(report.loss_og) + ")");
    adam_step(critic.params, grad, opt, cfg.critic_lr);
  };
  step(nets.critic1, nets.critic1_opt);
  step(nets.critic2, nets.critic2_opt);
  return report;
}

/// lambda = alpha N / sum |Q|, or alpha when sum |Q| < 1e-6 N.
inline double actor_lambda(const Eigen::RowVectorXd& q, double alpha) {
  const double n = static_cast<double>(q.size());
  const double total = q.cwiseAbs().sum();
  return total < 1e-6 * n ? alpha : alpha * n / total;
}

struct ActorReport {
  double loss = 0.0;
  double lambda = 0.0;
};

/// J(phi) = -lambda mean Q_1(s, pi(s)) + mean |pi(s) - a|^2 and its gradient.
inline std::pair<ActorReport, ParamVector> actor_loss(const Batch& batch, const AgentNets& nets, double alpha) {
  ForwardCache actor_cache;
  const Matrix pi = forward(nets.actor.spec, nets.actor.params, batch.states, &actor_cache);
  ForwardCache critic_cache;
  const Matrix q = forward(nets.critic1.spec, nets.critic1.params, stack_rows(batch.states, pi), &critic_cache);
  const double n = static_cast<double>(batch.size());
  ActorReport report;
  report.lambda = actor_lambda(q.row(0), alpha);
  const Matrix diff = pi - batch.actions;
  report.loss = -report.lambda * q.sum() / n + diff.squaredNorm() / n;

  const Matrix dq = Matrix::Constant(1, q.cols(), -report.lambda / n);
  const Matrix d_input = backward(nets.critic1.spec, nets.critic1.params, critic_cache, dq).input;
  const Matrix upstream = d_input.bottomRows(pi.rows()) + (2.0 / n) * diff;
  ParamVector grad = backward(nets.actor.spec, nets.actor.params, actor_cache, upstream).params;
  return {report, std::move(grad)};
}

inline ActorReport actor_update(const Batch& batch, AgentNets& nets, const SqogConfig& cfg) {
  auto [report, grad] = actor_loss(batch, nets, cfg.alpha);
  if (!std::isfinite(report.loss)) throw NumericError("actor_update: non-finite loss");
  adam_step(nets.actor.params, grad, nets.actor_opt, cfg.actor_lr);
  return report;
}

inline void update_targets(AgentNets& nets, double tau) {
  soft_update(nets.actor_target.params, nets.actor.params, tau);
  soft_update(nets.critic1_target.params, nets.critic1.params, tau);
  soft_update(nets.critic2_target.params, nets.critic2.params, tau);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::size_t step = 0;
  double critic_loss_td = 0.0;
  double critic_loss_og = 0.0;
  double lambda = 0.0;
  double eval_return = 0.0;
  double normalized_score = 0.0;
};

struct TrainResult {
  AgentNets nets;
  std::vector<MetricsRow> metrics;
  std::size_t critic_updates = 0;
  std::size_t actor_updates = 0;
  std::size_t target_updates = 0;
  std::size_t final_step = 0;
};

inline double normalized_score(double score, const ScoreRefs& refs) {
  refs.validate();
  return 100.0 * (score - refs.random_score) / (refs.expert_score - refs.random_score);
}

/// Mean undiscounted return of the deterministic actor.
inline double evaluate_policy(const ContinuousEnv& env, const AgentNets& nets, std::size_t episodes,
                              std::uint64_t seed) {
  return average_return(env, [&](const Vector& s, Rng&) { return nets.act(s); }, episodes, seed);
}

/// Continues training from `nets` at `start_step` up to cfg.total_steps.
/// Each step draws from streams keyed by (seed, step), so a resumed run
/// replays the same randomness as an uninterrupted one.
inline TrainResult train_from(const SqogConfig& cfg, const OfflineDataset& dataset, const ContinuousEnv& env,
                              AgentNets nets, std::size_t start_step, std::uint64_t seed,
                              const std::function<void(const MetricsRow&)>& on_eval = {},
                              const std::function<void(std::size_t, const AgentNets&)>& on_step = {}) {
  cfg.validate();
  dataset.validate();
  if (dataset.env_id != env.id()) throw InvalidArgument("train: dataset env '" + dataset.env_id + "' != '" + env.id() + "'");
  if (cfg.batch_size > dataset.size()) throw InvalidArgument("train: batch_size exceeds dataset size");

  const SeedSplitter split(seed);
  const TrainingData data = TrainingData::pack(dataset, nets.normalizer);
  TrainResult res{std::move(nets), {}, 0, 0, 0, start_step};
  double last_lambda = 0.0;
  for (std::size_t t = start_step + 1; t <= cfg.total_steps; ++t) {
    Rng batch_rng = split.rng("batch", t);
    Rng target_rng = split.rng("target-noise", t);
    Rng og_rng = split.rng("og-noise", t);
    const Batch batch = gather(data, sample_indices(data.size(), cfg.batch_size, batch_rng));
    const CriticReport cr = critic_update(batch, res.nets, cfg, target_rng, og_rng);
    ++res.critic_updates;
    if (t % cfg.actor_update_freq == 0) {
      last_lambda = actor_update(batch, res.nets, cfg).lambda;
      ++res.actor_updates;
      update_targets(res.nets, cfg.tau);
      ++res.target_updates;
    }
    res.final_step = t;
    if (cfg.eval_every > 0 && t % cfg.eval_every == 0) {
      MetricsRow row;
      row.step = t;
      row.critic_loss_td = cr.loss_td;
      row.critic_loss_og = cr.loss_og;
      row.lambda = last_lambda;
      row.eval_return = evaluate_policy(env, res.nets, cfg.eval_episodes, split.derive("eval", t));
      row.normalized_score = normalized_score(row.eval_return, dataset.ref_scores);
      res.metrics.push_back(row);
      if (on_eval) on_eval(row);
    }
    if (on_step) on_step(t, res.nets);
  }
  return res;
}

inline AgentNets initial_nets(const SqogConfig& cfg, const OfflineDataset& dataset, const ContinuousEnv& env,
                              std::uint64_t seed) {
  return AgentNets::create(env.state_dim(), env.action_low(), env.action_high(), cfg.hidden,
                           StateNormalizer::fit(dataset), SeedSplitter(seed).derive("init"));
}

/// Algorithm loop: critic update every step, actor and target updates every
/// actor_update_freq steps.
inline TrainResult train(const SqogConfig& cfg, const OfflineDataset& dataset, const ContinuousEnv& env,
                         std::uint64_t seed, const std::function<void(const MetricsRow&)>& on_eval = {}) {
  return train_from(cfg, dataset, env, initial_nets(cfg, dataset, env, seed), 0, seed, on_eval);
}

// ---------------------------------------------------------------------------
// Metrics CSV and checkpoints
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "step,critic_loss_td,critic_loss_og,lambda,eval_return,normalized_score\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + format_real(r.critic_loss_td) + ',' + format_real(r.critic_loss_og) + ',' +
           format_real(r.lambda) + ',' + format_real(r.eval_return) + ',' + format_real(r.normalized_score) + '\n';
  }
  return out;
}

struct Checkpoint {
  AgentKind agent = AgentKind::Sqog;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  AgentNets nets;
};

namespace detail {

inline void write_vector(std::ostream& out, const char* key, const ColVector& v) {
  out << key;
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_real(v[i]);
  out << '\n';
}

inline ColVector read_vector(std::istringstream fields, std::size_t n, std::size_t line) {
  ColVector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(fields >> v[i])) throw ParseError(line, "vector too short");
  return v;
}

inline void write_adam(std::ostream& out, const std::string& name, const AdamState& s) {
  out << "adam " << name << ' ' << s.step << ' ' << s.m.size() << '\n';
  for (Eigen::Index i = 0; i < s.m.size(); ++i) out << format_real(s.m[i]) << '\n';
  for (Eigen::Index i = 0; i < s.v.size(); ++i) out << format_real(s.v[i]) << '\n';
}

inline AdamState read_adam(LineReader& reader, const std::string& name) {
  auto f = reader.next("adam");
  std::string got;
  std::size_t n = 0;
  AdamState s;
  f >> got >> s.step >> n;
  if (got != name) throw ParseError(reader.line(), "expected optimizer '" + name + "'");
  s.m.resize(static_cast<Eigen::Index>(n));
  s.v.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < s.m.size(); ++i) s.m[i] = reader.real();
  for (Eigen::Index i = 0; i < s.v.size(); ++i) s.v[i] = reader.real();
  return s;
}

}  // namespace detail

inline std::string checkpoint_text(const Checkpoint& ck) {
  std::ostringstream out;
  const auto& n = ck.nets;
  out << "sqog-checkpoint 1\nagent " << to_string(ck.agent) << "\nseed " << ck.seed << "\nstep " << ck.step
      << "\nstate_dim " << n.state_dim() << "\naction_dim " << n.action_dim() << '\n';
  detail::write_vector(out, "norm_mean", n.normalizer.mean);
  detail::write_vector(out, "norm_std", n.normalizer.std);
  write_mlp(out, "actor", n.actor.spec, n.actor.params);
  write_mlp(out, "actor_target", n.actor_target.spec, n.actor_target.params);
  write_mlp(out, "critic1", n.critic1.spec, n.critic1.params);
  write_mlp(out, "critic2", n.critic2.spec, n.critic2.params);
  write_mlp(out, "critic1_target", n.critic1_target.spec, n.critic1_target.params);
  write_mlp(out, "critic2_target", n.critic2_target.spec, n.critic2_target.params);
  detail::write_adam(out, "actor", n.actor_opt);
  detail::write_adam(out, "critic1", n.critic1_opt);
  detail::write_adam(out, "critic2", n.critic2_opt);
  return out.str();
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  LineReader reader(in);
  Checkpoint ck;
  {
    int version = 0;
    reader.next("sqog-checkpoint") >> version;
    if (version != 1) throw ParseError(reader.line(), "unsupported checkpoint version");
  }
  {
    std::string agent;
    reader.next("agent") >> agent;
    try {
      ck.agent = parse_agent_kind(agent);
    } catch (const InvalidArgument& e) {
      throw ParseError(reader.line(), e.what());
    }
  }
  reader.next("seed") >> ck.seed;
  reader.next("step") >> ck.step;
  std::size_t sd = 0, ad = 0;
  reader.next("state_dim") >> sd;
  reader.next("action_dim") >> ad;
  auto& n = ck.nets;
  n.normalizer.mean = detail::read_vector(reader.next("norm_mean"), sd, reader.line());
  n.normalizer.std = detail::read_vector(reader.next("norm_std"), sd, reader.line());
  auto load = [&](Network& net, const char* name) {
    auto [spec, params] = read_mlp(reader, name);
    net.spec = std::move(spec);
    net.params = std::move(params);
  };
  load(n.actor, "actor");
  load(n.actor_target, "actor_target");
  load(n.critic1, "critic1");
  load(n.critic2, "critic2");
  load(n.critic1_target, "critic1_target");
  load(n.critic2_target, "critic2_target");
  n.actor_opt = detail::read_adam(reader, "actor");
  n.critic1_opt = detail::read_adam(reader, "critic1");
  n.critic2_opt = detail::read_adam(reader, "critic2");
  if (n.actor.spec.input_dim() != sd || n.actor.spec.output_dim() != ad)
    throw ParseError(reader.line(), "actor shape does not match the declared dimensions");
  n.action_low = n.actor.spec.box_low;
  n.action_high = n.actor.spec.box_high;
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file(path, checkpoint_text(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace sqog
