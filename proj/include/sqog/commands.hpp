#pragma once

// Command implementations behind the sqog executable. Each command reads a
// RunConfig, writes its outputs (plus the resolved config) under an output
// directory and returns a process exit code.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sqog/agents.hpp"
#include "sqog/chn.hpp"
#include "sqog/config.hpp"
#include "sqog/dataset.hpp"
#include "sqog/eval.hpp"
#include "sqog/io.hpp"
#include "sqog/properties.hpp"

namespace sqog {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitViolation = 2, kExitRuntime = 3 };

/// Per-component seeds derived from the master seed.
inline std::uint64_t master_seed(const RunConfig& cfg) { return cfg.integer("env", "seed"); }
inline std::uint64_t dataset_seed(std::uint64_t master) { return SeedSplitter(master).derive("dataset"); }
inline std::uint64_t train_seed(std::uint64_t master) { return SeedSplitter(master).derive("train"); }
inline std::uint64_t eval_seed(std::uint64_t master) { return SeedSplitter(master).derive("eval"); }

inline void write_resolved(const RunConfig& cfg, const std::filesystem::path& out) {
  write_file(out / "config.ini", cfg.resolved());
}

inline std::filesystem::path dataset_path(const RunConfig& cfg, const std::filesystem::path& out) {
  return cfg.has("dataset", "path") ? std::filesystem::path(cfg.str("dataset", "path")) : out / "dataset.jsonl";
}

inline OfflineDataset load_run_dataset(const RunConfig& cfg, const std::filesystem::path& out) {
  const auto path = dataset_path(cfg, out);
  if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path.string());
  return load_dataset(path);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const ContinuousEnv env = env_from_config(cfg);
  const BehaviorPolicy behavior = behavior_from_config(cfg);
  const std::size_t n = cfg.integer("dataset", "n");
  if (n == 0) throw ConfigError("dataset.n must be >= 1");
  const OfflineDataset ds = generate_dataset(env, behavior, n, dataset_seed(master_seed(cfg)));
  const auto path = dataset_path(cfg, out);
  save(ds, path);
  write_resolved(cfg, out);

  double reward = 0.0;
  std::size_t dones = 0;
  for (const auto& t : ds.transitions) {
    reward += t.reward;
    dones += t.done;
  }
  log << "wrote " << path.string() << "\n"
      << "  env " << ds.env_id << ", behavior " << ds.behavior_id << ", n " << ds.size() << ", terminal " << dones
      << "\n  mean reward " << format_real(reward / static_cast<double>(ds.size())) << ", ref scores random "
      << format_real(ds.ref_scores.random_score) << " expert " << format_real(ds.ref_scores.expert_score)
      << "\n  hash " << dataset_hash(ds) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-operator
// ---------------------------------------------------------------------------

struct OperatorCheckOptions {
  std::size_t contraction_pairs = 1000;
  std::size_t fixed_point_inits = 10;
  std::size_t ood_instances = 100;
  std::uint64_t seed = 0;
};

struct OperatorReport {
  std::vector<CheckResult> checks;
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  std::string text() const {
    std::string out;
    for (const auto& c : checks) out += std::string(c.pass ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
    return out;
  }
};

/// Runs the whole property suite on one tabular instance. A spec that fails
/// validation is reported as a violation without running the sweeps.
inline OperatorReport verify_operator(const SboInstance& inst, const OperatorCheckOptions& opt) {
  OperatorReport rep;
  try {
    inst.spec.validate();
    check_policy_support(inst.spec, inst.policy);
    rep.checks.push_back({"spec-invariants", true, "neighbor map and masks consistent"});
  } catch (const InvalidArgument& e) {
    rep.checks.push_back({"spec-invariants", false, e.what()});
    return rep;
  }
  const double gamma = inst.mdp.gamma();
  const SeedSplitter split(opt.seed);
  std::ostringstream msg;
  msg << std::setprecision(10);

  Rng rng = split.rng("contraction");
  const ContractionSweep cs = contraction_sweep(inst, opt.contraction_pairs, rng);
  msg << cs.pairs << " pairs, max ratio " << cs.max_ratio << " (gamma " << gamma << "), violations " << cs.violations;
  rep.checks.push_back({"contraction", cs.violations == 0, msg.str()});

  msg.str("");
  // Stopping at residual tol leaves each run within gamma/(1-gamma) tol of
  // the fixed point, so two runs may differ by twice that.
  constexpr double kTol = 1e-8;
  const double agree = gamma > 0.0 ? 2.0 * gamma / (1.0 - gamma) * kTol + 1e-12 : 1e-12;
  const auto max_iter = static_cast<std::size_t>(
      gamma > 0.0 ? std::max(500.0, std::ceil(std::log(1e-12) / std::log(gamma))) : 500.0);
  Rng fp_rng = split.rng("fixed-point");
  const FixedPointSweep fp = fixed_point_sweep(inst, opt.fixed_point_inits, fp_rng, kTol, max_iter);
  msg << fp.runs << " starts, max iterations " << fp.max_iterations << " (cap " << max_iter << "), failures "
      << fp.failures << ", max disagreement " << fp.max_disagreement << " (allowed " << agree << ")";
  rep.checks.push_back({"fixed-point", fp.failures == 0 && fp.max_disagreement <= agree, msg.str()});

  msg.str("");
  const GapSweep gs = insample_gap_sweep(gamma, split.derive("gap"));
  for (const auto& p : gs.points) msg << "delta " << p.delta << ": gap " << p.gap << " <= " << p.bound << "; ";
  rep.checks.push_back({"insample-gap", gs.monotone && gs.bounded, msg.str()});

  msg.str("");
  const OodUpdateSweep os = ood_update_sweep(opt.ood_instances, gamma, split.derive("ood"));
  msg << os.instances << " instances, " << os.updates << " updates, violations " << os.violations;
  if (os.violations) msg << " (first: " << os.first_violation << ")";
  rep.checks.push_back({"ood-update-monotone", os.violations == 0, msg.str()});
  return rep;
}

inline SboInstance tabular_instance_from_config(const RunConfig& cfg) {
  const std::string& id = cfg.str("env", "id");
  const double gamma = cfg.real("env", "gamma");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("env.gamma must lie in [0,1)");
  const SeedSplitter split(master_seed(cfg));
  Rng rng = split.rng("tabular");
  if (id == "grid-5x5") return random_sbo_instance(make_gridworld(gamma), rng);
  if (id == "random-tabular") {
    const std::size_t ns = cfg.integer("env", "n_states"), na = cfg.integer("env", "n_actions");
    if (ns == 0 || na == 0) throw ConfigError("env.n_states and env.n_actions must be >= 1");
    return random_sbo_instance(random_tabular_mdp(ns, na, gamma, rng), rng);
  }
  throw ConfigError("verify-operator needs a tabular env.id (grid-5x5 or random-tabular), got '" + id + "'");
}

inline int cmd_verify_operator(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const SboInstance inst = tabular_instance_from_config(cfg);
  OperatorCheckOptions opt;
  opt.contraction_pairs = cfg.integer("eval", "contraction_pairs");
  opt.fixed_point_inits = cfg.integer("eval", "fixed_point_inits");
  opt.ood_instances = cfg.integer("eval", "ood_instances");
  opt.seed = SeedSplitter(master_seed(cfg)).derive("verify");
  const OperatorReport rep = verify_operator(inst, opt);
  write_file(out / "operator_report.txt", rep.text());
  write_resolved(cfg, out);
  log << rep.text();
  return rep.pass() ? kExitOk : kExitViolation;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const SqogConfig agent = agent_from_config(cfg);
  const ContinuousEnv env = env_from_config(cfg);
  const OfflineDataset ds = load_run_dataset(cfg, out);
  const std::uint64_t seed = train_seed(master_seed(cfg));
  write_resolved(cfg, out);

  AgentNets nets;
  std::size_t start = 0;
  if (cfg.has("agent", "resume")) {
    Checkpoint ck = load_checkpoint(cfg.str("agent", "resume"));
    if (ck.seed != seed) throw ConfigError("resume checkpoint was written with a different seed");
    if (ck.agent != agent.agent) throw ConfigError("resume checkpoint belongs to agent " + to_string(ck.agent));
    if (ck.step > agent.total_steps) throw ConfigError("resume checkpoint is past agent.total_steps");
    nets = std::move(ck.nets);
    start = ck.step;
    log << "resuming at step " << start << "\n";
  } else {
    nets = initial_nets(agent, ds, env, seed);
  }

  const std::size_t every = cfg.integer("agent", "checkpoint_every");
  const TrainResult res = train_from(
      agent, ds, env, std::move(nets), start, seed,
      [&](const MetricsRow& row) {
        log << "step " << row.step << "  td " << format_real(row.critic_loss_td) << "  og "
            << format_real(row.critic_loss_og) << "  lambda " << format_real(row.lambda) << "  return "
            << format_real(row.eval_return) << "  score " << format_real(row.normalized_score) << "\n";
      },
      [&](std::size_t step, const AgentNets& n) {
        if (every > 0 && step % every == 0)
          save_checkpoint({agent.agent, seed, step, n}, out / ("checkpoint_" + std::to_string(step) + ".txt"));
      });
  write_file(out / "metrics.csv", metrics_csv(res.metrics));
  save_checkpoint({agent.agent, seed, res.final_step, res.nets}, out / "checkpoint.txt");
  log << "trained " << to_string(agent.agent) << " for " << res.critic_updates << " critic / " << res.actor_updates
      << " actor updates; wrote " << (out / "metrics.csv").string() << " and " << (out / "checkpoint.txt").string()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Final evaluation shared by eval and sweep.
inline double final_score(const ContinuousEnv& env, const AgentNets& nets, std::size_t episodes,
                          std::uint64_t master, const ScoreRefs& refs, double* raw_return = nullptr) {
  const double ret = evaluate_policy(env, nets, episodes, eval_seed(master));
  if (raw_return) *raw_return = ret;
  return normalized_score(ret, refs);
}

struct GridOptions {
  QGridOptions grid;
  McOracleConfig oracle;
  std::size_t key_states = 2;
  std::size_t chn_samples = 10000;
  std::uint64_t chn_seed = 0;
};

inline GridOptions grid_options_from_config(const RunConfig& cfg, double gamma) {
  GridOptions g;
  g.grid.step = cfg.real("eval", "grid_step");
  g.grid.tol = cfg.real("eval", "tol");
  g.grid.density_threshold = cfg.real("eval", "density_threshold");
  g.oracle = oracle_from_config(cfg, gamma);
  g.key_states = cfg.integer("eval", "key_states");
  g.chn_samples = cfg.integer("eval", "chn_samples");
  g.chn_seed = SeedSplitter(master_seed(cfg)).derive("chn");
  return g;
}

/// Grid reports of one agent at the given states.
inline std::vector<QGridReport> agent_grids(const ContinuousEnv& env, const AgentNets& nets, const OfflineDataset& ds,
                                            const std::vector<Vector>& states, const GridOptions& opt,
                                            const ChnQuery* chn) {
  std::vector<QGridReport> out;
  for (const auto& s : states)
    out.push_back(q_grid(agent_critic(nets), agent_oracle(env, nets, opt.oracle), s, env.action_low()[0],
                         env.action_high()[0], ds, opt.grid, chn));
  return out;
}

inline int cmd_eval(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  if (!cfg.has("eval", "checkpoint")) throw ConfigError("eval needs eval.checkpoint");
  const ContinuousEnv env = env_from_config(cfg);
  const OfflineDataset ds = load_run_dataset(cfg, out);
  const SqogConfig agent = agent_from_config(cfg);
  const Checkpoint ck = load_checkpoint(cfg.str("eval", "checkpoint"));
  write_resolved(cfg, out);

  double ret = 0.0;
  const double score = final_score(env, ck.nets, agent.eval_episodes, master_seed(cfg), ds.ref_scores, &ret);
  std::string csv = "metric,value\nstep," + std::to_string(ck.step) + "\neval_return," + format_real(ret) +
                    "\nnormalized_score," + format_real(score) + "\n";
  log << "checkpoint " << cfg.str("eval", "checkpoint") << " (" << to_string(ck.agent) << ", step " << ck.step
      << "): return " << format_real(ret) << ", normalized score " << format_real(score) << "\n";

  if (env.action_dim() == 1) {
    const GridOptions gopt = grid_options_from_config(cfg, agent.gamma);
    const ChnQuery chn = make_chn_query(state_action_points(ds), gopt.chn_samples, gopt.chn_seed);
    const auto keys = key_states(ds, gopt.key_states, gopt.grid.tol);
    const auto grids = agent_grids(env, ck.nets, ds, keys, gopt, &chn);
    for (std::size_t k = 0; k < grids.size(); ++k) {
      write_file(out / ("grid_" + std::to_string(k) + ".csv"), grid_csv(grids[k]));
      const auto all = std::vector<bool>(grids[k].size(), true);
      csv += "grid_" + std::to_string(k) + "_mae," + format_real(*masked_mae(grids[k], all)) + "\n";
      const auto masked = masked_mae(grids[k], sanity_mask(grids[k]));
      if (masked) csv += "grid_" + std::to_string(k) + "_ood_chn_mae," + format_real(*masked) + "\n";
    }
    log << "wrote " << grids.size() << " grid reports\n";
  } else {
    log << "action_dim > 1: grid reports skipped\n";
  }
  write_file(out / "eval.csv", csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sanity-check
// ---------------------------------------------------------------------------

struct SanityRow {
  std::size_t key = 0;
  Vector state;
  std::size_t cells = 0;
  std::optional<double> mae_td3bc;
  std::optional<double> mae_sqog;
};

struct SanityResult {
  std::vector<Vector> keys;
  std::vector<QGridReport> td3bc, sqog;
  std::vector<SanityRow> rows;
  /// Over all masked cells of all key states.
  std::optional<double> mae_td3bc, mae_sqog;
  std::size_t cells = 0;

  bool sqog_lower() const { return mae_td3bc && mae_sqog && *mae_sqog < *mae_td3bc; }
};

/// Normalized-Q MAE of both agents against their MC oracles over the
/// OOD-masked, CHN-contained cells of the key-state grids.
inline SanityResult sanity_compare(const ContinuousEnv& env, const OfflineDataset& ds, const AgentNets& td3bc,
                                   const AgentNets& sqog, const GridOptions& opt) {
  if (env.action_dim() != 1) throw InvalidArgument("sanity-check needs a 1-D action space");
  SanityResult res;
  const ChnQuery chn = make_chn_query(state_action_points(ds), opt.chn_samples, opt.chn_seed);
  res.keys = key_states(ds, opt.key_states, opt.grid.tol);
  res.td3bc = agent_grids(env, td3bc, ds, res.keys, opt, &chn);
  res.sqog = agent_grids(env, sqog, ds, res.keys, opt, &chn);
  double sum_t = 0.0, sum_s = 0.0;
  for (std::size_t k = 0; k < res.keys.size(); ++k) {
    const auto mask = sanity_mask(res.td3bc[k]);
    SanityRow row{k, res.keys[k], 0, masked_mae(res.td3bc[k], mask), masked_mae(res.sqog[k], mask)};
    for (bool m : mask) row.cells += m;
    if (row.cells) {
      sum_t += *row.mae_td3bc * static_cast<double>(row.cells);
      sum_s += *row.mae_sqog * static_cast<double>(row.cells);
      res.cells += row.cells;
    }
    res.rows.push_back(std::move(row));
  }
  if (res.cells) {
    res.mae_td3bc = sum_t / static_cast<double>(res.cells);
    res.mae_sqog = sum_s / static_cast<double>(res.cells);
  }
  return res;
}

inline std::string sanity_csv(const SanityResult& res) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("nan"); };
  std::string csv = "key,state,cells,mae_td3bc,mae_sqog\n";
  for (const auto& r : res.rows) {
    std::string state;
    for (std::size_t i = 0; i < r.state.size(); ++i) state += (i ? " " : "") + format_real(r.state[i]);
    csv += std::to_string(r.key) + ',' + state + ',' + std::to_string(r.cells) + ',' + opt(r.mae_td3bc) + ',' +
           opt(r.mae_sqog) + '\n';
  }
  csv += "all,," + std::to_string(res.cells) + ',' + opt(res.mae_td3bc) + ',' + opt(res.mae_sqog) + '\n';
  return csv;
}

inline int cmd_sanity_check(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  for (const char* key : {"td3bc_checkpoint", "sqog_checkpoint"})
    if (!cfg.has("eval", key)) throw ConfigError(std::string("sanity-check needs eval.") + key);
  const ContinuousEnv env = env_from_config(cfg);
  const OfflineDataset ds = load_run_dataset(cfg, out);
  const SqogConfig agent = agent_from_config(cfg);
  const Checkpoint td3bc = load_checkpoint(cfg.str("eval", "td3bc_checkpoint"));
  const Checkpoint sqog = load_checkpoint(cfg.str("eval", "sqog_checkpoint"));
  write_resolved(cfg, out);

  const SanityResult res = sanity_compare(env, ds, td3bc.nets, sqog.nets, grid_options_from_config(cfg, agent.gamma));
  for (std::size_t k = 0; k < res.keys.size(); ++k) {
    write_file(out / ("grid_td3bc_" + std::to_string(k) + ".csv"), grid_csv(res.td3bc[k]));
    write_file(out / ("grid_sqog_" + std::to_string(k) + ".csv"), grid_csv(res.sqog[k]));
  }
  const std::string csv = sanity_csv(res);
  write_file(out / "sanity.csv", csv);
  log << csv;
  if (!res.cells) {
    log << "no OOD cells inside CHN at the key states; nothing to compare\n";
    return kExitOk;
  }
  log << (res.sqog_lower() ? "SQOG has the lower OOD Q error\n" : "TD3+BC has the lower (or equal) OOD Q error\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  double beta = 0.0;
  double alpha = 0.0;
  NoiseSpec noise;
};

inline std::vector<SweepCell> sweep_cells(const RunConfig& cfg) {
  std::vector<SweepCell> cells;
  std::vector<NoiseKind> kinds;
  try {
    for (const auto& k : cfg.list("sweep", "noise_kinds")) kinds.push_back(parse_noise_kind(k));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  for (double beta : cfg.real_list("sweep", "betas"))
    for (double alpha : cfg.real_list("sweep", "alphas"))
      for (NoiseKind kind : kinds)
        for (double scale : cfg.real_list("sweep", "noise_scales"))
          for (double clip : cfg.real_list("sweep", "noise_clips")) cells.push_back({beta, alpha, {kind, scale, clip}});
  if (cells.empty()) throw ConfigError("sweep grid is empty");
  return cells;
}

inline int cmd_sweep(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const ContinuousEnv env = env_from_config(cfg);
  const OfflineDataset ds = load_run_dataset(cfg, out);
  const SqogConfig base = agent_from_config(cfg);
  const auto cells = sweep_cells(cfg);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : cfg.list("sweep", "seeds")) seeds.push_back(RunConfig::to_uint(s, "sweep.seeds"));
  if (seeds.empty()) throw ConfigError("sweep.seeds is empty");
  write_resolved(cfg, out);

  std::string runs_csv = "beta,alpha,noise_kind,noise_scale,noise_clip,seed,status,normalized_score\n";
  std::string agg = "beta,alpha,noise_kind,noise_scale,noise_clip,runs,failed,mean,std\n";
  std::size_t failed_total = 0;
  for (const auto& cell : cells) {
    const std::string key = format_real(cell.beta) + ',' + format_real(cell.alpha) + ',' + to_string(cell.noise.kind) +
                            ',' + format_real(cell.noise.scale) + ',' + format_real(cell.noise.clip);
    std::vector<double> scores;
    std::size_t failed = 0;
    for (std::uint64_t seed : seeds) {
      SqogConfig c = base;
      c.beta = cell.beta;
      c.alpha = cell.alpha;
      c.noise = cell.noise;
      try {
        c.validate();
        const TrainResult res = train(c, ds, env, train_seed(seed));
        const double score = final_score(env, res.nets, c.eval_episodes, seed, ds.ref_scores);
        scores.push_back(score);
        runs_csv += key + ',' + std::to_string(seed) + ",ok," + format_real(score) + '\n';
      } catch (const std::exception& e) {
        ++failed;
        runs_csv += key + ',' + std::to_string(seed) + ",failed,nan\n";
        log << "cell " << key << " seed " << seed << " failed: " << e.what() << "\n";
      }
    }
    failed_total += failed;
    double mean = 0.0, var = 0.0;
    for (double s : scores) mean += s;
    if (!scores.empty()) mean /= static_cast<double>(scores.size());
    for (double s : scores) var += (s - mean) * (s - mean);
    const double sd = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size() - 1)) : 0.0;
    agg += key + ',' + std::to_string(scores.size()) + ',' + std::to_string(failed) + ',' +
           (scores.empty() ? std::string("nan") : format_real(mean)) + ',' +
           (scores.empty() ? std::string("nan") : format_real(sd)) + '\n';
    log << "cell " << key << ": " << scores.size() << " ok, mean " << format_real(mean) << " std " << format_real(sd)
        << "\n";
  }
  write_file(out / "sweep_runs.csv", runs_csv);
  write_file(out / "sweep.csv", agg);
  log << "wrote " << (out / "sweep.csv").string() << " (" << cells.size() << " cells x " << seeds.size()
      << " seeds, " << failed_total << " failed runs)\n";
  return failed_total ? kExitRuntime : kExitOk;
}

}  // namespace sqog
