#pragma once

// Flat INI-style run configuration.
//
//   [section]
//   key = value    ; or # comments
//
// Every key must be declared in the schema below; unknown sections or keys
// are rejected. Overrides use "section.key=value".

#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sqog/agents.hpp"
#include "sqog/error.hpp"
#include "sqog/eval.hpp"

namespace sqog {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ConfigKey {
  const char* section;
  const char* key;
  const char* default_value;
};

// Order here is the order of the resolved config.
inline constexpr ConfigKey kConfigSchema[] = {
    {"env", "id", "pendulum-lite"},
    {"env", "seed", "0"},
    {"env", "gamma", "0.9"},  // tabular environments only
    {"env", "n_states", "5"},
    {"env", "n_actions", "3"},
    {"env", "goal", ""},
    {"env", "step_scale", ""},
    {"env", "g", ""},
    {"env", "m", ""},
    {"env", "l", ""},
    {"env", "dt", ""},
    {"env", "max_speed", ""},
    {"env", "max_torque", ""},
    {"env", "horizon", ""},

    {"dataset", "path", ""},
    {"dataset", "behavior", "medium"},
    {"dataset", "sigma", "0.3"},
    {"dataset", "n", "20000"},

    {"agent", "kind", "sqog"},
    {"agent", "gamma", "0.99"},
    {"agent", "tau", "0.005"},
    {"agent", "actor_update_freq", "2"},
    {"agent", "batch_size", "256"},
    {"agent", "total_steps", "100000"},
    {"agent", "alpha", "150"},
    {"agent", "beta", "0.5"},
    {"agent", "target_noise_sigma", "0.2"},
    {"agent", "target_noise_clip", "0.5"},
    {"agent", "actor_lr", "3e-4"},
    {"agent", "critic_lr", "3e-4"},
    {"agent", "hidden", "64"},
    {"agent", "resume", ""},
    {"agent", "checkpoint_every", "0"},

    {"noise", "kind", "normal-clip"},
    {"noise", "scale", "0.6"},
    {"noise", "clip", "0.5"},

    {"eval", "every", "5000"},
    {"eval", "episodes", "10"},
    {"eval", "checkpoint", ""},
    {"eval", "td3bc_checkpoint", ""},
    {"eval", "sqog_checkpoint", ""},
    {"eval", "mc_rollouts", "1000"},
    {"eval", "mc_horizon", "1000"},
    {"eval", "grid_step", "0.01"},
    {"eval", "tol", "0.05"},
    {"eval", "density_threshold", "0"},
    {"eval", "key_states", "2"},
    {"eval", "chn_samples", "10000"},
    {"eval", "contraction_pairs", "1000"},
    {"eval", "fixed_point_inits", "10"},
    {"eval", "ood_instances", "100"},

    {"sweep", "betas", "0.1,0.5,1,2"},
    {"sweep", "alphas", "150"},
    {"sweep", "noise_kinds", "normal-clip"},
    {"sweep", "noise_scales", "0.6"},
    {"sweep", "noise_clips", "0.5"},
    {"sweep", "seeds", "0,1"},
};

inline bool known_section(std::string_view s) {
  for (const auto& k : kConfigSchema)
    if (s == k.section) return true;
  return false;
}

inline bool known_key(std::string_view section, std::string_view key) {
  for (const auto& k : kConfigSchema)
    if (section == k.section && key == k.key) return true;
  return false;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : kConfigSchema) values_[std::string(k.section) + "." + k.key] = k.default_value;
  }

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find_first_of("#;");
      const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (body.empty()) continue;
      if (body.front() == '[') {
        if (body.back() != ']') throw ParseError(line_no, "malformed section header '" + body + "'");
        section = trim(body.substr(1, body.size() - 2));
        if (!known_section(section)) throw ParseError(line_no, "unknown section [" + section + "]");
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ParseError(line_no, "expected key = value, got '" + body + "'");
      if (section.empty()) throw ParseError(line_no, "key outside any section");
      const std::string key = trim(body.substr(0, eq));
      if (!known_key(section, key)) throw ParseError(line_no, "unknown key '" + key + "' in [" + section + "]");
      cfg.values_[section + "." + key] = trim(body.substr(eq + 1));
    }
    return cfg;
  }

  /// "section.key=value"
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("override must look like section.key=value: '" + assignment + "'");
    const std::string section = trim(assignment.substr(0, dot));
    const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
    if (!known_key(section, key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
    values_[section + "." + key] = trim(assignment.substr(eq + 1));
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    apply_override(section + "." + key + "=" + value);
  }

  const std::string& str(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) throw ConfigError("undeclared config key '" + section + "." + key + "'");
    return it->second;
  }

  bool has(const std::string& section, const std::string& key) const { return !str(section, key).empty(); }

  double real(const std::string& section, const std::string& key) const {
    return to_real(str(section, key), section + "." + key);
  }

  std::uint64_t integer(const std::string& section, const std::string& key) const {
    return to_uint(str(section, key), section + "." + key);
  }

  static std::uint64_t to_uint(const std::string& v, const std::string& name) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
      x = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (v.empty() || used != v.size())
      throw ConfigError("config key " + name + " must be a non-negative integer, got '" + v + "'");
    return x;
  }

  std::vector<std::string> list(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(section, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> real_list(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(section, key)) out.push_back(to_real(s, section + "." + key));
    return out;
  }

  /// Every declared key with its effective value, in schema order.
  std::string resolved() const {
    std::string out;
    std::string section;
    for (const auto& k : kConfigSchema) {
      if (section != k.section) {
        if (!section.empty()) out += '\n';
        section = k.section;
        out += "[" + section + "]\n";
      }
      out += std::string(k.key) + " = " + str(k.section, k.key) + '\n';
    }
    return out;
  }

 private:
  static double to_real(const std::string& v, const std::string& name) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (v.empty() || used != v.size()) throw ConfigError("config key " + name + " must be a number, got '" + v + "'");
    return x;
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

inline ContinuousEnv env_from_config(const RunConfig& cfg) {
  EnvOverrides ov;
  for (const char* key : {"goal", "step_scale", "g", "m", "l", "dt", "max_speed", "max_torque", "horizon"})
    if (cfg.has("env", key)) ov[key] = cfg.real("env", key);
  try {
    return make_env(cfg.str("env", "id"), ov);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

inline BehaviorPolicy behavior_from_config(const RunConfig& cfg) {
  const std::string& b = cfg.str("dataset", "behavior");
  if (b == "random" || b == "uniform-random") return BehaviorPolicy::uniform_random();
  if (b == "expert" || b == "scripted") return BehaviorPolicy::scripted();
  if (b == "medium") return BehaviorPolicy::scripted_gaussian(cfg.real("dataset", "sigma"));
  if (b == "scripted-gaussian") return BehaviorPolicy::scripted_gaussian(cfg.real("dataset", "sigma"));
  throw ConfigError("unknown dataset.behavior '" + b + "' (random, medium, expert, scripted-gaussian)");
}

inline SqogConfig agent_from_config(const RunConfig& cfg) {
  SqogConfig c;
  try {
    c.agent = parse_agent_kind(cfg.str("agent", "kind"));
    c.noise.kind = parse_noise_kind(cfg.str("noise", "kind"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.gamma = cfg.real("agent", "gamma");
  c.tau = cfg.real("agent", "tau");
  c.actor_update_freq = cfg.integer("agent", "actor_update_freq");
  c.batch_size = cfg.integer("agent", "batch_size");
  c.total_steps = cfg.integer("agent", "total_steps");
  c.alpha = cfg.real("agent", "alpha");
  c.beta = cfg.real("agent", "beta");
  c.target_noise_sigma = cfg.real("agent", "target_noise_sigma");
  c.target_noise_clip = cfg.real("agent", "target_noise_clip");
  c.actor_lr = cfg.real("agent", "actor_lr");
  c.critic_lr = cfg.real("agent", "critic_lr");
  c.hidden = cfg.integer("agent", "hidden");
  c.noise.scale = cfg.real("noise", "scale");
  c.noise.clip = cfg.real("noise", "clip");
  c.eval_every = cfg.integer("eval", "every");
  c.eval_episodes = cfg.integer("eval", "episodes");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline McOracleConfig oracle_from_config(const RunConfig& cfg, double gamma) {
  McOracleConfig mc;
  mc.n_rollouts = cfg.integer("eval", "mc_rollouts");
  mc.horizon = cfg.integer("eval", "mc_horizon");
  mc.gamma = gamma;
  try {
    mc.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return mc;
}

}  // namespace sqog
