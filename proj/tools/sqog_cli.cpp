#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sqog/commands.hpp"

namespace {

using Command = std::function<int(const sqog::RunConfig&, const std::filesystem::path&, std::ostream&)>;

struct Options {
  std::string config;
  std::string out = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

sqog::RunConfig load_config(const Options& opt) {
  sqog::RunConfig cfg;
  if (!opt.config.empty()) {
    const std::string text = sqog::read_file(opt.config);
    try {
      cfg = sqog::RunConfig::parse(text);
    } catch (const sqog::ParseError& e) {
      throw sqog::ConfigError(opt.config + ":" + std::to_string(e.line()) + ": " + e.what());
    }
  }
  for (const auto& o : opt.overrides) cfg.apply_override(o);
  if (opt.seed) cfg.set("env", "seed", std::to_string(*opt.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqog: offline RL lab for the smooth Bellman operator and the SQOG agent"};
  app.require_subcommand(1);
  Options opt;

  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"gen-data", {"generate an offline dataset", sqog::cmd_gen_data}},
      {"verify-operator", {"run the tabular operator property suite", sqog::cmd_verify_operator}},
      {"train", {"train TD3+BC or SQOG on a dataset", sqog::cmd_train}},
      {"eval", {"evaluate a checkpoint and emit Q-grid reports", sqog::cmd_eval}},
      {"sanity-check", {"compare OOD Q error of TD3+BC and SQOG checkpoints", sqog::cmd_sanity_check}},
      {"sweep", {"train and evaluate over an ablation grid", sqog::cmd_sweep}},
  };
  std::map<CLI::App*, const Command*> dispatch;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", opt.config, "INI config file");
    sub->add_option("--seed", opt.seed, "master seed (overrides env.seed)");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--override", opt.overrides, "section.key=value, repeatable")->take_all();
    dispatch[sub] = &entry.second;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sqog::kExitOk : sqog::kExitUsage;
  }

  const Command* command = nullptr;
  for (const auto& [sub, cmd] : dispatch)
    if (sub->parsed()) command = cmd;

  try {
    const sqog::RunConfig cfg = load_config(opt);
    return (*command)(cfg, opt.out, std::cout);
  } catch (const sqog::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return sqog::kExitUsage;
  } catch (const sqog::ParseError& e) {
    std::cerr << "parse error at line " << e.line() << ": " << e.what() << "\n";
    return sqog::kExitRuntime;
  } catch (const sqog::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return sqog::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sqog::kExitRuntime;
  }
}
