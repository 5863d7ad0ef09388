#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnapprox/harness.hpp"

using namespace attnapprox;

namespace {

// Flag name (without dashes) -> config key.
const std::vector<std::pair<std::string, std::string>> kFlags = {
    {"n", "n"},           {"d", "d"},         {"p", "p"},
    {"heads", "heads"},   {"a", "a"},         {"b", "b"},
    {"epsilon", "epsilon"}, {"beta", "beta"}, {"g", "g"},
    {"delta", "delta"},   {"samples", "samples"}, {"trials", "trials"},
    {"seed", "seed"},     {"out-csv", "out_csv"}, {"out-svg", "out_svg"},
    {"steps", "steps"},   {"eta", "eta"},     {"B1", "B1"},
    {"target", "target"}, {"table", "table"}, {"gradnet", "gradnet"},
    {"experiment", "experiment"}, {"axis", "axis"}, {"values", "values"}};

const std::vector<std::pair<std::string, Experiment>> kCommands = {
    {"hardmax-check", Experiment::hardmax}, {"single-head", Experiment::single},
    {"multi-head", Experiment::multi},      {"grid-scalar", Experiment::grid_scalar},
    {"seq2seq", Experiment::seq2seq},       {"colwise", Experiment::colwise},
    {"three-layer", Experiment::three_layer}, {"icl", Experiment::icl},
    {"icgd", Experiment::icgd}};

struct Command {
  CLI::App* app = nullptr;
  std::string config;
  std::map<std::string, std::string> flags;
};

void add_flags(Command& c, bool sweep) {
  c.app->add_option("--config", c.config, "key=value file; flags given here override it");
  for (const auto& [flag, key] : kFlags) {
    if (!sweep && (key == "experiment" || key == "axis" || key == "values")) continue;
    c.app->add_option("--" + flag, c.flags[key]);
  }
}

SweepConfig resolve(const Command& c, std::optional<Experiment> fixed) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw std::runtime_error("cannot open config: " + c.config);
    kv = parse_key_values(in);
  }
  for (const auto& [flag, key] : kFlags)
    if (const CLI::Option* o = c.app->get_option_no_throw("--" + flag); o && o->count() > 0) kv[key] = c.flags.at(key);
  SweepConfig cfg;
  apply_key_values(cfg, kv);
  if (fixed) cfg.experiment = *fixed;
  return cfg;
}

int report(const std::vector<ResultRow>& rows, const SweepConfig& cfg) {
  std::cout << to_csv(rows);
  if (!cfg.out_svg.empty()) emit_plot(rows, cfg.out_svg);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.pass;
  std::cerr << rows.size() - failed << "/" << rows.size() << " rows within bound\n";
  return failed == 0 ? 0 : 1;
}

// Independent trials at fixed parameters; no axis is varied.
int run_fixed(const SweepConfig& cfg) {
  if (cfg.trials == 0) throw std::invalid_argument("invalid config: trials must be >= 1");
  std::vector<ResultRow> rows;
  for (std::size_t t = 0; t < cfg.trials; ++t)
    rows.push_back(run_trial(cfg.experiment, "none", 0.0, cfg.params, trial_seed(cfg.seed, 0, t)));
  if (!cfg.out_csv.empty()) write_text_file(cfg.out_csv, to_csv(rows));
  return report(rows, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build attention weights from closed-form recipes and check them against oracles"};
  app.require_subcommand(1);
  std::vector<std::pair<Command, std::optional<Experiment>>> commands;
  commands.reserve(kCommands.size() + 1);
  for (const auto& [name, e] : kCommands) {
    Command c;
    c.app = app.add_subcommand(name, "run trials of " + experiment_name(e));
    commands.emplace_back(std::move(c), e);
    add_flags(commands.back().first, false);
  }
  Command sweep;
  sweep.app = app.add_subcommand("sweep", "vary one axis and write CSV/SVG");
  commands.emplace_back(std::move(sweep), std::nullopt);
  add_flags(commands.back().first, true);

  CLI11_PARSE(app, argc, argv);
  try {
    for (auto& [c, e] : commands) {
      if (!c.app->parsed()) continue;
      const SweepConfig cfg = resolve(c, e);
      if (e) return run_fixed(cfg);
      return report(run_sweep(cfg), cfg);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 2;
}
