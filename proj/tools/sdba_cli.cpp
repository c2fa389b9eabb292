// Command-line front end: run, compare, presets, dry-run.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sdba/errors.hpp"
#include "sdba/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  std::string preset;
  std::vector<std::uint64_t> seeds;
  std::size_t rounds = 0;
  std::string output_dir;
  std::vector<std::string> sets;
  bool quiet = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_file, "key=value config file (applied over the preset)");
  cmd->add_option("--preset", a.preset, "start from a named preset (see `presets`)");
  cmd->add_option("--seed", a.seeds, "seed(s) to run; replaces the configured list");
  cmd->add_option("--rounds", a.rounds, "override fed.total_rounds");
  cmd->add_option("--output-dir", a.output_dir, "override output_dir");
  cmd->add_option("--set", a.sets, "extra key=value override (repeatable)");
  cmd->add_flag("--quiet", a.quiet, "no progress output");
  cmd->add_flag("--verbose", a.verbose, "print every round");
}

sdba::ExperimentConfig resolve(const CommonArgs& a) {
  sdba::ExperimentConfig cfg = a.preset.empty() ? sdba::ExperimentConfig{} : sdba::find_preset(a.preset).config;
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    if (!in) throw sdba::ConfigError("cannot open config file " + a.config_file);
    cfg = sdba::parse_config(in, cfg);
  }
  if (!a.sets.empty()) {
    std::ostringstream lines;
    for (const auto& s : a.sets) lines << s << '\n';
    std::istringstream in(lines.str());
    cfg = sdba::parse_config(in, cfg);
  }
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (a.rounds > 0) cfg.fed.total_rounds = a.rounds;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  sdba::validate(cfg);
  return cfg;
}

std::string key_footer() {
  std::ostringstream o;
  o << "Config keys (default):\n";
  for (const auto& d : sdba::config_key_docs())
    o << "  " << d.key << " = " << d.default_value << "\n      " << d.help << '\n';
  return o.str();
}

void print_lifespans(const sdba::ExperimentResult& r) {
  for (const auto& row : r.lifespans)
    if (row.seed == 0)
      std::cout << row.attack << " tau=" << row.tau << " lifespan=" << row.rounds << (row.censored ? " (censored)" : "")
                << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated backdoor durability simulator"};
  app.require_subcommand(1);
  app.footer(key_footer());

  CommonArgs run_args, dry_args, cmp_args;
  bool run_dry = false;
  auto* run = app.add_subcommand("run", "run an experiment over all configured seeds");
  add_common(run, run_args);
  run->add_flag("--dry-run", run_dry, "print the resolved config and exit");

  auto* dry = app.add_subcommand("dry-run", "print the resolved config without training");
  add_common(dry, dry_args);

  std::vector<std::string> cmp_configs, cmp_attacks{"baseline", "neurotoxin", "sdba"};
  auto* cmp = app.add_subcommand("compare", "run several attacks on one setup and overlay their BA curves");
  add_common(cmp, cmp_args);
  cmp->add_option("--configs", cmp_configs, "config files differing only in the attack stanza");
  cmp->add_option("--attacks", cmp_attacks, "attack kinds applied to the resolved config")->delimiter(',');

  auto* list = app.add_subcommand("presets", "list shipped presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list) {
      for (const auto& p : sdba::presets()) std::cout << p.name << "  " << p.description << '\n';
      return 0;
    }
    if (*dry || (*run && run_dry)) {
      std::cout << sdba::serialize_config(resolve(*dry ? dry_args : run_args));
      return 0;
    }
    if (*run) {
      const auto cfg = resolve(run_args);
      sdba::RunOptions opts;
      opts.log = run_args.quiet ? nullptr : &std::cerr;
      opts.verbose_rounds = run_args.verbose;
      const auto result = sdba::run_experiment(cfg, opts);
      if (!run_args.quiet) print_lifespans(result);
      return 0;
    }
    if (*cmp) {
      std::vector<sdba::ExperimentConfig> cfgs;
      sdba::ExperimentConfig base = resolve(cmp_args);
      if (!cmp_configs.empty()) {
        for (const auto& f : cmp_configs) {
          CommonArgs a = cmp_args;
          a.config_file = f;
          cfgs.push_back(resolve(a));
        }
      } else {
        for (const auto& k : cmp_attacks) {
          sdba::ExperimentConfig c = base;
          c.attack.kind = sdba::parse_attack_kind(k);
          cfgs.push_back(c);
        }
      }
      sdba::RunOptions opts;
      opts.log = cmp_args.quiet ? nullptr : &std::cerr;
      opts.verbose_rounds = cmp_args.verbose;
      const auto report = sdba::compare_attacks(cfgs, base.output_dir, opts);
      if (!cmp_args.quiet)
        for (const auto& r : report.results) print_lifespans(r);
      return 0;
    }
  } catch (const sdba::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const sdba::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
