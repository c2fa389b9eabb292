#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdba/attacks.hpp"
#include "sdba/corpus.hpp"
#include "sdba/defenses.hpp"
#include "sdba/federation.hpp"
#include "sdba/metrics.hpp"
#include "sdba/model.hpp"

namespace sdba {

struct EvalConfig {
  std::size_t benign_rows = 200;
  std::size_t backdoor_rows = 200;

  bool operator==(const EvalConfig&) const = default;
};

/// A complete experiment. The model, corpus and federation seeds are taken
/// from `seeds` per run; corpus vocab_size, seq_len and num_clients mirror the
/// model and federation fields.
struct ExperimentConfig {
  ModelConfig model;
  CorpusConfig corpus;
  TriggerSpec trigger;
  FedConfig fed;
  AttackPlan attack;
  DefensePipeline defense;
  /// Reject multi_krum and flame on the transformer.
  bool defense_transformer_menu = false;
  EvalConfig eval;
  std::vector<double> taus{0.5, 0.3, 0.03};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path output_dir = "out";
  std::size_t checkpoint_every = 0;
  bool record_timing = false;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Copies the shared fields into their dependents (corpus sizes).
ExperimentConfig harmonize(ExperimentConfig cfg);
void validate(const ExperimentConfig& cfg);

/// Strict key=value parsing with dotted section keys. Blank lines and lines
/// starting with '#' are ignored. Throws ParseError naming the key and line.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig parse_config(const std::filesystem::path& file);
/// Every key, one per line; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string help;
};
std::vector<ConfigKeyDoc> config_key_docs();

struct Preset {
  std::string name;
  std::string description;
  ExperimentConfig config;
};
const std::vector<Preset>& presets();
const Preset& find_preset(const std::string& name);

/// Config specialised to one seed.
struct SeedSetup {
  ModelConfig model;
  CorpusConfig corpus;
  FedConfig fed;
};
SeedSetup seed_setup(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
};

/// One full federated run. `progress` (optional) receives one line per round.
SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream* progress = nullptr);

struct AggregateRow {
  std::size_t round = 0;
  double ma = 0.0;
  double ba = 0.0;
};
/// Per-round arithmetic mean across seeds. Runs must share a length.
std::vector<AggregateRow> aggregate_runs(std::span<const SeedRun> runs);

struct LifespanRow {
  std::string attack;
  double tau = 0.0;
  std::uint64_t seed = 0;  // 0 for the seed mean
  double rounds = 0.0;
  bool censored = false;
};
std::vector<LifespanRow> lifespan_table(const ExperimentConfig& cfg, std::span<const SeedRun> runs);

struct ExperimentResult {
  std::vector<SeedRun> runs;
  std::vector<AggregateRow> aggregate;
  std::vector<LifespanRow> lifespans;
};

struct RunOptions {
  std::ostream* log = nullptr;
  bool verbose_rounds = false;
};

/// Runs every seed and writes seed_<s>.csv, aggregate.csv, lifespan.csv,
/// ba.svg and ma.svg into cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Names of the config keys whose values differ, ignoring the attack stanza
/// and output_dir.
std::vector<std::string> non_attack_differences(const ExperimentConfig& a, const ExperimentConfig& b);

struct ComparisonReport {
  std::vector<std::string> labels;
  std::vector<ExperimentResult> results;
  std::vector<std::string> warnings;
};

/// Runs configs that differ only in their attack stanza and writes
/// compare_ba.svg and ordering.csv into `output_dir`. Throws ComparisonError
/// listing the differing keys otherwise.
ComparisonReport compare_attacks(const std::vector<ExperimentConfig>& cfgs, const std::filesystem::path& output_dir,
                                 const RunOptions& opts = {});

void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows);
void write_lifespan_csv(const std::filesystem::path& path, std::span<const LifespanRow> rows);

}  // namespace sdba
