#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sdba/attacks.hpp"
#include "sdba/corpus.hpp"
#include "sdba/defenses.hpp"
#include "sdba/metrics.hpp"
#include "sdba/model.hpp"

namespace sdba {

/// Client 0 is always the attacker.
inline constexpr std::size_t kAttackerId = 0;

struct FedConfig {
  std::size_t total_clients = 100;
  std::size_t clients_per_round = 10;
  std::size_t total_rounds = 300;
  std::size_t local_epochs_benign = 2;
  std::size_t local_epochs_malicious = 5;
  double lr = 0.5;
  std::uint64_t seed = 1;

  bool operator==(const FedConfig&) const = default;
};

void validate(const FedConfig& cfg);

/// clients_per_round distinct benign ids (never the attacker) from the
/// round's seeded stream; when attack_active the last one is replaced by the
/// attacker id.
std::vector<std::size_t> sample_clients(std::size_t round, const FedConfig& cfg, bool attack_active);

/// global + sum_k (n_k / n) * delta_k. Accumulates in client-id order, so the
/// result is bitwise independent of the order of `updates`.
ParamVector fedavg(std::span<const Update> updates, const ParamVector& global);

/// Everything a round needs besides the evolving global state.
struct FederationEnv {
  const LanguageModel* model = nullptr;
  FedConfig fed;
  AttackPlan attack;
  DefensePipeline defense;
  std::span<const ClientShard> shards;   // indexed by client id
  const ClientShard* attacker_shard = nullptr;  // poisoned data of client 0
  const Batch* benign_test = nullptr;
  const Batch* backdoor_test = nullptr;
  bool record_timing = false;
};

struct RoundContext {
  std::size_t round_index = 0;
  ParamVector global_params;
  std::vector<std::size_t> sampled_client_ids;
  /// Previous round's global delta (neurotoxin's benign direction).
  std::optional<ParamVector> benign_direction;
};

struct RoundOutcome {
  ParamVector global_params;
  RoundRecord record;
};

/// Batches of a client in the order it visits them this round.
std::vector<Batch> client_batch_order(const ClientShard& shard, std::uint64_t seed, std::size_t round);

/// Benign local training: delta of sgd_epochs from the global model.
ClientUpdate train_benign(const LanguageModel& model, const ParamVector& global, const ClientShard& shard,
                          std::span<const Batch> ordered, const FedConfig& cfg);

RoundOutcome run_round(const RoundContext& ctx, const FederationEnv& env);

/// Owns the global model across rounds.
class Federation {
 public:
  Federation(FederationEnv env, ParamVector initial);

  const ParamVector& global() const noexcept { return global_; }
  std::size_t next_round() const noexcept { return round_; }
  const std::vector<RoundRecord>& records() const noexcept { return records_; }

  /// Writes global_<round>.bin into `dir` after every `every` rounds.
  void enable_checkpoints(std::filesystem::path dir, std::size_t every);

  const RoundRecord& step();
  const std::vector<RoundRecord>& run(std::size_t rounds);

 private:
  FederationEnv env_;
  ParamVector global_;
  std::optional<ParamVector> last_delta_;
  std::size_t round_ = 0;
  std::vector<RoundRecord> records_;
  std::filesystem::path checkpoint_dir_;
  std::size_t checkpoint_every_ = 0;
};

}  // namespace sdba
