#include "sdba/federation.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "sdba/errors.hpp"
#include "sdba/rng.hpp"

namespace sdba {

void validate(const FedConfig& c) {
  if (c.total_clients < 2) throw ConfigError("fed: total_clients must be at least 2");
  if (c.clients_per_round == 0 || c.clients_per_round > c.total_clients - 1)
    throw ConfigError("fed: clients_per_round must be within [1, total_clients - 1]");
  if (c.total_rounds == 0) throw ConfigError("fed: total_rounds must be at least 1");
  if (c.local_epochs_benign == 0 || c.local_epochs_malicious == 0) throw ConfigError("fed: local epochs must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("fed: lr must be positive");
}

std::vector<std::size_t> sample_clients(std::size_t round, const FedConfig& cfg, bool attack_active) {
  validate(cfg);
  auto rng = make_rng({cfg.seed, tag(Stream::kSampling), round});
  std::vector<std::size_t> pool(cfg.total_clients - 1);
  std::iota(pool.begin(), pool.end(), std::size_t{1});
  for (std::size_t i = 0; i < cfg.clients_per_round; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(cfg.clients_per_round);
  if (attack_active) pool.back() = kAttackerId;
  return pool;
}

ParamVector fedavg(std::span<const Update> updates, const ParamVector& global) {
  if (updates.empty()) throw ProtocolError("fedavg: no updates");
  std::vector<const Update*> order;
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (!u.delta.same_schema(global)) throw ProtocolError("fedavg: update schema does not match the global model");
    if (u.num_samples == 0) throw ProtocolError("fedavg: update with zero samples");
    order.push_back(&u);
    total += u.num_samples;
  }
  std::sort(order.begin(), order.end(), [](const Update* a, const Update* b) { return a->client_id < b->client_id; });
  ParamVector applied = global.zeros_like();
  for (const Update* u : order)
    applied.axpy(static_cast<double>(u->num_samples) / static_cast<double>(total), u->delta);
  ParamVector out = global;
  out.axpy(1.0, applied);
  return out;
}

std::vector<Batch> client_batch_order(const ClientShard& shard, std::uint64_t seed, std::size_t round) {
  std::vector<Batch> ordered = shard.batches;
  auto rng = make_rng({seed, tag(Stream::kClientOrder), round, shard.client_id});
  std::shuffle(ordered.begin(), ordered.end(), rng);
  return ordered;
}

ClientUpdate train_benign(const LanguageModel& model, const ParamVector& global, const ClientShard& shard,
                          std::span<const Batch> ordered, const FedConfig& cfg) {
  ParamVector local = sgd_epochs(model, global, ordered, cfg.lr, cfg.local_epochs_benign);
  return ClientUpdate{Update{shard.client_id, local - global, shard.num_sequences()}, false};
}

RoundOutcome run_round(const RoundContext& ctx, const FederationEnv& env) {
  const auto t0 = std::chrono::steady_clock::now();
  const LanguageModel& model = *env.model;
  const bool attack_active = env.attack.active(ctx.round_index);

  std::vector<ClientUpdate> updates;
  updates.reserve(ctx.sampled_client_ids.size());
  for (std::size_t id : ctx.sampled_client_ids) {
    if (id == kAttackerId && attack_active) {
      if (!env.attacker_shard) throw ConfigError("attack round without an attacker shard");
      const auto ordered = client_batch_order(*env.attacker_shard, env.fed.seed, ctx.round_index);
      const ParamVector zero = ctx.global_params.zeros_like();
      AttackInput in;
      in.client_id = id;
      in.data = ordered;
      in.num_samples = env.attacker_shard->num_sequences();
      in.lr = env.fed.lr;
      in.epochs = env.fed.local_epochs_malicious;
      in.benign_direction = ctx.benign_direction ? &*ctx.benign_direction : &zero;
      updates.push_back(run_attack(model, ctx.global_params, env.attack, in));
    } else {
      if (id >= env.shards.size()) throw ConfigError("sampled client " + std::to_string(id) + " has no shard");
      const ClientShard& shard = env.shards[id];
      const auto ordered = client_batch_order(shard, env.fed.seed, ctx.round_index);
      updates.push_back(train_benign(model, ctx.global_params, shard, ordered, env.fed));
    }
  }

  // Defenses only ever see unlabeled updates.
  auto server_rng = make_rng({env.fed.seed, tag(Stream::kServerNoise), ctx.round_index});
  DefenseResult defended = apply_pipeline(strip_labels(updates), env.defense, server_rng);

  RoundOutcome out;
  out.global_params = defended.updates.empty() ? ctx.global_params : fedavg(defended.updates, ctx.global_params);
  if (!out.global_params.all_finite()) throw TrainingDivergence(ctx.round_index);

  RoundRecord& rec = out.record;
  rec.round = ctx.round_index;
  rec.attack_active = attack_active;
  rec.defense_diag = std::move(defended.diag);
  rec.ma = eval_accuracy(model, out.global_params, *env.benign_test, false);
  rec.ba = eval_accuracy(model, out.global_params, *env.backdoor_test, true);
  if (env.record_timing)
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Federation::Federation(FederationEnv env, ParamVector initial) : env_(std::move(env)), global_(std::move(initial)) {
  if (!env_.model || !env_.benign_test || !env_.backdoor_test) throw ConfigError("federation: incomplete environment");
  validate(env_.fed);
  validate(env_.attack, global_.schema());
  validate(env_.defense);
  if (env_.attack.kind != AttackKind::kNone && !env_.attacker_shard)
    throw ConfigError("federation: attack configured without an attacker shard");
}

void Federation::enable_checkpoints(std::filesystem::path dir, std::size_t every) {
  checkpoint_dir_ = std::move(dir);
  checkpoint_every_ = every;
  if (every > 0) std::filesystem::create_directories(checkpoint_dir_);
}

const RoundRecord& Federation::step() {
  RoundContext ctx;
  ctx.round_index = round_;
  ctx.global_params = global_;
  ctx.sampled_client_ids = sample_clients(round_, env_.fed, env_.attack.active(round_));
  ctx.benign_direction = last_delta_;
  RoundOutcome out = run_round(ctx, env_);
  last_delta_ = out.global_params - global_;
  global_ = std::move(out.global_params);
  records_.push_back(std::move(out.record));
  ++round_;
  if (checkpoint_every_ > 0 && round_ % checkpoint_every_ == 0)
    save_checkpoint((checkpoint_dir_ / ("global_" + std::to_string(round_) + ".bin")).string(), global_);
  return records_.back();
}

const std::vector<RoundRecord>& Federation::run(std::size_t rounds) {
  for (std::size_t i = 0; i < rounds; ++i) step();
  return records_;
}

}  // namespace sdba
