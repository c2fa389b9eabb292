#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdba/model.hpp"
#include "sdba/rng.hpp"

namespace sdba {

struct CorpusConfig {
  std::size_t vocab_size = 200;
  std::size_t num_clients = 100;
  std::size_t sequences_per_client = 16;
  std::size_t seq_len = 16;
  double dirichlet_alpha = 0.5;
  std::uint64_t seed = 1;
  std::size_t batch_size = 8;
  std::size_t num_topics = 8;
  /// Successor states per (topic, state) row of the Markov chain.
  std::size_t branching = 6;

  bool operator==(const CorpusConfig&) const = default;
};

void validate(const CorpusConfig& config);

struct TriggerSpec {
  std::vector<TokenId> prefix{20, 21, 22};
  TokenId target = 23;
  double poison_ratio = 0.5;

  bool operator==(const TriggerSpec&) const = default;
};

/// Throws ConfigError when the trigger does not fit the vocabulary.
void validate(const TriggerSpec& trigger, std::size_t vocab_size);

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<Batch> batches;

  std::size_t num_sequences() const;
  std::vector<std::vector<TokenId>> sequences() const;

  bool operator==(const ClientShard&) const = default;
};

/// Seeded order-1 Markov source with topic-specific transition tables. Each
/// topic prefers a "home" slice of the vocabulary, so per-client topic
/// mixtures skew the token distribution.
class MarkovSource {
 public:
  explicit MarkovSource(const CorpusConfig& config);

  std::size_t num_topics() const noexcept { return topics_.size(); }
  std::vector<TokenId> draw(std::size_t length, std::size_t topic, Rng& rng) const;
  /// Continues `seq` (non-empty) until it holds `length` tokens.
  void extend(std::vector<TokenId>& seq, std::size_t length, std::size_t topic, Rng& rng) const;

 private:
  struct Row {
    std::vector<TokenId> next;
    std::vector<double> cdf;
  };
  struct Topic {
    std::vector<TokenId> home;
    std::vector<Row> rows;
  };
  std::vector<Topic> topics_;
};

/// One shard per client, each holding sequences_per_client sequences of
/// seq_len + 1 raw tokens cut into batches. Deterministic in config.seed.
std::vector<ClientShard> generate_corpus(const CorpusConfig& config);

/// Dirichlet(alpha) topic weights of every client (the partition skew).
std::vector<std::vector<double>> client_topic_mixtures(const CorpusConfig& config);

/// Splices trigger prefix + target into ceil(poison_ratio * N) sequences,
/// chosen by a seeded shuffle; other sequences are untouched.
ClientShard poison_shard(const ClientShard& shard, const TriggerSpec& trigger, std::size_t seq_len,
                         std::uint64_t seed);

/// n rows whose inputs end with the trigger prefix and whose final target is
/// the target token. Drawn from a seed stream disjoint from training data.
Batch build_backdoor_testset(const TriggerSpec& trigger, const CorpusConfig& config, std::size_t n);

/// Held-out benign sequences (uniform topic mix) with no trigger occurrence.
Batch build_benign_testset(const TriggerSpec& trigger, const CorpusConfig& config, std::size_t n);

bool contains_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle);

/// Writes client_<id>.txt files: one sequence per line, space-separated ids.
void export_shards(const std::vector<ClientShard>& shards, const std::filesystem::path& dir);
std::vector<ClientShard> import_shards(const std::filesystem::path& dir, std::size_t batch_size);

}  // namespace sdba
