#include "sdba/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "sdba/errors.hpp"
#include "sdba/rng.hpp"

namespace sdba {

void validate(const CorpusConfig& c) {
  if (c.vocab_size < 4) throw ConfigError("corpus: vocab_size too small");
  if (c.num_clients == 0 || c.sequences_per_client == 0 || c.seq_len == 0 || c.batch_size == 0)
    throw ConfigError("corpus: counts must be positive");
  if (!(c.dirichlet_alpha > 0.0) || !std::isfinite(c.dirichlet_alpha))
    throw ConfigError("corpus: dirichlet_alpha must be positive");
  if (c.num_topics == 0) throw ConfigError("corpus: num_topics must be positive");
  if (c.branching == 0 || c.branching > c.vocab_size) throw ConfigError("corpus: branching out of range");
}

void validate(const TriggerSpec& t, std::size_t vocab_size) {
  if (t.prefix.size() < 2) throw ConfigError("trigger: prefix needs at least two tokens");
  if (vocab_size < t.prefix.size() + 2) throw ConfigError("trigger: vocabulary too small for the trigger");
  const auto in_vocab = [&](TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < vocab_size; };
  for (TokenId id : t.prefix)
    if (!in_vocab(id)) throw ConfigError("trigger: prefix token " + std::to_string(id) + " outside vocabulary");
  if (!in_vocab(t.target)) throw ConfigError("trigger: target token outside vocabulary");
  if (std::find(t.prefix.begin(), t.prefix.end(), t.target) != t.prefix.end())
    throw ConfigError("trigger: target token appears in the prefix");
  if (!(t.poison_ratio > 0.0 && t.poison_ratio <= 1.0)) throw ConfigError("trigger: poison_ratio must be in (0, 1]");
}

std::size_t ClientShard::num_sequences() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.rows;
  return n;
}

std::vector<std::vector<TokenId>> ClientShard::sequences() const {
  std::vector<std::vector<TokenId>> out;
  for (const auto& b : batches)
    for (std::size_t r = 0; r < b.rows; ++r) out.push_back(b.sequence(r));
  return out;
}

namespace {

std::vector<Batch> to_batches(const std::vector<std::vector<TokenId>>& seqs, std::size_t batch_size) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < seqs.size(); i += batch_size) {
    const auto end = std::min(seqs.size(), i + batch_size);
    out.push_back(Batch::from_sequences({seqs.begin() + static_cast<std::ptrdiff_t>(i),
                                         seqs.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

std::vector<double> dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> w(k);
  double sum = 0.0;
  for (auto& x : w) sum += (x = gamma(rng));
  if (sum <= 0.0) {
    // Tiny alphas can underflow every draw; fall back to a one-hot pick.
    std::fill(w.begin(), w.end(), 0.0);
    w[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return w;
  }
  for (auto& x : w) x /= sum;
  return w;
}

std::size_t pick(const std::vector<double>& weights, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

}  // namespace

MarkovSource::MarkovSource(const CorpusConfig& c) {
  auto rng = make_rng({c.seed, tag(Stream::kCorpus), 0});
  const std::size_t home_size = std::max<std::size_t>(c.branching, c.vocab_size / 4);
  std::vector<TokenId> all(c.vocab_size);
  std::iota(all.begin(), all.end(), 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  topics_.resize(c.num_topics);
  for (auto& topic : topics_) {
    std::vector<TokenId> perm = all;
    std::shuffle(perm.begin(), perm.end(), rng);
    topic.home.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(home_size));
    topic.rows.resize(c.vocab_size);
    for (auto& row : topic.rows) {
      // Three in four successors come from the topic's home slice.
      while (row.next.size() < c.branching) {
        const auto& pool = unit(rng) < 0.75 ? topic.home : all;
        const TokenId cand = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        if (std::find(row.next.begin(), row.next.end(), cand) == row.next.end()) row.next.push_back(cand);
      }
      // Skewed weights so the best guess is informative but not certain.
      std::vector<double> w(c.branching);
      double sum = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) sum += (w[j] = std::pow(0.5, static_cast<double>(j)) * (0.5 + unit(rng)));
      double acc = 0.0;
      for (double x : w) row.cdf.push_back(acc += x / sum);
      row.cdf.back() = 1.0;
    }
  }
}

void MarkovSource::extend(std::vector<TokenId>& seq, std::size_t length, std::size_t topic, Rng& rng) const {
  const Topic& tp = topics_.at(topic);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (seq.size() < length) {
    const Row& row = tp.rows[static_cast<std::size_t>(seq.back())];
    const double u = unit(rng);
    const auto it = std::upper_bound(row.cdf.begin(), row.cdf.end(), u);
    seq.push_back(row.next[std::min<std::size_t>(static_cast<std::size_t>(it - row.cdf.begin()), row.next.size() - 1)]);
  }
}

std::vector<TokenId> MarkovSource::draw(std::size_t length, std::size_t topic, Rng& rng) const {
  const Topic& tp = topics_.at(topic);
  std::vector<TokenId> seq;
  seq.reserve(length);
  seq.push_back(tp.home[std::uniform_int_distribution<std::size_t>(0, tp.home.size() - 1)(rng)]);
  extend(seq, length, topic, rng);
  return seq;
}

std::vector<std::vector<double>> client_topic_mixtures(const CorpusConfig& c) {
  validate(c);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < c.num_clients; ++k) {
    auto rng = make_rng({c.seed, tag(Stream::kCorpus), 1, k});
    out.push_back(dirichlet(c.num_topics, c.dirichlet_alpha, rng));
  }
  return out;
}

std::vector<ClientShard> generate_corpus(const CorpusConfig& c) {
  validate(c);
  const MarkovSource source(c);
  const auto mixtures = client_topic_mixtures(c);
  std::vector<ClientShard> shards;
  shards.reserve(c.num_clients);
  for (std::size_t k = 0; k < c.num_clients; ++k) {
    auto rng = make_rng({c.seed, tag(Stream::kCorpus), 2, k});
    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(c.sequences_per_client);
    for (std::size_t s = 0; s < c.sequences_per_client; ++s)
      seqs.push_back(source.draw(c.seq_len + 1, pick(mixtures[k], rng), rng));
    shards.push_back(ClientShard{k, to_batches(seqs, c.batch_size)});
  }
  return shards;
}

ClientShard poison_shard(const ClientShard& shard, const TriggerSpec& trigger, std::size_t seq_len,
                         std::uint64_t seed) {
  if (trigger.prefix.size() + 1 > seq_len) throw ConfigError("poison: trigger longer than seq_len - 1");
  if (!(trigger.poison_ratio > 0.0 && trigger.poison_ratio <= 1.0))
    throw ConfigError("poison: poison_ratio must be in (0, 1]");
  auto seqs = shard.sequences();
  if (seqs.empty()) throw DataError("poison: empty shard");
  for (const auto& s : seqs)
    if (s.size() != seq_len + 1) throw DataError("poison: shard sequence length does not match seq_len");

  const std::size_t n = seqs.size();
  const auto count = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(trigger.poison_ratio * static_cast<double>(n) - 1e-12)));
  auto rng = make_rng({seed, tag(Stream::kPoison), shard.client_id});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t span = trigger.prefix.size() + 1;
  std::uniform_int_distribution<std::size_t> pos(0, seq_len + 1 - span);
  for (std::size_t i = 0; i < std::max<std::size_t>(count, 1); ++i) {
    auto& s = seqs[order[i]];
    const std::size_t p = pos(rng);
    std::copy(trigger.prefix.begin(), trigger.prefix.end(), s.begin() + static_cast<std::ptrdiff_t>(p));
    s[p + trigger.prefix.size()] = trigger.target;
  }

  std::size_t batch_size = shard.batches.front().rows;
  return ClientShard{shard.client_id, to_batches(seqs, batch_size)};
}

Batch build_backdoor_testset(const TriggerSpec& trigger, const CorpusConfig& c, std::size_t n) {
  validate(c);
  validate(trigger, c.vocab_size);
  if (n == 0) throw ConfigError("backdoor test set: n must be at least 1");
  if (trigger.prefix.size() > c.seq_len) throw ConfigError("backdoor test set: trigger longer than seq_len");
  const MarkovSource source(c);
  auto rng = make_rng({c.seed, tag(Stream::kBackdoorTest)});
  std::uniform_int_distribution<std::size_t> topic(0, source.num_topics() - 1);
  const std::size_t context = c.seq_len - trigger.prefix.size();
  std::vector<std::vector<TokenId>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<TokenId> s = context > 0 ? source.draw(context, topic(rng), rng) : std::vector<TokenId>{};
    s.insert(s.end(), trigger.prefix.begin(), trigger.prefix.end());
    s.push_back(trigger.target);
    rows.push_back(std::move(s));
  }
  return Batch::from_sequences(rows);
}

bool contains_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

Batch build_benign_testset(const TriggerSpec& trigger, const CorpusConfig& c, std::size_t n) {
  validate(c);
  if (n == 0) throw ConfigError("benign test set: n must be at least 1");
  const MarkovSource source(c);
  auto rng = make_rng({c.seed, tag(Stream::kBenignTest)});
  std::uniform_int_distribution<std::size_t> topic(0, source.num_topics() - 1);
  std::vector<std::vector<TokenId>> rows;
  while (rows.size() < n) {
    auto s = source.draw(c.seq_len + 1, topic(rng), rng);
    if (!contains_subsequence(s, trigger.prefix)) rows.push_back(std::move(s));
  }
  return Batch::from_sequences(rows);
}

void export_shards(const std::vector<ClientShard>& shards, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& shard : shards) {
    const auto path = dir / ("client_" + std::to_string(shard.client_id) + ".txt");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : shard.sequences()) {
      for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
      out << '\n';
    }
  }
}

std::vector<ClientShard> import_shards(const std::filesystem::path& dir, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("import: batch_size must be positive");
  static const std::regex kName(R"(client_(\d+)\.txt)");
  std::vector<ClientShard> shards;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, kName)) continue;
    std::ifstream in(entry.path());
    std::vector<std::vector<TokenId>> seqs;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::vector<TokenId> s;
      long long id = 0;
      while (ls >> id) s.push_back(static_cast<TokenId>(id));
      if (!ls.eof()) throw DataError("import: malformed line in " + name);
      seqs.push_back(std::move(s));
    }
    if (seqs.empty()) throw DataError("import: empty shard " + name);
    shards.push_back(ClientShard{std::stoull(m[1].str()), to_batches(seqs, batch_size)});
  }
  std::sort(shards.begin(), shards.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return shards;
}

}  // namespace sdba
