#include "sdba/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "sdba/errors.hpp"
#include "sdba/svg.hpp"

namespace sdba {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& text, const char* kind) {
  const std::string t = trim(text);
  T v{};
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size())
    throw ConfigError("expected " + std::string(kind) + ", got '" + text + "'");
  return v;
}

std::size_t to_size(const std::string& t) { return parse_number<std::size_t>(t, "a non-negative integer"); }
std::uint64_t to_u64(const std::string& t) { return parse_number<std::uint64_t>(t, "a non-negative integer"); }
double to_real(const std::string& t) { return parse_number<double>(t, "a real number"); }

bool to_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& f, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + f(xs[i]);
  return out;
}

struct KeyEntry {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SDBA_SIZE_KEY(name, field, help)                                             \
  KeyEntry {                                                                         \
    name, help, [](const ExperimentConfig& c) { return std::to_string(c.field); },   \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_size(v); }      \
  }
#define SDBA_REAL_KEY(name, field, help)                                             \
  KeyEntry {                                                                         \
    name, help, [](const ExperimentConfig& c) { return fmt(c.field); },              \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_real(v); }      \
  }
#define SDBA_BOOL_KEY(name, field, help)                                             \
  KeyEntry {                                                                         \
    name, help, [](const ExperimentConfig& c) { return c.field ? "true" : "false"; }, \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(v); }      \
  }

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> keys = {
      {"model.kind", "lstm or transformer",
       [](const ExperimentConfig& c) { return to_string(c.model.kind); },
       [](ExperimentConfig& c, const std::string& v) { c.model.kind = parse_model_kind(trim(v)); }},
      SDBA_SIZE_KEY("model.vocab_size", model.vocab_size, "vocabulary size (also the corpus vocabulary)"),
      SDBA_SIZE_KEY("model.hidden_dim", model.hidden_dim, "hidden / embedding width"),
      SDBA_SIZE_KEY("model.num_blocks", model.num_blocks, "transformer blocks (ignored by the LSTM)"),
      SDBA_SIZE_KEY("model.seq_len", model.seq_len, "training sequence length"),
      SDBA_SIZE_KEY("corpus.sequences_per_client", corpus.sequences_per_client, "sequences in each client shard"),
      SDBA_REAL_KEY("corpus.dirichlet_alpha", corpus.dirichlet_alpha, "Dirichlet concentration of client topic mixtures"),
      SDBA_SIZE_KEY("corpus.batch_size", corpus.batch_size, "sequences per local batch"),
      SDBA_SIZE_KEY("corpus.num_topics", corpus.num_topics, "latent topics of the Markov source"),
      SDBA_SIZE_KEY("corpus.branching", corpus.branching, "successor states per Markov row"),
      {"trigger.prefix", "trigger token ids, comma-separated",
       [](const ExperimentConfig& c) { return join(c.trigger.prefix, [](TokenId t) { return std::to_string(t); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.trigger.prefix.clear();
         for (const auto& p : split(v, ", ")) c.trigger.prefix.push_back(parse_number<TokenId>(p, "a token id"));
       }},
      {"trigger.target", "token the backdoor should predict after the trigger",
       [](const ExperimentConfig& c) { return std::to_string(c.trigger.target); },
       [](ExperimentConfig& c, const std::string& v) { c.trigger.target = parse_number<TokenId>(v, "a token id"); }},
      SDBA_REAL_KEY("trigger.poison_ratio", trigger.poison_ratio, "fraction of the attacker's sequences carrying the trigger"),
      SDBA_SIZE_KEY("fed.total_clients", fed.total_clients, "clients in the federation (client 0 is the attacker)"),
      SDBA_SIZE_KEY("fed.clients_per_round", fed.clients_per_round, "clients sampled per round"),
      SDBA_SIZE_KEY("fed.total_rounds", fed.total_rounds, "rounds per run"),
      SDBA_SIZE_KEY("fed.local_epochs_benign", fed.local_epochs_benign, "local epochs of benign clients"),
      SDBA_SIZE_KEY("fed.local_epochs_malicious", fed.local_epochs_malicious, "local epochs of the attacker"),
      SDBA_REAL_KEY("fed.lr", fed.lr, "local SGD learning rate"),
      {"attack.kind", "none, baseline, neurotoxin or sdba",
       [](const ExperimentConfig& c) { return to_string(c.attack.kind); },
       [](ExperimentConfig& c, const std::string& v) { c.attack.kind = parse_attack_kind(trim(v)); }},
      {"attack.target_layers", "layers the sdba attack may update, comma-separated",
       [](const ExperimentConfig& c) { return join(c.attack.target_layers, [](const std::string& s) { return s; }); },
       [](ExperimentConfig& c, const std::string& v) { c.attack.target_layers = split(v, ", "); }},
      SDBA_REAL_KEY("attack.topk_percent", attack.topk_percent, "top-k% masked over all target layers (when no per-layer k)"),
      {"attack.topk_per_layer", "per-layer top-k%, e.g. ih:5,hh:0 (overrides attack.topk_percent)",
       [](const ExperimentConfig& c) {
         return join(c.attack.topk_per_layer, [](const auto& p) { return p.first + ":" + fmt(p.second); });
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.attack.topk_per_layer.clear();
         for (const auto& item : split(v, ",")) {
           const auto colon = item.rfind(':');
           if (colon == std::string::npos) throw ConfigError("expected layer:k, got '" + item + "'");
           c.attack.topk_per_layer.emplace_back(trim(item.substr(0, colon)), to_real(item.substr(colon + 1)));
         }
       }},
      SDBA_SIZE_KEY("attack.attack_num", attack.attack_num, "rounds in the injection window"),
      SDBA_SIZE_KEY("attack.start_round", attack.start_round, "first injection round"),
      SDBA_BOOL_KEY("attack.pgd_enabled", attack.pgd_enabled, "project the malicious delta onto an L2 ball"),
      SDBA_REAL_KEY("attack.pgd_delta", attack.pgd_delta, "L2 radius of the projection"),
      SDBA_BOOL_KEY("attack.pgd_per_step", attack.pgd_per_step, "also project after every local step"),
      SDBA_REAL_KEY("attack.neurotoxin_mask_percent", attack.neurotoxin_mask_percent,
                    "neurotoxin: percent of coordinates excluded by benign magnitude"),
      {"defense.pipeline", "none, or stages joined by '+': multi_krum(f[,m]), norm_clip(b), weak_dp(b,s), flame(l)",
       [](const ExperimentConfig& c) { return to_string(c.defense); },
       [](ExperimentConfig& c, const std::string& v) { c.defense = parse_pipeline(trim(v)); }},
      SDBA_BOOL_KEY("defense.transformer_menu", defense_transformer_menu,
                    "reject multi_krum and flame on the transformer"),
      SDBA_SIZE_KEY("eval.benign_rows", eval.benign_rows, "rows of the benign (MA) test set"),
      SDBA_SIZE_KEY("eval.backdoor_rows", eval.backdoor_rows, "rows of the backdoor (BA) test set"),
      {"taus", "lifespan thresholds, comma-separated",
       [](const ExperimentConfig& c) { return join(c.taus, fmt); },
       [](ExperimentConfig& c, const std::string& v) {
         c.taus.clear();
         for (const auto& t : split(v, ", ")) c.taus.push_back(to_real(t));
       }},
      {"seeds", "seeds, comma-separated; one run each",
       [](const ExperimentConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& t : split(v, ", ")) c.seeds.push_back(to_u64(t));
       }},
      {"output_dir", "directory receiving CSV and SVG outputs",
       [](const ExperimentConfig& c) { return c.output_dir.string(); },
       [](ExperimentConfig& c, const std::string& v) { c.output_dir = trim(v); }},
      SDBA_SIZE_KEY("checkpoint_every", checkpoint_every, "save the global model every N rounds (0 = never)"),
      SDBA_BOOL_KEY("record_timing", record_timing, "fill wall_ms (makes CSVs run-dependent)"),
  };
  return keys;
}

#undef SDBA_SIZE_KEY
#undef SDBA_REAL_KEY
#undef SDBA_BOOL_KEY

const KeyEntry* find_key(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return &e;
  return nullptr;
}

template <class F>
void field(const std::string& key, F&& check) {
  try {
    check();
  } catch (const FieldError&) {
    throw;
  } catch (const ConfigError& e) {
    throw FieldError(key, e.what());
  }
}

bool uses_costly_defense(const DefensePipeline& p) {
  for (const auto& s : p.stages)
    if (std::holds_alternative<MultiKrumStage>(s) || std::holds_alternative<FlameStage>(s)) return true;
  return false;
}

void apply_transformer_defaults(ExperimentConfig& c, const std::set<std::string>& explicit_keys) {
  if (c.model.kind != ModelKind::kTransformer) return;
  const AttackPlan lstm;
  if (!explicit_keys.count("attack.target_layers") && c.attack.target_layers == lstm.target_layers)
    c.attack.target_layers = {"mlp.c_fc"};
  if (!explicit_keys.count("attack.topk_per_layer") && c.attack.topk_per_layer == lstm.topk_per_layer)
    c.attack.topk_per_layer.clear();
  if (!explicit_keys.count("fed.lr") && c.fed.lr == FedConfig{}.lr) c.fed.lr = 0.05;
}

}  // namespace

ExperimentConfig harmonize(ExperimentConfig cfg) {
  cfg.corpus.vocab_size = cfg.model.vocab_size;
  cfg.corpus.seq_len = cfg.model.seq_len;
  cfg.corpus.num_clients = cfg.fed.total_clients;
  return cfg;
}

void validate(const ExperimentConfig& raw) {
  const ExperimentConfig c = harmonize(raw);
  field("model", [&] { validate(c.model); });
  field("corpus", [&] { validate(c.corpus); });
  field("trigger", [&] {
    validate(c.trigger, c.model.vocab_size);
    if (c.trigger.prefix.size() + 1 > c.model.seq_len) throw ConfigError("trigger plus target longer than seq_len");
  });
  field("fed", [&] { validate(c.fed); });
  const auto schema = make_schema(c.model);
  if (c.attack.kind == AttackKind::kSdba && c.attack.target_layers.empty())
    throw FieldError("attack.target_layers", "sdba requires at least one target layer");
  for (const auto& name : c.attack.target_layers)
    if (schema->resolve(name).empty())
      throw FieldError("attack.target_layers", "no layer '" + name + "' in the " + to_string(c.model.kind) + " model");
  for (const auto& entry : c.attack.topk_per_layer)
    if (schema->resolve(entry.first).empty())
      throw FieldError("attack.topk_per_layer", "no layer '" + entry.first + "' in the " + to_string(c.model.kind) + " model");
  field("attack", [&] { validate(c.attack, *schema); });
  field("defense.pipeline", [&] { validate(c.defense); });
  if (c.defense_transformer_menu && c.model.kind == ModelKind::kTransformer && uses_costly_defense(c.defense))
    throw FieldError("defense.pipeline", "multi_krum and flame are disabled for the transformer");
  if (c.taus.empty()) throw FieldError("taus", "at least one threshold required");
  for (double t : c.taus)
    if (!(t > 0.0 && t < 1.0)) throw FieldError("taus", "thresholds must lie in (0, 1)");
  if (c.seeds.empty()) throw FieldError("seeds", "at least one seed required");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    throw FieldError("seeds", "duplicate seed");
  if (c.eval.benign_rows == 0) throw FieldError("eval.benign_rows", "must be positive");
  if (c.eval.backdoor_rows == 0) throw FieldError("eval.backdoor_rows", "must be positive");
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::map<std::string, std::size_t> line_of;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    const std::string line = trim(text);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("", line_no, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const KeyEntry* entry = find_key(key);
    if (!entry) throw ParseError(key, line_no, "unknown key");
    if (line_of.count(key)) throw ParseError(key, line_no, "duplicate key");
    try {
      entry->set(base, line.substr(eq + 1));
    } catch (const Error& e) {
      throw ParseError(key, line_no, e.what());
    }
    line_of[key] = line_no;
  }
  std::set<std::string> explicit_keys;
  for (const auto& [k, _] : line_of) explicit_keys.insert(k);
  apply_transformer_defaults(base, explicit_keys);
  try {
    validate(base);
  } catch (const FieldError& e) {
    std::size_t at = 0;
    for (const auto& [k, l] : line_of)
      if (k == e.key() || k.rfind(e.key() + ".", 0) == 0) at = std::max(at, l);
    throw ParseError(e.key(), at, e.what());
  }
  return base;
}

ExperimentConfig parse_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

std::vector<ConfigKeyDoc> config_key_docs() {
  const ExperimentConfig defaults;
  std::vector<ConfigKeyDoc> docs;
  for (const auto& e : registry()) docs.push_back({e.key, e.get(defaults), e.help});
  return docs;
}

// ---------------------------------------------------------------------------
// Presets

namespace {

// Desk calibration shared by the presets.
ExperimentConfig desk() {
  ExperimentConfig c;
  c.corpus.batch_size = 4;
  c.trigger.poison_ratio = 1.0;
  c.eval.backdoor_rows = 500;
  return c;
}

ExperimentConfig lstm_desk() {
  ExperimentConfig c = desk();
  c.fed.lr = 5.0;
  return c;
}

ExperimentConfig transformer_desk() {
  ExperimentConfig c = desk();
  c.model.kind = ModelKind::kTransformer;
  c.model.hidden_dim = 64;
  c.model.num_blocks = 2;
  c.attack.target_layers = {"mlp.c_fc"};
  c.attack.topk_per_layer.clear();
  c.attack.topk_percent = 0.0;
  c.fed.lr = 0.25;
  c.attack.pgd_delta = 0.3;
  c.taus = {0.8, 0.5, 0.2};
  c.defense_transformer_menu = true;
  return c;
}

Preset make(std::string name, std::string description, ExperimentConfig c, const std::string& pipeline = "none") {
  c.defense = parse_pipeline(pipeline);
  c.output_dir = std::filesystem::path("out") / name;
  return {std::move(name), std::move(description), std::move(c)};
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    std::vector<Preset> p;
    p.push_back(make("fig9_no_defense", "LSTM durability without defense", lstm_desk()));
    p.push_back(make("fig10_a", "LSTM under Multi-Krum", lstm_desk(), "multi_krum(1)"));
    p.push_back(make("fig10_b", "LSTM under norm clipping", lstm_desk(), "norm_clip(3)"));
    p.push_back(make("fig10_c", "LSTM under weak DP", lstm_desk(), "weak_dp(3,0.001)"));
    p.push_back(make("fig10_d", "LSTM under FLAME", lstm_desk(), "flame(0.001)"));
    p.push_back(make("fig10_e", "LSTM under norm clipping + Multi-Krum", lstm_desk(), "norm_clip(3)+multi_krum(1)"));
    p.push_back(make("fig10_f", "LSTM under weak DP + Multi-Krum", lstm_desk(), "weak_dp(3,0.001)+multi_krum(1)"));
    p.push_back(make("fig11_gpt_no_defense", "transformer durability without defense", transformer_desk()));
    p.push_back(make("fig12_gpt_normclip", "transformer under norm clipping", transformer_desk(), "norm_clip(0.3)"));
    p.push_back(make("fig12_gpt_weakdp", "transformer under weak DP", transformer_desk(), "weak_dp(0.3,0.001)"));
    p.push_back(make("table2_sweep", "LSTM lifespan across thresholds", lstm_desk()));
    p.push_back(make("table4_ma", "LSTM main accuracy under attack", lstm_desk()));
    return p;
  }();
  return all;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

// ---------------------------------------------------------------------------
// Running

SeedSetup seed_setup(const ExperimentConfig& cfg, std::uint64_t seed) {
  const ExperimentConfig h = harmonize(cfg);
  SeedSetup s{h.model, h.corpus, h.fed};
  s.model.seed = seed;
  s.corpus.seed = seed;
  s.fed.seed = seed;
  return s;
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream* progress) {
  validate(cfg);
  const SeedSetup s = seed_setup(cfg, seed);
  const auto model = make_model(s.model);
  const auto shards = generate_corpus(s.corpus);
  const ClientShard poisoned = poison_shard(shards[kAttackerId], cfg.trigger, s.model.seq_len, seed);
  const Batch benign_test = build_benign_testset(cfg.trigger, s.corpus, cfg.eval.benign_rows);
  const Batch backdoor_test = build_backdoor_testset(cfg.trigger, s.corpus, cfg.eval.backdoor_rows);

  FederationEnv env;
  env.model = model.get();
  env.fed = s.fed;
  env.attack = cfg.attack;
  env.defense = cfg.defense;
  env.shards = shards;
  env.attacker_shard = &poisoned;
  env.benign_test = &benign_test;
  env.backdoor_test = &backdoor_test;
  env.record_timing = cfg.record_timing;

  Federation fed(env, model->init());
  if (cfg.checkpoint_every > 0)
    fed.enable_checkpoints(cfg.output_dir / ("checkpoints_seed_" + std::to_string(seed)), cfg.checkpoint_every);
  for (std::size_t r = 0; r < s.fed.total_rounds; ++r) {
    const RoundRecord& rec = fed.step();
    if (progress)
      *progress << "seed " << seed << " round " << rec.round << " ma " << fmt(rec.ma) << " ba " << fmt(rec.ba)
                << (rec.attack_active ? " attack" : "") << '\n';
  }
  return {seed, fed.records()};
}

std::vector<AggregateRow> aggregate_runs(std::span<const SeedRun> runs) {
  if (runs.empty()) return {};
  const std::size_t n = runs.front().records.size();
  for (const auto& r : runs)
    if (r.records.size() != n) throw EvaluationError("aggregate: runs differ in length");
  std::vector<AggregateRow> rows(n);
  for (std::size_t t = 0; t < n; ++t) {
    rows[t].round = runs.front().records[t].round;
    for (const auto& r : runs) {
      rows[t].ma += r.records[t].ma;
      rows[t].ba += r.records[t].ba;
    }
    rows[t].ma /= static_cast<double>(runs.size());
    rows[t].ba /= static_cast<double>(runs.size());
  }
  return rows;
}

std::vector<LifespanRow> lifespan_table(const ExperimentConfig& cfg, std::span<const SeedRun> runs) {
  std::vector<LifespanRow> rows;
  if (cfg.attack.kind == AttackKind::kNone || runs.empty()) return rows;
  const std::string name = to_string(cfg.attack.kind);
  for (double tau : cfg.taus) {
    double sum = 0.0;
    bool any_censored = false, valid = true;
    for (const auto& run : runs) {
      if (cfg.attack.start_round >= run.records.size()) {
        valid = false;
        break;
      }
      const Lifespan l = lifespan(run.records, LifespanQuery{tau, cfg.attack.start_round});
      rows.push_back({name, tau, run.seed, static_cast<double>(l.rounds), l.censored});
      sum += static_cast<double>(l.rounds);
      any_censored = any_censored || l.censored;
    }
    if (!valid) return {};
    rows.push_back({name, tau, 0, sum / static_cast<double>(runs.size()), any_censored});
  }
  return rows;
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "round,ma,ba\n";
  for (const auto& r : rows) f << r.round << ',' << fmt(r.ma) << ',' << fmt(r.ba) << '\n';
  if (!f) throw Error("write failed: " + path.string());
}

void write_lifespan_csv(const std::filesystem::path& path, std::span<const LifespanRow> rows) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "attack,tau,seed,lifespan,censored\n";
  for (const auto& r : rows)
    f << r.attack << ',' << fmt(r.tau) << ',' << (r.seed == 0 ? std::string("mean") : std::to_string(r.seed)) << ','
      << fmt(r.rounds) << ',' << (r.censored ? 1 : 0) << '\n';
  if (!f) throw Error("write failed: " + path.string());
}

namespace {

PlotSpec window_spec(const ExperimentConfig& cfg, std::string title, std::string y_label) {
  PlotSpec spec;
  spec.title = std::move(title);
  spec.y_label = std::move(y_label);
  if (cfg.attack.kind != AttackKind::kNone) {
    spec.band_from = static_cast<double>(cfg.attack.start_round);
    spec.band_to = static_cast<double>(cfg.attack.start_round + cfg.attack.attack_num);
  }
  return spec;
}

std::vector<PlotSeries> per_seed_series(std::span<const SeedRun> runs, std::span<const AggregateRow> agg, bool ba) {
  std::vector<PlotSeries> out;
  for (const auto& run : runs) {
    PlotSeries s{"seed " + std::to_string(run.seed), {}, {}};
    for (const auto& r : run.records) {
      s.x.push_back(static_cast<double>(r.round));
      s.y.push_back(ba ? r.ba : r.ma);
    }
    out.push_back(std::move(s));
  }
  if (runs.size() > 1) {
    PlotSeries mean{"mean", {}, {}};
    for (const auto& r : agg) {
      mean.x.push_back(static_cast<double>(r.round));
      mean.y.push_back(ba ? r.ba : r.ma);
    }
    out.push_back(std::move(mean));
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  validate(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  ExperimentResult result;
  for (std::uint64_t seed : cfg.seeds) {
    if (opts.log) *opts.log << "running seed " << seed << " (" << to_string(cfg.attack.kind) << ")\n";
    result.runs.push_back(run_seed(cfg, seed, opts.verbose_rounds ? opts.log : nullptr));
    write_round_csv(cfg.output_dir / ("seed_" + std::to_string(seed) + ".csv"), result.runs.back().records);
  }
  result.aggregate = aggregate_runs(result.runs);
  result.lifespans = lifespan_table(cfg, result.runs);
  write_aggregate_csv(cfg.output_dir / "aggregate.csv", result.aggregate);
  write_lifespan_csv(cfg.output_dir / "lifespan.csv", result.lifespans);
  const std::string label = to_string(cfg.attack.kind);
  write_line_plot(cfg.output_dir / "ba.svg", window_spec(cfg, "Backdoor accuracy (" + label + ")", "BA"),
                  per_seed_series(result.runs, result.aggregate, true));
  write_line_plot(cfg.output_dir / "ma.svg", window_spec(cfg, "Main accuracy (" + label + ")", "MA"),
                  per_seed_series(result.runs, result.aggregate, false));
  return result;
}

std::vector<std::string> non_attack_differences(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::vector<std::string> diff;
  for (const auto& e : registry()) {
    if (e.key.rfind("attack.", 0) == 0 || e.key == "output_dir") continue;
    if (e.get(a) != e.get(b)) diff.push_back(e.key);
  }
  return diff;
}

ComparisonReport compare_attacks(const std::vector<ExperimentConfig>& cfgs, const std::filesystem::path& output_dir,
                                 const RunOptions& opts) {
  if (cfgs.empty()) throw ComparisonError("compare: no configurations");
  for (std::size_t i = 1; i < cfgs.size(); ++i) {
    const auto diff = non_attack_differences(cfgs[0], cfgs[i]);
    if (!diff.empty()) {
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw ComparisonError("compare: configuration " + std::to_string(i) + " differs outside the attack stanza: " + keys);
    }
  }
  ComparisonReport report;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    std::string attack_stanza;
    for (const auto& e : registry())
      if (e.key.rfind("attack.", 0) == 0) attack_stanza += e.get(cfgs[i]) + "\n";
    std::string label = to_string(cfgs[i].attack.kind);
    if (auto it = seen.find(attack_stanza); it != seen.end())
      report.warnings.push_back("configuration " + std::to_string(i) + " duplicates the attack of configuration " +
                                std::to_string(it->second));
    else
      seen.emplace(attack_stanza, i);
    if (std::count(report.labels.begin(), report.labels.end(), label)) label += " #" + std::to_string(i);
    report.labels.push_back(label);
  }
  if (opts.log)
    for (const auto& w : report.warnings) *opts.log << "warning: " << w << '\n';

  std::filesystem::create_directories(output_dir);
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    ExperimentConfig c = cfgs[i];
    c.output_dir = output_dir / [&] {
      std::string s = report.labels[i];
      std::replace(s.begin(), s.end(), ' ', '_');
      s.erase(std::remove(s.begin(), s.end(), '#'), s.end());
      return s;
    }();
    report.results.push_back(run_experiment(c, opts));
    PlotSeries s{report.labels[i], {}, {}};
    for (const auto& r : report.results.back().aggregate) {
      s.x.push_back(static_cast<double>(r.round));
      s.y.push_back(r.ba);
    }
    series.push_back(std::move(s));
  }
  write_line_plot(output_dir / "compare_ba.svg", window_spec(cfgs[0], "Backdoor accuracy by attack", "BA"), series);

  std::ofstream f(output_dir / "ordering.csv");
  if (!f) throw Error("cannot write " + (output_dir / "ordering.csv").string());
  f << "tau";
  for (const auto& l : report.labels) f << ',' << l;
  f << ",ordering\n";
  for (double tau : cfgs[0].taus) {
    std::vector<std::pair<double, std::string>> means;
    f << fmt(tau);
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
      double mean = 0.0;
      for (const auto& row : report.results[i].lifespans)
        if (row.seed == 0 && row.tau == tau) mean = row.rounds;
      means.emplace_back(mean, report.labels[i]);
      f << ',' << fmt(mean);
    }
    std::stable_sort(means.begin(), means.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    f << ',';
    for (std::size_t i = 0; i < means.size(); ++i) {
      if (i) f << (means[i].first == means[i - 1].first ? " = " : " > ");
      f << means[i].second;
    }
    f << '\n';
  }
  return report;
}

}  // namespace sdba
