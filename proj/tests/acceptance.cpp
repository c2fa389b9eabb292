// Acceptance suite: one PASS/FAIL line per criterion.
//
//   sdba_acceptance [criteria...] [--work-dir DIR]
//
// With no criteria every one runs. Exit status is 0 only when all selected
// criteria pass.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sdba/attacks.hpp"
#include "sdba/defenses.hpp"
#include "sdba/experiment.hpp"
#include "sdba/federation.hpp"
#include "sdba/metrics.hpp"
#include "sdba/model.hpp"

using namespace sdba;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

SchemaPtr schema(std::vector<std::pair<std::string, std::size_t>> layers) {
  return std::make_shared<const LayerSchema>(std::move(layers));
}

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences.

Batch random_batch(std::size_t rows, std::size_t seq_len, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  std::vector<std::vector<TokenId>> seqs(rows, std::vector<TokenId>(seq_len + 1));
  for (auto& s : seqs)
    for (auto& t : s) t = tok(rng);
  return Batch::from_sequences(seqs);
}

double worst_fd_error(const ModelConfig& cfg, double jitter, std::uint64_t seed) {
  const auto model = make_model(cfg);
  ParamVector p = model->init();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  for (double& v : p.values()) v += u(rng);
  const Batch batch = random_batch(3, cfg.seq_len, cfg.vocab_size, seed + 1);
  const ParamVector analytic = model->gradient(p, batch);
  const double step = 1e-5;
  double worst = 0.0;
  ParamVector probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = model->loss(probe, batch);
    probe[i] = saved - step;
    const double down = model->loss(probe, batch);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const double lstm = worst_fd_error({ModelKind::kLstm, 8, 4, 1, 6, 3}, 0.0, 11);
  const double gpt = worst_fd_error({ModelKind::kTransformer, 8, 4, 2, 6, 3}, 0.03, 12);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {lstm < 1e-4 && gpt < 1e-4 && secs < 30.0,
          "max rel err lstm " + fmt(lstm) + ", transformer " + fmt(gpt) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 2. PGD projection.

Verdict projection() {
  std::mt19937_64 rng(2);
  double worst_norm = 0.0, worst_cos = 0.0;
  bool idempotent = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng() % 500;
    const auto s = schema({{"w", d}});
    const ParamVector x(s, gaussian(d, rng, std::exp(std::uniform_real_distribution<double>(-3, 3)(rng))));
    const double bound = x.norm() * std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    const ParamVector y = pgd_project(x, bound);
    worst_norm = std::max(worst_norm, std::abs(y.norm() - bound) / bound);
    const double cosine = x.dot(y) / (x.norm() * y.norm());
    worst_cos = std::max(worst_cos, std::abs(cosine - 1.0));
    idempotent = idempotent && pgd_project(y, bound) == y;
  }
  return {worst_norm <= 1e-9 && worst_cos <= 1e-12 && idempotent,
          "norm rel err " + fmt(worst_norm) + ", |cos-1| " + fmt(worst_cos) +
              (idempotent ? ", re-projection bit-identical" : ", re-projection differs")};
}

// ---------------------------------------------------------------------------
// 3. Masks against sort oracles.

Verdict masks() {
  std::mt19937_64 rng(3);
  std::size_t topk_bad = 0, layer_bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t da = 1 + rng() % 200, db = 1 + rng() % 200, dc = 1 + rng() % 200;
    const auto s = schema({{"a", da}, {"b", db}, {"c", dc}});
    const auto v = gaussian(da + db + dc, rng);
    const ParamVector grad(s, v);
    const double k = std::uniform_real_distribution<double>(0.0, 100.0)(rng);

    // Scope {a, c}: zero the ceil(k/100 d) largest magnitudes, lower index on ties.
    std::vector<std::size_t> scope;
    for (std::size_t i = 0; i < da; ++i) scope.push_back(i);
    for (std::size_t i = da + db; i < v.size(); ++i) scope.push_back(i);
    const auto count = static_cast<std::size_t>(std::ceil(k / 100.0 * static_cast<double>(scope.size())));
    std::stable_sort(scope.begin(), scope.end(),
                     [&](std::size_t x, std::size_t y) { return std::abs(v[x]) > std::abs(v[y]); });
    std::vector<bool> zero(v.size(), false);
    for (std::size_t i = 0; i < count; ++i) zero[scope[i]] = true;
    const ParamVector out = topk_mask(grad, k, std::vector<std::string>{"a", "c"});
    for (std::size_t i = 0; i < v.size(); ++i)
      if (out[i] != (zero[i] ? 0.0 : v[i])) {
        ++topk_bad;
        break;
      }

    const ParamVector kept = layer_wise_mask(grad, std::vector<std::string>{"b"});
    for (std::size_t i = 0; i < v.size(); ++i) {
      const bool in_b = i >= da && i < da + db;
      if (kept[i] != (in_b ? v[i] : 0.0)) {
        ++layer_bad;
        break;
      }
    }
  }
  return {topk_bad == 0 && layer_bad == 0,
          "500 random (d, k): top-k mismatches " + std::to_string(topk_bad) + ", layer-wise mismatches " +
              std::to_string(layer_bad)};
}

// ---------------------------------------------------------------------------
// 4. FedAvg against an independent weighted mean.

Verdict aggregation() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  bool invariant = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng() % 300, n = 1 + rng() % 20;
    const auto s = schema({{"w", d}});
    const auto g = gaussian(d, rng);
    std::vector<Update> ups;
    std::vector<std::vector<double>> raw;
    std::vector<double> weight;
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back(gaussian(d, rng));
      weight.push_back(static_cast<double>(1 + rng() % 500));
      ups.push_back(Update{rng() % 1000 * 100 + i, ParamVector(s, raw.back()),
                           static_cast<std::size_t>(weight.back())});
    }
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    const ParamVector out = fedavg(ups, ParamVector(s, g));
    for (std::size_t k = 0; k < d; ++k) {
      long double mean = 0.0L;
      for (std::size_t i = 0; i < n; ++i) mean += static_cast<long double>(raw[i][k]) * weight[i];
      const double expect = g[k] + static_cast<double>(mean / total);
      worst = std::max(worst, std::abs(out[k] - expect));
    }
    for (int p = 0; p < 5; ++p) {
      std::shuffle(ups.begin(), ups.end(), rng);
      invariant = invariant && fedavg(ups, ParamVector(s, g)) == out;
    }
  }
  return {worst <= 1e-12 && invariant,
          "max abs err " + fmt(worst) + (invariant ? ", permutations bit-identical" : ", permutation changed result")};
}

// ---------------------------------------------------------------------------
// 5. Multi-Krum with a planted outlier.

Verdict krum() {
  std::size_t excluded = 0, score_mismatch = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(500 + trial);
    const std::size_t d = 50;
    const auto s = schema({{"w", d}});
    const auto centre = gaussian(d, rng);
    std::vector<Update> ups;
    for (std::size_t i = 0; i < 10; ++i) {
      auto v = gaussian(d, rng, 0.05);
      for (std::size_t k = 0; k < d; ++k) v[k] += centre[k];
      ups.push_back(Update{i, ParamVector(s, v), 10});
    }
    const std::size_t bad = rng() % 10;
    ups[bad].delta.scale(100.0);
    const auto r = multi_krum(ups, 1, 8);
    bool out = r.updates.size() == 8;
    for (const auto& u : r.updates) out = out && u.client_id != bad;
    excluded += out;

    for (std::size_t i = 0; i < ups.size(); ++i) {
      std::vector<double> dist;
      for (std::size_t j = 0; j < ups.size(); ++j) {
        if (j == i) continue;
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = ups[i].delta[k] - ups[j].delta[k];
          sq += diff * diff;
        }
        dist.push_back(sq);
      }
      std::sort(dist.begin(), dist.end());
      double score = 0.0;
      for (std::size_t j = 0; j < ups.size() - 1 - 2; ++j) score += dist[j];
      if (r.diag.krum_scores.size() != ups.size() || r.diag.krum_scores[i] != score) ++score_mismatch;
    }
  }
  return {excluded == 100 && score_mismatch == 0,
          "outlier excluded " + std::to_string(excluded) + "/100, score mismatches " + std::to_string(score_mismatch)};
}

// ---------------------------------------------------------------------------
// 6. Lifespan against a reverse scan.

Lifespan reverse_scan(const std::vector<double>& ba, double tau, std::size_t start) {
  for (std::size_t t = ba.size(); t-- > start;)
    if (ba[t] > tau) return {t - start, t + 1 == ba.size()};
  return {0, false};
}

Verdict lifespans() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> taus{0.03, 0.2, 0.3, 0.5, 0.8};
  std::size_t mismatch = 0, non_monotone = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<double> ba(n);
    for (auto& x : ba) x = u(rng) < 0.4 ? u(rng) * 0.06 : u(rng);
    const std::size_t start = rng() % n;
    const auto sweep = tau_sweep(ba, taus, start);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      if (!(lifespan(ba, {taus[i], start}) == reverse_scan(ba, taus[i], start)) ||
          !(sweep[i].lifespan == reverse_scan(ba, taus[i], start)))
        ++mismatch;
      if (i > 0 && sweep[i].lifespan.rounds > sweep[i - 1].lifespan.rounds) ++non_monotone;
    }
  }
  return {mismatch == 0 && non_monotone == 0, "10000 series: mismatches " + std::to_string(mismatch) +
                                                  ", monotonicity violations " + std::to_string(non_monotone)};
}

// ---------------------------------------------------------------------------
// Desk-scale runs, cached across criteria.

class Runs {
 public:
  explicit Runs(bool verbose) : verbose_(verbose) {}

  const std::vector<SeedRun>& get(const std::string& key, const ExperimentConfig& cfg) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<SeedRun> runs;
    const std::clock_t c0 = std::clock();
    for (auto seed : cfg.seeds) runs.push_back(run_seed(cfg, seed));
    cpu_[key] = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
    if (verbose_) std::cerr << "  [" << key << "] " << fmt(cpu_[key], 4) << " s CPU\n";
    return cache_.emplace(key, std::move(runs)).first->second;
  }
  double cpu_seconds(const std::string& key) const { return cpu_.at(key); }

 private:
  bool verbose_;
  std::map<std::string, std::vector<SeedRun>> cache_;
  std::map<std::string, double> cpu_;
};

ExperimentConfig with_attack(ExperimentConfig cfg, AttackKind kind) {
  cfg.attack.kind = kind;
  return cfg;
}

double lowest_tau(const ExperimentConfig& cfg) { return *std::min_element(cfg.taus.begin(), cfg.taus.end()); }

double mean_lifespan(const std::vector<SeedRun>& runs, double tau, std::size_t start) {
  double total = 0.0;
  for (const auto& r : runs) total += static_cast<double>(lifespan(r.records, {tau, start}).rounds);
  return total / static_cast<double>(runs.size());
}

double mean_ba(const std::vector<SeedRun>& runs, std::size_t from, std::size_t to) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs)
    for (std::size_t t = from; t < to; ++t, ++n) total += r.records.at(t).ba;
  return total / static_cast<double>(n);
}

// 7. Durability ordering at the lowest threshold.
Verdict durability(Runs& runs) {
  const ExperimentConfig cfg = find_preset("fig9_no_defense").config;
  const double tau = lowest_tau(cfg);
  const std::size_t start = cfg.attack.start_round;
  std::map<std::string, double> life;
  double worst_cpu = 0.0;
  for (auto [name, kind] : {std::pair{"baseline", AttackKind::kBaseline},
                            std::pair{"neurotoxin", AttackKind::kNeurotoxin}, std::pair{"sdba", AttackKind::kSdba}}) {
    const std::string key = std::string("fig9/") + name;
    life[name] = mean_lifespan(runs.get(key, with_attack(cfg, kind)), tau, start);
    worst_cpu = std::max(worst_cpu, runs.cpu_seconds(key));
  }
  const bool order = life["sdba"] >= life["neurotoxin"] && life["neurotoxin"] >= life["baseline"];
  const bool margin = life["sdba"] - life["baseline"] >= 20.0;
  return {order && margin && worst_cpu < 600.0,
          "mean lifespan at tau " + fmt(tau) + ": sdba " + fmt(life["sdba"]) + ", neurotoxin " +
              fmt(life["neurotoxin"]) + ", baseline " + fmt(life["baseline"]) + "; slowest attack " +
              fmt(worst_cpu, 3) + " s CPU"};
}

// 8. Post-injection BA under clipping and weak DP.
Verdict stealth(Runs& runs) {
  bool pass = true;
  std::string detail;
  for (const char* preset : {"fig10_b", "fig10_c"}) {
    ExperimentConfig cfg = find_preset(preset).config;
    const std::size_t end = cfg.attack.start_round + cfg.attack.attack_num;
    cfg.fed.total_rounds = end + 50;
    const double sdba = mean_ba(runs.get(std::string(preset) + "/sdba", with_attack(cfg, AttackKind::kSdba)), end, end + 50);
    const double base =
        mean_ba(runs.get(std::string(preset) + "/baseline", with_attack(cfg, AttackKind::kBaseline)), end, end + 50);
    pass = pass && sdba - base >= 0.10;
    detail += (detail.empty() ? "" : "; ") + to_string(cfg.defense) + ": sdba " + fmt(sdba, 3) + " vs baseline " +
              fmt(base, 3);
  }
  return {pass, detail};
}

// 9. Final MA of attacked runs against the clean run, per seed.
Verdict ma_stability(Runs& runs) {
  const ExperimentConfig cfg = find_preset("fig9_no_defense").config;
  const auto& clean = runs.get("fig9/none", with_attack(cfg, AttackKind::kNone));
  double worst = 0.0;
  for (auto [name, kind] : {std::pair{"baseline", AttackKind::kBaseline},
                            std::pair{"neurotoxin", AttackKind::kNeurotoxin}, std::pair{"sdba", AttackKind::kSdba}}) {
    const auto& attacked = runs.get(std::string("fig9/") + name, with_attack(cfg, kind));
    for (std::size_t s = 0; s < clean.size(); ++s)
      worst = std::max(worst, std::abs(attacked[s].records.back().ma - clean[s].records.back().ma));
  }
  return {worst <= 0.01, "largest final-round MA gap " + fmt(100.0 * worst, 3) + " pp"};
}

// 10. Transformer: mlp.c_fc against attn.c_proj.
Verdict transformer_layers(Runs& runs) {
  ExperimentConfig cfg = find_preset("fig11_gpt_no_defense").config;
  cfg.attack.kind = AttackKind::kSdba;
  const double tau = lowest_tau(cfg);
  const std::size_t start = cfg.attack.start_round, end = start + cfg.attack.attack_num;
  auto fc_cfg = cfg, proj_cfg = cfg;
  fc_cfg.attack.target_layers = {"mlp.c_fc"};
  proj_cfg.attack.target_layers = {"attn.c_proj"};
  const auto& fc = runs.get("gpt/mlp.c_fc", fc_cfg);
  const auto& proj = runs.get("gpt/attn.c_proj", proj_cfg);
  double peak = 0.0;
  for (const auto& row : aggregate_runs(fc))
    if (row.round >= start && row.round < end) peak = std::max(peak, row.ba);
  const double fc_life = mean_lifespan(fc, tau, start), proj_life = mean_lifespan(proj, tau, start);
  return {peak >= 0.8 && fc_life > proj_life, "mlp.c_fc peak BA during injection " + fmt(peak, 3) +
                                                  "; mean lifespan at tau " + fmt(tau) + ": mlp.c_fc " +
                                                  fmt(fc_life) + " vs attn.c_proj " + fmt(proj_life)};
}

// 11. Every preset twice; CSV outputs must match byte for byte.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism(const fs::path& work) {
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& preset : presets()) {
    ExperimentConfig cfg = preset.config;
    cfg.fed.total_rounds = cfg.attack.start_round + 3;
    for (const char* side : {"a", "b"}) {
      cfg.output_dir = work / "determinism" / side / preset.name;
      fs::remove_all(cfg.output_dir);
      run_experiment(cfg);
    }
    for (const auto& entry : fs::directory_iterator(work / "determinism" / "a" / preset.name)) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      const fs::path twin = work / "determinism" / "b" / preset.name / entry.path().filename();
      if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin))
        differing.push_back(preset.name + "/" + entry.path().filename().string());
    }
  }
  std::string detail = std::to_string(presets().size()) + " presets, " + std::to_string(files) + " CSV files compared";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty() && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the simulator"};
  std::vector<int> selected;
  std::string work_dir = (fs::temp_directory_path() / "sdba_acceptance").string();
  bool verbose = false;
  app.add_option("criteria", selected, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--work-dir", work_dir, "Scratch directory for run artifacts");
  app.add_flag("-v,--verbose", verbose, "Report per-configuration CPU time");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.push_back(i);

  Runs runs(verbose);
  const fs::path work(work_dir);
  fs::create_directories(work);
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
      {1, {"gradient correctness", gradients}},
      {2, {"projection exactness", projection}},
      {3, {"mask exactness", masks}},
      {4, {"aggregation oracle", aggregation}},
      {5, {"multi-krum filtering", krum}},
      {6, {"lifespan oracle", lifespans}},
      {7, {"directional durability", [&] { return durability(runs); }}},
      {8, {"directional stealth", [&] { return stealth(runs); }}},
      {9, {"MA stability", [&] { return ma_stability(runs); }}},
      {10, {"transformer layer choice", [&] { return transformer_layers(runs); }}},
      {11, {"determinism", [&] { return determinism(work); }}},
  };

  int failed = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << name << ": " << v.detail
              << std::endl;
  }
  std::cout << (selected.size() - static_cast<std::size_t>(failed)) << "/" << selected.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
