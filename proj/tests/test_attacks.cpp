#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sdba/attacks.hpp"
#include "sdba/corpus.hpp"
#include "sdba/errors.hpp"
#include "sdba/federation.hpp"
#include "test_support.hpp"

using namespace sdba;

namespace {

SchemaPtr flat_schema(std::vector<std::pair<std::string, std::size_t>> layers) {
  return std::make_shared<const LayerSchema>(std::move(layers));
}

ParamVector vec(const SchemaPtr& s, std::vector<double> v) { return ParamVector(s, std::move(v)); }

// Sort-based oracle: indices of the `count` largest |v| (ties: lower index).
std::vector<std::size_t> largest_indices(const std::vector<double>& v, std::size_t count) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TEST_CASE("top-k masking zeroes the largest magnitudes") {
  const auto s = flat_schema({{"a", 4}});
  const auto out = topk_mask(vec(s, {1, -4, 2, 3}), 50, std::vector<std::string>{"a"});
  CHECK(out == vec(s, {1, 0, 2, 0}));
  CHECK(topk_mask(vec(s, {1, -4, 2, 3}), 0, std::vector<std::string>{"a"}) == vec(s, {1, -4, 2, 3}));
  CHECK(topk_mask(vec(s, {1, -4, 2, 3}), 100, std::vector<std::string>{"a"}) == vec(s, {0, 0, 0, 0}));
  CHECK_THROWS_AS(topk_mask(vec(s, {1, 2, 3, 4}), 5, std::vector<std::string>{}), ConfigError);
  CHECK(topk_mask(vec(s, {1, 2, 3, 4}), 0, std::vector<std::string>{}) == vec(s, {1, 2, 3, 4}));
}

TEST_CASE("top-k ties fall to the lower index") {
  const auto s = flat_schema({{"a", 4}});
  CHECK(topk_mask(vec(s, {2, -2, 2, 1}), 50, std::vector<std::string>{"a"}) == vec(s, {0, 0, 2, 1}));
}

TEST_CASE("top-k leaves out-of-scope layers alone") {
  const auto s = flat_schema({{"a", 2}, {"b", 3}});
  const auto out = topk_mask(vec(s, {9, 8, 1, 5, 3}), 34, std::vector<std::string>{"b"});
  // ceil(0.34 * 3) = 2 of b's three coordinates
  CHECK(out == vec(s, {9, 8, 1, 0, 0}));
}

TEST_CASE("top-k masking matches a sort oracle on random inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t da = 1 + rng() % 40, db = 1 + rng() % 40;
    const auto s = flat_schema({{"a", da}, {"b", db}});
    std::normal_distribution<double> g;
    std::vector<double> v(da + db);
    for (auto& x : v) x = g(rng);
    const double k = std::uniform_real_distribution<double>(0, 100)(rng);
    const auto out = topk_mask(vec(s, v), k, std::vector<std::string>{"b"});
    const std::size_t expect = static_cast<std::size_t>(std::ceil(k / 100.0 * static_cast<double>(db)));
    std::vector<double> scoped(v.begin() + static_cast<std::ptrdiff_t>(da), v.end());
    const auto zeroed = largest_indices(scoped, expect);
    for (std::size_t i = 0; i < da; ++i) CHECK(out[i] == v[i]);
    for (std::size_t j = 0; j < db; ++j) {
      const bool z = std::binary_search(zeroed.begin(), zeroed.end(), j);
      CHECK(out[da + j] == (z ? 0.0 : v[da + j]));
    }
  }
}

TEST_CASE("mask count is the ceiling with at least one coordinate for positive k") {
  CHECK(mask_count(0, 100) == 0);
  CHECK(mask_count(5, 100) == 5);
  CHECK(mask_count(5, 101) == 6);
  CHECK(mask_count(1e-9, 100) == 1);
  CHECK(mask_count(100, 7) == 7);
}

TEST_CASE("layer-wise masking keeps only the selected layers") {
  const auto lstm = init_model(ModelConfig{ModelKind::kLstm, 8, 4, 1, 4, 3});
  const std::vector<std::string> sel{"ih", "hh"};
  const auto out = layer_wise_mask(lstm, sel);
  for (const auto& l : lstm.schema().layers()) {
    const bool kept = l.name == "ih" || l.name == "hh";
    const auto a = out.segment(l), b = lstm.segment(l);
    for (std::size_t i = 0; i < l.length; ++i) CHECK(a[i] == (kept ? b[i] : 0.0));
  }
  std::vector<std::string> all;
  for (const auto& l : lstm.schema().layers()) all.push_back(l.name);
  CHECK(layer_wise_mask(lstm, all) == lstm);
  CHECK_THROWS_AS(layer_wise_mask(lstm, std::vector<std::string>{"nope"}), ConfigError);

  const auto tr = init_model(ModelConfig{ModelKind::kTransformer, 8, 4, 2, 4, 3});
  const auto t_out = layer_wise_mask(tr, std::vector<std::string>{"mlp.c_fc"});
  for (const auto& l : tr.schema().layers()) {
    const bool kept = l.name.ends_with(".mlp.c_fc");
    const auto a = t_out.segment(l), b = tr.segment(l);
    for (std::size_t i = 0; i < l.length; ++i) CHECK(a[i] == (kept ? b[i] : 0.0));
  }
}

TEST_CASE("projection onto the L2 ball") {
  const auto s = flat_schema({{"a", 2}});
  const auto p = pgd_project(vec(s, {3, 4}), 3);
  CHECK(p[0] == doctest::Approx(1.8).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(pgd_project(vec(s, {0.6, 0.8}), 3) == vec(s, {0.6, 0.8}));
  CHECK(pgd_project(vec(s, {0, 0}), 3) == vec(s, {0, 0}));
  CHECK_THROWS_AS(pgd_project(vec(s, {1, 1}), 0), ConfigError);
}

TEST_CASE("projection is exact, direction-preserving and idempotent") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng() % 64;
    const auto s = flat_schema({{"a", d}});
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    const ParamVector in = vec(s, v);
    const double bound = in.norm() * 0.5;
    const auto out = pgd_project(in, bound);
    CHECK(std::abs(out.norm() - bound) <= 1e-9 * bound);
    CHECK(std::abs(out.dot(in) / (out.norm() * in.norm()) - 1.0) <= 1e-12);
    CHECK(pgd_project(out, bound) == out);
  }
}

TEST_CASE("neurotoxin masks coordinates the benign direction moves most") {
  const auto s = flat_schema({{"a", 4}});
  CHECK(neurotoxin_mask(vec(s, {1, 1, 1, 1}), vec(s, {5, 1, 2, 9}), 50) == vec(s, {0, 1, 1, 0}));
  // all-zero benign direction: tie-break zeroes the first coordinates
  CHECK(neurotoxin_mask(vec(s, {1, 1, 1, 1}), vec(s, {0, 0, 0, 0}), 50) == vec(s, {0, 0, 1, 1}));
  const auto one = neurotoxin_mask(vec(s, {1, 1, 1, 1}), vec(s, {5, 1, 2, 9}), 1e-6);
  CHECK(std::count(one.values().begin(), one.values().end(), 0.0) == 1);
  CHECK(one[3] == 0.0);
}

TEST_CASE("attack plans are validated against the schema") {
  const auto schema = make_schema(ModelConfig{});
  AttackPlan p;
  CHECK_NOTHROW(validate(p, *schema));
  p.target_layers.clear();
  CHECK_THROWS_AS(validate(p, *schema), ConfigError);
  p.target_layers = {"mlp.c_fc"};
  CHECK_THROWS_AS(validate(p, *schema), ConfigError);
  AttackPlan q;
  q.topk_percent = 101;
  CHECK_THROWS_AS(validate(q, *schema), ConfigError);
  AttackPlan r;
  r.pgd_delta = 0;
  CHECK_THROWS_AS(validate(r, *schema), ConfigError);
  CHECK(parse_attack_kind("neurotoxin") == AttackKind::kNeurotoxin);
  CHECK_THROWS_AS(parse_attack_kind("dba"), ConfigError);
}

TEST_CASE("attack window") {
  AttackPlan p;
  p.start_round = 5;
  p.attack_num = 3;
  CHECK(!p.active(4));
  CHECK(p.active(5));
  CHECK(p.active(7));
  CHECK(!p.active(8));
  p.kind = AttackKind::kNone;
  CHECK(!p.active(5));
}

namespace {

struct Fixture {
  ModelConfig mc{ModelKind::kLstm, 16, 6, 1, 8, 2};
  std::unique_ptr<LanguageModel> model = make_model(mc);
  ParamVector global = model->init();
  CorpusConfig cc{16, 2, 8, 8, 0.5, 2, 4, 4, 3};
  std::vector<ClientShard> shards = generate_corpus(cc);
  TriggerSpec trigger{{3, 4}, 5, 0.5};
  ClientShard poisoned = poison_shard(shards[0], trigger, 8, 2);

  AttackInput input(const ClientShard& shard, std::size_t epochs, const ParamVector* benign = nullptr) {
    AttackInput in;
    in.client_id = 0;
    in.data = shard.batches;
    in.num_samples = shard.num_sequences();
    in.lr = 0.5;
    in.epochs = epochs;
    in.benign_direction = benign;
    return in;
  }
};

}  // namespace

TEST_CASE("sdba updates only its target layers") {
  Fixture fx;
  AttackPlan plan;
  const auto u = run_attack(*fx.model, fx.global, plan, fx.input(fx.poisoned, 3));
  CHECK(u.malicious);
  for (const auto& l : fx.global.schema().layers()) {
    const auto seg = u.update.delta.segment(l);
    const bool any = std::any_of(seg.begin(), seg.end(), [](double v) { return v != 0.0; });
    CHECK(any == (l.name == "ih" || l.name == "hh"));
  }
}

TEST_CASE("pgd bounds the malicious delta") {
  Fixture fx;
  for (auto kind : {AttackKind::kBaseline, AttackKind::kNeurotoxin, AttackKind::kSdba}) {
    for (bool per_step : {false, true}) {
      AttackPlan plan;
      plan.kind = kind;
      plan.pgd_enabled = true;
      plan.pgd_delta = 0.05;
      plan.pgd_per_step = per_step;
      const ParamVector benign = fx.global.zeros_like();
      const auto u = run_attack(*fx.model, fx.global, plan, fx.input(fx.poisoned, 4, &benign));
      CHECK(u.update.delta.norm() <= 0.05 + 1e-9);
    }
  }
}

TEST_CASE("baseline without poison equals a benign client bit for bit") {
  Fixture fx;
  AttackPlan plan;
  plan.kind = AttackKind::kBaseline;
  const auto attacked = run_attack(*fx.model, fx.global, plan, fx.input(fx.shards[1], 2));
  FedConfig fed;
  fed.lr = 0.5;
  fed.local_epochs_benign = 2;
  const auto benign = train_benign(*fx.model, fx.global, fx.shards[1], fx.shards[1].batches, fed);
  CHECK(attacked.update.delta == benign.update.delta);
  CHECK(attacked.update.num_samples == benign.update.num_samples);
}

TEST_CASE("sdba with k = 0 differs from baseline only through the layer mask") {
  Fixture fx;
  AttackPlan sdba;
  sdba.topk_per_layer.clear();
  AttackPlan base;
  base.kind = AttackKind::kBaseline;
  // One step from the same state: the sdba delta is the baseline delta restricted to ih/hh.
  const auto a = run_attack(*fx.model, fx.global, sdba, fx.input(ClientShard{0, {fx.poisoned.batches[0]}}, 1));
  const auto b = run_attack(*fx.model, fx.global, base, fx.input(ClientShard{0, {fx.poisoned.batches[0]}}, 1));
  CHECK(a.update.delta == layer_wise_mask(b.update.delta, sdba.target_layers));
}

TEST_CASE("neurotoxin never moves the masked coordinates") {
  Fixture fx;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  ParamVector benign = fx.global.zeros_like();
  for (double& v : benign.values()) v = g(rng);
  AttackPlan plan;
  plan.kind = AttackKind::kNeurotoxin;
  plan.neurotoxin_mask_percent = 10;
  const auto u = run_attack(*fx.model, fx.global, plan, fx.input(fx.poisoned, 2, &benign));
  std::vector<double> b(benign.values().begin(), benign.values().end());
  const auto masked = largest_indices(b, mask_count(10, b.size()));
  for (auto i : masked) CHECK(u.update.delta[i] == 0.0);
  AttackPlan no_dir = plan;
  CHECK_THROWS_AS(run_attack(*fx.model, fx.global, no_dir, fx.input(fx.poisoned, 2)), ConfigError);
}
