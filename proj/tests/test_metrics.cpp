#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sdba/corpus.hpp"
#include "sdba/errors.hpp"
#include "sdba/metrics.hpp"
#include "test_support.hpp"

using namespace sdba;

namespace {

// Reverse scan from the end: the first round above tau is the maximum.
Lifespan reverse_scan(const std::vector<double>& ba, double tau, std::size_t ts) {
  for (std::size_t t = ba.size(); t-- > ts;)
    if (ba[t] > tau) return Lifespan{t - ts, t + 1 == ba.size()};
  return Lifespan{0, false};
}

bool same_csv_fields(const RoundRecord& a, const RoundRecord& b) {
  return a.round == b.round && a.ma == b.ma && a.ba == b.ba && a.attack_active == b.attack_active &&
         a.defense_diag.admitted_ids == b.defense_diag.admitted_ids &&
         a.defense_diag.filtered_ids == b.defense_diag.filtered_ids &&
         a.defense_diag.clip_count == b.defense_diag.clip_count && a.wall_ms == b.wall_ms;
}

}  // namespace

TEST_CASE("lifespan examples") {
  const std::vector<double> ba{.1, .8, .7, .05, .02};
  CHECK(lifespan(ba, {0.5, 1}) == Lifespan{1, false});
  CHECK(lifespan(ba, {0.9, 1}) == Lifespan{0, false});
  CHECK(lifespan(ba, {0.01, 1}) == Lifespan{3, true});
  CHECK_THROWS_AS(lifespan(ba, {0.5, 5}), QueryError);
  CHECK_THROWS_AS(lifespan(std::vector<double>{}, {0.5, 0}), QueryError);

  const std::vector<double> flat(10, 0.9);
  for (const auto& row : tau_sweep(flat, std::vector<double>{.5, .3, .03}, 0)) {
    CHECK(row.lifespan.rounds == 9);
    CHECK(row.lifespan.censored);
  }
}

TEST_CASE("lifespan matches a reverse scan and is monotone in tau") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  const std::vector<double> taus{.03, .2, .3, .5, .8};
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> ba(n);
    for (auto& x : ba) x = u(rng) < 0.3 ? u(rng) * 0.1 : u(rng);
    const std::size_t ts = rng() % n;
    const auto sweep = tau_sweep(ba, taus, ts);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      CHECK(sweep[i].lifespan == reverse_scan(ba, taus[i], ts));
      if (i > 0) CHECK(sweep[i].lifespan.rounds <= sweep[i - 1].lifespan.rounds);
    }
  }
}

TEST_CASE("accuracy evaluation") {
  const ModelConfig cfg{ModelKind::kLstm, 10, 4, 1, 5, 1};
  auto model = make_model(cfg);
  ParamVector p = model->init();
  // Hard-wire the decoder bias so token 7 always wins.
  auto bias = p.segment("decoder").subspan(10 * 4);
  bias[7] = 1e6;
  const auto batch = testing::random_batch(30, 5, 10, 3);
  std::vector<std::vector<TokenId>> rows;
  for (std::size_t r = 0; r < 30; ++r) {
    auto s = batch.sequence(r);
    s.back() = 7;
    rows.push_back(s);
  }
  CHECK(eval_accuracy(*model, p, Batch::from_sequences(rows), true) == 1.0);
  const double ma = eval_accuracy(*model, p, batch, false);
  CHECK(ma >= 0.0);
  CHECK(ma <= 1.0);
  CHECK_THROWS_AS(eval_accuracy(*model, p, Batch{}, false), EvaluationError);
}

TEST_CASE("random model backdoor accuracy is near chance") {
  const ModelConfig cfg{ModelKind::kLstm, 200, 64, 1, 16, 9};
  auto model = make_model(cfg);
  CorpusConfig cc;
  const auto bd = build_backdoor_testset(TriggerSpec{}, cc, 1000);
  const double ba = eval_accuracy(*model, model->init(), bd, true);
  // A random init tends to emit a single token everywhere, so check against
  // a binomial 3-sigma band around 1/200 only when that token is not the target.
  const double p = 1.0 / 200.0, sigma = std::sqrt(p * (1 - p) / 1000.0);
  CHECK(ba <= p + 3 * sigma);
}

TEST_CASE("memorised test set gives full main accuracy") {
  const ModelConfig cfg{ModelKind::kLstm, 8, 8, 1, 6, 4};
  auto model = make_model(cfg);
  const auto batch = testing::random_batch(1, 6, 8, 5);
  ParamVector p = model->init();
  std::vector<Batch> data{batch};
  p = sgd_epochs(*model, p, data, 1.0, 400);
  CHECK(eval_accuracy(*model, p, batch, false) == 1.0);
}

TEST_CASE("round CSV round-trips") {
  std::vector<RoundRecord> recs;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t t = 0; t < 50; ++t) {
    RoundRecord r;
    r.round = t;
    r.ma = u(rng);
    r.ba = t % 3 ? u(rng) : 0.1 + 0.2;
    r.attack_active = t % 4 == 0;
    for (std::size_t i = 0; i < 10; ++i) (u(rng) < 0.8 ? r.defense_diag.admitted_ids : r.defense_diag.filtered_ids).push_back(i);
    r.defense_diag.clip_count = rng() % 10;
    r.wall_ms = t % 2 ? u(rng) * 100 : 0.0;
    recs.push_back(r);
  }
  std::stringstream buf;
  write_round_csv(buf, recs);
  CHECK(buf.str().rfind(std::string(kRoundCsvHeader) + "\n", 0) == 0);
  const auto back = read_round_csv(buf);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(same_csv_fields(back[i], recs[i]));

  std::stringstream again;
  write_round_csv(again, back);
  CHECK(again.str() == buf.str());
}

TEST_CASE("round CSV rejects malformed input") {
  std::stringstream bad_header("round,ba\n0,1\n");
  CHECK_THROWS_AS(read_round_csv(bad_header), DataError);
  std::stringstream bad_row(std::string(kRoundCsvHeader) + "\n0,0.5,x,0,,,0,0\n");
  CHECK_THROWS_AS(read_round_csv(bad_row), DataError);
}
