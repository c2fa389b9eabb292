#include "sdba/metrics.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sdba/errors.hpp"

namespace sdba {

double eval_accuracy(const LanguageModel& model, const ParamVector& params, const Batch& testset,
                     bool eval_position_only) {
  if (testset.rows == 0 || testset.seq_len == 0) throw EvaluationError("eval_accuracy: empty test set");
  const auto pred = model.predict(params, testset, eval_position_only);
  std::size_t hits = 0;
  if (eval_position_only) {
    for (std::size_t r = 0; r < testset.rows; ++r)
      hits += pred[r] == testset.target(r, testset.seq_len - 1);
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == testset.targets[i];
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Lifespan lifespan(std::span<const double> ba, const LifespanQuery& q) {
  if (q.attack_start >= ba.size())
    throw QueryError("lifespan: attack_start " + std::to_string(q.attack_start) + " outside series of length " +
                     std::to_string(ba.size()));
  for (std::size_t t = ba.size(); t-- > q.attack_start;)
    if (ba[t] > q.tau) return Lifespan{t - q.attack_start, t + 1 == ba.size()};
  return Lifespan{0, false};
}

std::vector<double> ba_series(std::span<const RoundRecord> records) {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.ba);
  return out;
}

std::vector<double> ma_series(std::span<const RoundRecord> records) {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.ma);
  return out;
}

Lifespan lifespan(std::span<const RoundRecord> records, const LifespanQuery& q) {
  return lifespan(ba_series(records), q);
}

std::vector<TauLifespan> tau_sweep(std::span<const double> ba, std::span<const double> taus,
                                   std::size_t attack_start) {
  std::vector<TauLifespan> out;
  for (double tau : taus) out.push_back({tau, lifespan(ba, LifespanQuery{tau, attack_start})});
  return out;
}

std::vector<TauLifespan> tau_sweep(std::span<const RoundRecord> records, std::span<const double> taus,
                                   std::size_t attack_start) {
  return tau_sweep(ba_series(records), taus, attack_start);
}

const char* const kRoundCsvHeader = "round,ma,ba,attack_active,admitted,filtered,clip_count,wall_ms";

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + std::to_string(ids[i]);
  return s;
}

template <typename T>
T parse_field(const std::string& text, std::size_t line) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError("round csv line " + std::to_string(line) + ": bad field '" + text + "'");
  return v;
}

std::vector<std::size_t> split_ids(const std::string& text, std::size_t line) {
  std::vector<std::size_t> ids;
  if (text.empty()) return ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) ids.push_back(parse_field<std::size_t>(item, line));
  return ids;
}

}  // namespace

void write_round_csv(std::ostream& out, std::span<const RoundRecord> records) {
  out << kRoundCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.round << ',' << num(r.ma) << ',' << num(r.ba) << ',' << (r.attack_active ? 1 : 0) << ','
        << join_ids(r.defense_diag.admitted_ids) << ',' << join_ids(r.defense_diag.filtered_ids) << ','
        << r.defense_diag.clip_count << ',' << num(r.wall_ms) << '\n';
  }
}

void write_round_csv(const std::filesystem::path& path, std::span<const RoundRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_round_csv(out, records);
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<RoundRecord> read_round_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRoundCsvHeader) throw DataError("round csv: unexpected header");
  std::vector<RoundRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw DataError("round csv line " + std::to_string(lineno) + ": expected 8 fields");
    RoundRecord r;
    r.round = parse_field<std::size_t>(f[0], lineno);
    r.ma = parse_field<double>(f[1], lineno);
    r.ba = parse_field<double>(f[2], lineno);
    r.attack_active = parse_field<int>(f[3], lineno) != 0;
    r.defense_diag.admitted_ids = split_ids(f[4], lineno);
    r.defense_diag.filtered_ids = split_ids(f[5], lineno);
    r.defense_diag.clip_count = parse_field<std::size_t>(f[6], lineno);
    r.wall_ms = parse_field<double>(f[7], lineno);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RoundRecord> read_round_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_round_csv(in);
}

}  // namespace sdba
