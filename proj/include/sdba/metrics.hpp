#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "sdba/defenses.hpp"
#include "sdba/model.hpp"

namespace sdba {

struct RoundRecord {
  std::size_t round = 0;
  double ma = 0.0;
  double ba = 0.0;
  bool attack_active = false;
  DefenseDiagnostics defense_diag;
  double wall_ms = 0.0;
};

/// Main accuracy (eval_position_only = false): top-1 next-token accuracy over
/// every position. Backdoor accuracy (true): fraction of rows whose final
/// prediction equals the final target.
double eval_accuracy(const LanguageModel& model, const ParamVector& params, const Batch& testset,
                     bool eval_position_only);

struct LifespanQuery {
  double tau = 0.03;
  std::size_t attack_start = 0;
};

struct Lifespan {
  std::size_t rounds = 0;
  /// The series still exceeds tau at its final round.
  bool censored = false;

  bool operator==(const Lifespan&) const = default;
};

/// max{t >= attack_start : ba[t] > tau} - attack_start, 0 for an empty set.
/// Throws QueryError when attack_start is outside the series.
Lifespan lifespan(std::span<const double> ba, const LifespanQuery& q);
Lifespan lifespan(std::span<const RoundRecord> records, const LifespanQuery& q);

struct TauLifespan {
  double tau = 0.0;
  Lifespan lifespan;
};

std::vector<TauLifespan> tau_sweep(std::span<const double> ba, std::span<const double> taus,
                                   std::size_t attack_start);
std::vector<TauLifespan> tau_sweep(std::span<const RoundRecord> records, std::span<const double> taus,
                                   std::size_t attack_start);

std::vector<double> ba_series(std::span<const RoundRecord> records);
std::vector<double> ma_series(std::span<const RoundRecord> records);

// Round ledger CSV. Header (fixed order):
//   round,ma,ba,attack_active,admitted,filtered,clip_count,wall_ms
// admitted/filtered are ';'-joined client ids; reals use shortest round-trip
// formatting.
extern const char* const kRoundCsvHeader;
void write_round_csv(std::ostream& out, std::span<const RoundRecord> records);
void write_round_csv(const std::filesystem::path& path, std::span<const RoundRecord> records);
std::vector<RoundRecord> read_round_csv(std::istream& in);
std::vector<RoundRecord> read_round_csv(const std::filesystem::path& path);

}  // namespace sdba
