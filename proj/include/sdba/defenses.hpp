#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sdba/rng.hpp"
#include "sdba/update.hpp"

namespace sdba {

struct MultiKrumStage {
  std::size_t f = 1;
  /// Survivors; defaults to n - f - 1 for the round's n.
  std::optional<std::size_t> m;
  bool operator==(const MultiKrumStage&) const = default;
};

struct NormClipStage {
  double bound = 3.0;
  bool operator==(const NormClipStage&) const = default;
};

struct WeakDpStage {
  double bound = 3.0;
  double sigma = 0.001;
  bool operator==(const WeakDpStage&) const = default;
};

struct FlameStage {
  double lambda = 0.001;
  bool operator==(const FlameStage&) const = default;
};

using DefenseStage = std::variant<MultiKrumStage, NormClipStage, WeakDpStage, FlameStage>;

struct DefensePipeline {
  std::vector<DefenseStage> stages;
  bool operator==(const DefensePipeline&) const = default;
};

void validate(const DefensePipeline& pipeline);

/// Textual form used by config files: stages joined with '+', e.g.
/// "norm_clip(3)+multi_krum(1,8)"; "none" or "" is the empty pipeline.
std::string to_string(const DefensePipeline& pipeline);
DefensePipeline parse_pipeline(const std::string& text);

struct DefenseDiagnostics {
  std::vector<std::size_t> admitted_ids;
  std::vector<std::size_t> filtered_ids;
  std::size_t clip_count = 0;
  double noise_sigma_applied = 0.0;
  bool krum_skipped = false;
  bool flame_degraded = false;
  /// Every update was filtered; the round leaves the global model unchanged.
  bool filtered_all = false;
  /// Multi-Krum scores aligned with the stage's input order (last Krum stage).
  std::vector<double> krum_scores;

  bool operator==(const DefenseDiagnostics&) const = default;
};

struct DefenseResult {
  std::vector<Update> updates;
  DefenseDiagnostics diag;
};

/// Sum over each update of squared L2 distances to its n - f - 2 nearest
/// neighbours. Exposed for inspection.
std::vector<double> krum_scores(const std::vector<Update>& updates, std::size_t f);

DefenseResult multi_krum(std::vector<Update> updates, std::size_t f, std::optional<std::size_t> m = std::nullopt);
DefenseResult norm_clip(std::vector<Update> updates, double bound);
DefenseResult weak_dp(std::vector<Update> updates, double bound, double sigma, Rng& server_rng);
DefenseResult flame(std::vector<Update> updates, double lambda, Rng& server_rng);

/// Applies the stages in order; updates are first put in client-id order so
/// results do not depend on arrival order.
DefenseResult apply_pipeline(std::vector<Update> updates, const DefensePipeline& pipeline, Rng& server_rng);

}  // namespace sdba
