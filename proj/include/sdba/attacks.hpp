#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdba/model.hpp"
#include "sdba/update.hpp"

namespace sdba {

enum class AttackKind { kNone, kBaseline, kNeurotoxin, kSdba };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& text);

struct AttackPlan {
  AttackKind kind = AttackKind::kSdba;
  std::vector<std::string> target_layers{"ih", "hh"};
  /// Applied over all target layers jointly unless topk_per_layer is set.
  double topk_percent = 0.0;
  /// Per-layer k overrides; each entry masks within its own layer.
  std::vector<std::pair<std::string, double>> topk_per_layer{{"ih", 5.0}, {"hh", 0.0}};
  std::size_t attack_num = 40;
  std::size_t start_round = 50;
  bool pgd_enabled = false;
  double pgd_delta = 3.0;
  /// Project after every local step instead of once on the final delta.
  bool pgd_per_step = false;
  double neurotoxin_mask_percent = 5.0;

  bool active(std::size_t round) const noexcept {
    return kind != AttackKind::kNone && round >= start_round && round < start_round + attack_num;
  }

  bool operator==(const AttackPlan&) const = default;
};

/// Throws ConfigError for unknown layers or an sdba plan without targets.
void validate(const AttackPlan& plan, const LayerSchema& schema);

/// Coordinate keep-mask aligned to a parameter vector.
struct GradientMask {
  std::vector<bool> keep;

  std::size_t zeroed() const;
  /// Idempotent: zeroes every coordinate with keep == false.
  void apply(ParamVector& v) const;
};

/// Number of coordinates a k-percent mask zeroes in a scope of size d:
/// ceil(k/100 * d), and at least one whenever k > 0.
std::size_t mask_count(double percent, std::size_t d);

/// Keeps `selected` layers; every other segment becomes exactly zero.
ParamVector layer_wise_mask(const ParamVector& grad, std::span<const std::string> selected);

/// Mask zeroing the mask_count(k, |scope|) largest-|value| coordinates inside
/// the scoped layers (ties: lower index first).
GradientMask topk_pattern(const ParamVector& values, double k_percent, std::span<const std::string> scope);
ParamVector topk_mask(const ParamVector& grad, double k_percent, std::span<const std::string> scope);

/// Rescales onto the L2 ball of radius `bound` when outside it.
ParamVector pgd_project(const ParamVector& delta, double bound);

/// Zeroes grad where |benign_direction| is among its top mask_percent%.
ParamVector neurotoxin_mask(const ParamVector& grad, const ParamVector& benign_direction, double mask_percent);

/// Applies the plan's per-step gradient transform (none for baseline).
void transform_gradient(ParamVector& grad, const AttackPlan& plan, const GradientMask* neurotoxin);

struct AttackInput {
  std::size_t client_id = 0;
  std::span<const Batch> data;  // poisoned shard, in visiting order
  std::size_t num_samples = 0;
  double lr = 0.5;
  std::size_t epochs = 5;
  /// Previous global delta; required for neurotoxin.
  const ParamVector* benign_direction = nullptr;
};

/// Malicious local training: E epochs of SGD on the poisoned shard with the
/// plan's gradient masking, then optional PGD projection of the delta.
ClientUpdate run_attack(const LanguageModel& model, const ParamVector& global, const AttackPlan& plan,
                        const AttackInput& input);

}  // namespace sdba
