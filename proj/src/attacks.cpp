#include "sdba/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdba/errors.hpp"

namespace sdba {

std::vector<Update> strip_labels(const std::vector<ClientUpdate>& updates) {
  std::vector<Update> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(u.update);
  return out;
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kBaseline: return "baseline";
    case AttackKind::kNeurotoxin: return "neurotoxin";
    case AttackKind::kSdba: return "sdba";
  }
  return "none";
}

AttackKind parse_attack_kind(const std::string& text) {
  for (auto k : {AttackKind::kNone, AttackKind::kBaseline, AttackKind::kNeurotoxin, AttackKind::kSdba})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown attack kind '" + text + "'");
}

namespace {

void check_layers(std::span<const std::string> names, const LayerSchema& schema) {
  for (const auto& n : names)
    if (schema.resolve(n).empty()) throw ConfigError("unknown layer '" + n + "'");
}

// Coordinate ranges covered by the scoped taxonomy names, in schema order.
std::vector<const Layer*> scoped_layers(std::span<const std::string> scope, const LayerSchema& schema) {
  check_layers(scope, schema);
  std::vector<bool> hit(schema.layers().size(), false);
  for (const auto& n : scope)
    for (auto i : schema.resolve(n)) hit[i] = true;
  std::vector<const Layer*> out;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit[i]) out.push_back(&schema.layers()[i]);
  return out;
}

void check_percent(double p, const char* what) {
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError(std::string(what) + " must be within [0, 100]");
}

// Zeroes the `count` largest-magnitude entries among `index` (ties: lower
// coordinate first) in the returned keep-mask.
GradientMask largest_magnitude_mask(std::span<const double> values, std::vector<std::size_t> index,
                                    std::size_t count) {
  GradientMask mask{std::vector<bool>(values.size(), true)};
  count = std::min(count, index.size());
  if (count == 0) return mask;
  const auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(values[a]), mb = std::abs(values[b]);
    return ma != mb ? ma > mb : a < b;
  };
  std::nth_element(index.begin(), index.begin() + static_cast<std::ptrdiff_t>(count - 1), index.end(), before);
  for (std::size_t i = 0; i < count; ++i) mask.keep[index[i]] = false;
  return mask;
}

}  // namespace

void validate(const AttackPlan& plan, const LayerSchema& schema) {
  check_layers(plan.target_layers, schema);
  for (const auto& [name, k] : plan.topk_per_layer) {
    check_layers(std::span<const std::string>(&name, 1), schema);
    check_percent(k, "attack: per-layer top-k percent");
  }
  check_percent(plan.topk_percent, "attack: topk_percent");
  if (plan.kind == AttackKind::kSdba && plan.target_layers.empty())
    throw ConfigError("attack: sdba requires non-empty target_layers");
  if (plan.kind != AttackKind::kNone && plan.attack_num == 0) throw ConfigError("attack: attack_num must be positive");
  if (!(plan.pgd_delta > 0.0)) throw ConfigError("attack: pgd_delta must be positive");
  if (!(plan.neurotoxin_mask_percent > 0.0 && plan.neurotoxin_mask_percent < 100.0))
    throw ConfigError("attack: neurotoxin_mask_percent must be within (0, 100)");
}

std::size_t GradientMask::zeroed() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false)); }

void GradientMask::apply(ParamVector& v) const {
  if (keep.size() != v.size()) throw ProtocolError("gradient mask length does not match vector");
  auto values = v.values();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!keep[i]) values[i] = 0.0;
}

std::size_t mask_count(double percent, std::size_t d) {
  if (percent <= 0.0 || d == 0) return 0;
  const double exact = percent * static_cast<double>(d) / 100.0;
  const auto n = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(n, 1, d);
}

ParamVector layer_wise_mask(const ParamVector& grad, std::span<const std::string> selected) {
  const auto keep = scoped_layers(selected, grad.schema());
  ParamVector out = grad;
  for (const auto& l : grad.schema().layers()) {
    if (std::find(keep.begin(), keep.end(), &l) != keep.end()) continue;
    auto seg = out.segment(l);
    std::fill(seg.begin(), seg.end(), 0.0);
  }
  return out;
}

GradientMask topk_pattern(const ParamVector& values, double k_percent, std::span<const std::string> scope) {
  check_percent(k_percent, "top-k percent");
  if (scope.empty()) {
    if (k_percent > 0.0) throw ConfigError("top-k mask: empty scope with k > 0");
    return GradientMask{std::vector<bool>(values.size(), true)};
  }
  std::vector<std::size_t> index;
  for (const Layer* l : scoped_layers(scope, values.schema()))
    for (std::size_t i = 0; i < l->length; ++i) index.push_back(l->offset + i);
  const std::size_t count = mask_count(k_percent, index.size());
  return largest_magnitude_mask(values.values(), std::move(index), count);
}

ParamVector topk_mask(const ParamVector& grad, double k_percent, std::span<const std::string> scope) {
  ParamVector out = grad;
  topk_pattern(grad, k_percent, scope).apply(out);
  return out;
}

ParamVector pgd_project(const ParamVector& delta, double bound) {
  if (!(bound > 0.0)) throw ConfigError("pgd: bound must be positive");
  const double n = delta.norm();
  if (n <= bound || n == 0.0) return delta;
  ParamVector out = delta;
  out.scale(bound / n);
  // Rounding can leave the result an ulp outside the ball; pull it in so a
  // second projection is a no-op.
  while (out.norm() > bound) out.scale(1.0 - 0x1p-52);
  return out;
}

ParamVector neurotoxin_mask(const ParamVector& grad, const ParamVector& benign_direction, double mask_percent) {
  if (!grad.same_schema(benign_direction)) throw ProtocolError("neurotoxin: schema mismatch");
  check_percent(mask_percent, "neurotoxin mask percent");
  std::vector<std::size_t> index(grad.size());
  std::iota(index.begin(), index.end(), 0);
  const auto mask =
      largest_magnitude_mask(benign_direction.values(), std::move(index), mask_count(mask_percent, grad.size()));
  ParamVector out = grad;
  mask.apply(out);
  return out;
}

void transform_gradient(ParamVector& grad, const AttackPlan& plan, const GradientMask* neurotoxin) {
  switch (plan.kind) {
    case AttackKind::kNone:
    case AttackKind::kBaseline:
      return;
    case AttackKind::kNeurotoxin:
      if (!neurotoxin) throw ConfigError("neurotoxin attack requires a benign direction");
      neurotoxin->apply(grad);
      return;
    case AttackKind::kSdba:
      grad = layer_wise_mask(grad, plan.target_layers);
      if (plan.topk_per_layer.empty()) {
        topk_pattern(grad, plan.topk_percent, plan.target_layers).apply(grad);
      } else {
        // Each layer's threshold comes from its own coordinates only.
        for (const auto& [layer, k] : plan.topk_per_layer) {
          if (k <= 0.0) continue;
          topk_pattern(grad, k, std::span<const std::string>(&layer, 1)).apply(grad);
        }
      }
      return;
  }
}

ClientUpdate run_attack(const LanguageModel& model, const ParamVector& global, const AttackPlan& plan,
                        const AttackInput& input) {
  if (plan.kind == AttackKind::kNone) throw ConfigError("run_attack: attack kind is none");
  if (input.epochs == 0) throw ConfigError("run_attack: epochs must be at least 1");
  validate(plan, global.schema());

  // Neurotoxin's mask depends only on the benign direction, fixed for the round.
  std::optional<GradientMask> toxin;
  if (plan.kind == AttackKind::kNeurotoxin) {
    if (!input.benign_direction) throw ConfigError("neurotoxin attack requires a benign direction");
    std::vector<std::size_t> index(global.size());
    std::iota(index.begin(), index.end(), 0);
    toxin = largest_magnitude_mask(input.benign_direction->values(), std::move(index),
                                   mask_count(plan.neurotoxin_mask_percent, global.size()));
  }

  ParamVector local = global;
  std::size_t step = 0;
  for (std::size_t e = 0; e < input.epochs; ++e) {
    for (const Batch& batch : input.data) {
      auto [loss, grad] = model.loss_and_gradient(local, batch);
      if (!std::isfinite(loss)) throw TrainingDivergence(step);
      transform_gradient(grad, plan, toxin ? &*toxin : nullptr);
      sgd_step(local, grad, input.lr);
      if (plan.pgd_enabled && plan.pgd_per_step) local = global + pgd_project(local - global, plan.pgd_delta);
      ++step;
    }
  }
  ParamVector delta = local - global;
  if (plan.pgd_enabled) delta = pgd_project(delta, plan.pgd_delta);
  if (!delta.all_finite()) throw TrainingDivergence(step);
  return ClientUpdate{Update{input.client_id, std::move(delta), input.num_samples}, true};
}

}  // namespace sdba
