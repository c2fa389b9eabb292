#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdba/params.hpp"

namespace sdba {

enum class ModelKind { kLstm, kTransformer };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct ModelConfig {
  ModelKind kind = ModelKind::kLstm;
  std::size_t vocab_size = 200;
  std::size_t hidden_dim = 64;
  std::size_t num_blocks = 1;  // transformer only
  std::size_t seq_len = 16;    // maximum context length
  std::uint64_t seed = 1;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError on non-positive dimensions.
void validate(const ModelConfig& config);

using TokenId = std::int32_t;

/// Row-major [rows, seq_len] token and next-token target matrices.
struct Batch {
  std::size_t rows = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<TokenId> targets;

  TokenId token(std::size_t r, std::size_t t) const { return tokens[r * seq_len + t]; }
  TokenId target(std::size_t r, std::size_t t) const { return targets[r * seq_len + t]; }

  /// Builds a batch from raw sequences of length seq_len + 1; targets are the
  /// inputs shifted left by one.
  static Batch from_sequences(const std::vector<std::vector<TokenId>>& sequences);
  /// Inverse of from_sequences.
  std::vector<TokenId> sequence(std::size_t r) const;

  bool operator==(const Batch&) const = default;
};

/// Throws DataError on ids outside [0, vocab) or inconsistent shapes.
void validate(const Batch& batch, std::size_t vocab_size);

struct LossAndGradient {
  double loss = 0.0;
  ParamVector gradient;
};

/// A small next-token language model over a flat, layer-named parameter
/// vector. Implementations are stateless; every method is a pure function of
/// its arguments.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  const ModelConfig& config() const noexcept { return config_; }
  const SchemaPtr& schema() const noexcept { return schema_; }

  /// Uniform(-a, a) with a = 1/sqrt(hidden_dim), seeded by config().seed.
  virtual ParamVector init() const;

  /// Mean token-level cross-entropy.
  double loss(const ParamVector& params, const Batch& batch) const;
  LossAndGradient loss_and_gradient(const ParamVector& params, const Batch& batch) const;
  ParamVector gradient(const ParamVector& params, const Batch& batch) const {
    return loss_and_gradient(params, batch).gradient;
  }

  /// Argmax next-token predictions, row-major [rows, seq_len]. With last_only,
  /// one prediction per row for the final position.
  std::vector<TokenId> predict(const ParamVector& params, const Batch& batch, bool last_only) const;

 protected:
  LanguageModel(ModelConfig config, SchemaPtr schema) : config_(config), schema_(std::move(schema)) {}

  /// Writes row-major logits [rows * seq_len, vocab] (or [rows, vocab] when
  /// last_only).
  virtual void logits(const ParamVector& params, const Batch& batch, bool last_only,
                      AlignedDoubles& out) const = 0;
  virtual double loss_grad_impl(const ParamVector& params, const Batch& batch, ParamVector* grad) const = 0;

 private:
  void check(const ParamVector& params, const Batch& batch) const;

  ModelConfig config_;
  SchemaPtr schema_;
};

std::unique_ptr<LanguageModel> make_model(const ModelConfig& config);
SchemaPtr make_schema(const ModelConfig& config);

ParamVector init_model(const ModelConfig& config);
double forward_loss(const LanguageModel& model, const ParamVector& params, const Batch& batch);
ParamVector backward(const LanguageModel& model, const ParamVector& params, const Batch& batch);

/// params -= lr * grad, coordinate-wise.
void sgd_step(ParamVector& params, const ParamVector& grad, double lr);

/// Plain SGD: one step per batch, batches visited in the given order each
/// epoch. Returns the trained copy. Throws TrainingDivergence with the
/// zero-based step index on a non-finite loss.
ParamVector sgd_epochs(const LanguageModel& model, const ParamVector& params, std::span<const Batch> data,
                       double lr, std::size_t epochs);

}  // namespace sdba
