#include "sdba/model.hpp"

#include <cmath>
#include <random>

#include "model_impl.hpp"
#include "sdba/errors.hpp"
#include "sdba/rng.hpp"

namespace sdba {

std::string to_string(ModelKind kind) { return kind == ModelKind::kLstm ? "lstm" : "transformer"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "lstm") return ModelKind::kLstm;
  if (text == "transformer") return ModelKind::kTransformer;
  throw ConfigError("unknown model kind '" + text + "'");
}

void validate(const ModelConfig& config) {
  if (config.vocab_size < 2) throw ConfigError("model: vocab_size must be at least 2");
  if (config.hidden_dim == 0) throw ConfigError("model: hidden_dim must be positive");
  if (config.seq_len == 0) throw ConfigError("model: seq_len must be positive");
  if (config.kind == ModelKind::kTransformer && config.num_blocks == 0)
    throw ConfigError("model: num_blocks must be positive for a transformer");
}

Batch Batch::from_sequences(const std::vector<std::vector<TokenId>>& sequences) {
  Batch b;
  if (sequences.empty()) return b;
  const std::size_t len = sequences.front().size();
  if (len < 2) throw DataError("batch: sequences need at least two tokens");
  b.rows = sequences.size();
  b.seq_len = len - 1;
  b.tokens.reserve(b.rows * b.seq_len);
  b.targets.reserve(b.rows * b.seq_len);
  for (const auto& s : sequences) {
    if (s.size() != len) throw DataError("batch: ragged sequences");
    b.tokens.insert(b.tokens.end(), s.begin(), s.end() - 1);
    b.targets.insert(b.targets.end(), s.begin() + 1, s.end());
  }
  return b;
}

std::vector<TokenId> Batch::sequence(std::size_t r) const {
  std::vector<TokenId> s(tokens.begin() + static_cast<std::ptrdiff_t>(r * seq_len),
                         tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq_len));
  s.push_back(targets[(r + 1) * seq_len - 1]);
  return s;
}

void validate(const Batch& batch, std::size_t vocab_size) {
  if (batch.rows == 0 || batch.seq_len == 0) throw DataError("batch: empty");
  if (batch.tokens.size() != batch.rows * batch.seq_len || batch.targets.size() != batch.tokens.size())
    throw DataError("batch: shape mismatch");
  const auto bad = [&](TokenId id) { return id < 0 || static_cast<std::size_t>(id) >= vocab_size; };
  for (std::size_t i = 0; i < batch.tokens.size(); ++i)
    if (bad(batch.tokens[i]) || bad(batch.targets[i]))
      throw DataError("batch: token id out of vocabulary at index " + std::to_string(i));
}

ParamVector LanguageModel::init() const {
  ParamVector p(schema_);
  const double a = 1.0 / std::sqrt(static_cast<double>(config_.hidden_dim));
  auto rng = make_rng({config_.seed, tag(Stream::kInit)});
  std::uniform_real_distribution<double> dist(-a, a);
  for (double& v : p.values()) v = dist(rng);
  return p;
}

void LanguageModel::check(const ParamVector& params, const Batch& batch) const {
  if (params.size() != schema_->size() || !(params.schema() == *schema_))
    throw ProtocolError("parameters do not match the model schema");
  validate(batch, config_.vocab_size);
  if (batch.seq_len > config_.seq_len)
    throw DataError("batch: sequence length " + std::to_string(batch.seq_len) + " exceeds model context " +
                    std::to_string(config_.seq_len));
}

double LanguageModel::loss(const ParamVector& params, const Batch& batch) const {
  check(params, batch);
  return loss_grad_impl(params, batch, nullptr);
}

LossAndGradient LanguageModel::loss_and_gradient(const ParamVector& params, const Batch& batch) const {
  check(params, batch);
  LossAndGradient out{0.0, ParamVector(params.schema_ptr())};
  out.loss = loss_grad_impl(params, batch, &out.gradient);
  return out;
}

std::vector<TokenId> LanguageModel::predict(const ParamVector& params, const Batch& batch, bool last_only) const {
  check(params, batch);
  AlignedDoubles lg;
  logits(params, batch, last_only, lg);
  const std::size_t v = config_.vocab_size;
  const std::size_t n = lg.size() / v;
  std::vector<TokenId> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = lg.data() + r * v;
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<TokenId>(best);
  }
  return out;
}

SchemaPtr make_schema(const ModelConfig& config) {
  validate(config);
  return config.kind == ModelKind::kLstm ? detail::lstm_schema(config) : detail::transformer_schema(config);
}

std::unique_ptr<LanguageModel> make_model(const ModelConfig& config) {
  validate(config);
  if (config.kind == ModelKind::kLstm) return std::make_unique<detail::LstmModel>(config);
  return std::make_unique<detail::TransformerModel>(config);
}

ParamVector init_model(const ModelConfig& config) { return make_model(config)->init(); }

double forward_loss(const LanguageModel& model, const ParamVector& params, const Batch& batch) {
  return model.loss(params, batch);
}

ParamVector backward(const LanguageModel& model, const ParamVector& params, const Batch& batch) {
  return model.gradient(params, batch);
}

void sgd_step(ParamVector& params, const ParamVector& grad, double lr) {
  if (!params.same_schema(grad)) throw ProtocolError("sgd_step: schema mismatch");
  auto p = params.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

ParamVector sgd_epochs(const LanguageModel& model, const ParamVector& params, std::span<const Batch> data,
                       double lr, std::size_t epochs) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("sgd: learning rate must be finite and non-negative");
  if (epochs == 0) throw ConfigError("sgd: epochs must be at least 1");
  ParamVector local = params;
  std::size_t step = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const Batch& batch : data) {
      auto [loss, grad] = model.loss_and_gradient(local, batch);
      if (!std::isfinite(loss)) throw TrainingDivergence(step);
      sgd_step(local, grad, lr);
      ++step;
    }
  }
  if (!local.all_finite()) throw TrainingDivergence(step);
  return local;
}

}  // namespace sdba
