#pragma once

#include <Eigen/Core>

#include "sdba/model.hpp"

namespace sdba::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<RowVec>;
using ConstVecMap = Eigen::Map<const RowVec>;

inline ConstMatMap view(const ParamVector& p, const Layer& l, std::size_t offset, Eigen::Index rows,
                        Eigen::Index cols) {
  return ConstMatMap(p.data() + l.offset + offset, rows, cols);
}
inline MatMap view(ParamVector& p, const Layer& l, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  return MatMap(p.data() + l.offset + offset, rows, cols);
}
inline ConstVecMap vec(const ParamVector& p, const Layer& l, std::size_t offset, Eigen::Index n) {
  return ConstVecMap(p.data() + l.offset + offset, n);
}
inline VecMap vec(ParamVector& p, const Layer& l, std::size_t offset, Eigen::Index n) {
  return VecMap(p.data() + l.offset + offset, n);
}

/// Mean cross-entropy over logits rows; when dlogits is non-null it receives
/// (softmax - onehot) / rows. `target_of(row)` maps a logits row to its label.
template <typename TargetOf>
double softmax_cross_entropy(const RowMat& logits, TargetOf target_of, RowMat* dlogits) {
  const Eigen::Index n = logits.rows();
  double total = 0.0;
  if (dlogits) dlogits->resize(n, logits.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double sum = (logits.row(r).array() - mx).exp().sum();
    const double lse = mx + std::log(sum);
    const auto y = target_of(r);
    total += lse - logits(r, y);
    if (dlogits) {
      dlogits->row(r) = ((logits.row(r).array() - lse).exp() / static_cast<double>(n)).matrix();
      (*dlogits)(r, y) -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

class LstmModel final : public LanguageModel {
 public:
  explicit LstmModel(const ModelConfig& config);

 protected:
  void logits(const ParamVector& params, const Batch& batch, bool last_only, AlignedDoubles& out) const override;
  double loss_grad_impl(const ParamVector& params, const Batch& batch, ParamVector* grad) const override;
};

class TransformerModel final : public LanguageModel {
 public:
  explicit TransformerModel(const ModelConfig& config);
  ParamVector init() const override;

 protected:
  void logits(const ParamVector& params, const Batch& batch, bool last_only, AlignedDoubles& out) const override;
  double loss_grad_impl(const ParamVector& params, const Batch& batch, ParamVector* grad) const override;
};

SchemaPtr lstm_schema(const ModelConfig& config);
SchemaPtr transformer_schema(const ModelConfig& config);

}  // namespace sdba::detail
