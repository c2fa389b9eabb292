// Decoder-only pre-norm transformer with one attention head and learned
// positional embeddings. Linear weights are stored [in, out] followed by the
// out-sized bias, as in GPT-2's Conv1D, and segment names follow GPT-2.

#include <cmath>
#include <numbers>
#include <string>

#include "model_impl.hpp"

namespace sdba::detail {

namespace {

constexpr double kLayerNormEps = 1e-5;

struct Linear {
  const Layer* layer;
  Eigen::Index in, out;

  ConstMatMap w(const ParamVector& p) const { return view(p, *layer, 0, in, out); }
  ConstVecMap b(const ParamVector& p) const { return vec(p, *layer, static_cast<std::size_t>(in * out), out); }
  MatMap w(ParamVector& p) const { return view(p, *layer, 0, in, out); }
  VecMap b(ParamVector& p) const { return vec(p, *layer, static_cast<std::size_t>(in * out), out); }
};

struct Norm {
  const Layer* layer;
  Eigen::Index dim;

  ConstVecMap gain(const ParamVector& p) const { return vec(p, *layer, 0, dim); }
  ConstVecMap shift(const ParamVector& p) const { return vec(p, *layer, static_cast<std::size_t>(dim), dim); }
  VecMap gain(ParamVector& p) const { return vec(p, *layer, 0, dim); }
  VecMap shift(ParamVector& p) const { return vec(p, *layer, static_cast<std::size_t>(dim), dim); }
};

struct Block {
  Norm ln_1;
  Linear c_attn, attn_proj;
  Norm ln_2;
  Linear c_fc, mlp_proj;
};

struct Net {
  Eigen::Index v, d, ctx;
  const Layer* wte;
  const Layer* wpe;
  std::vector<Block> blocks;
  Norm ln_f;
  Linear head;
};

Net bind(const LayerSchema& s, const ModelConfig& c) {
  const auto v = static_cast<Eigen::Index>(c.vocab_size);
  const auto d = static_cast<Eigen::Index>(c.hidden_dim);
  Net n{v, d, static_cast<Eigen::Index>(c.seq_len), &s.layer("wte"), &s.layer("wpe"), {}, {}, {}};
  for (std::size_t i = 0; i < c.num_blocks; ++i) {
    const std::string pre = "h" + std::to_string(i) + ".";
    n.blocks.push_back(Block{
        Norm{&s.layer(pre + "ln_1"), d},
        Linear{&s.layer(pre + "attn.c_attn"), d, 3 * d},
        Linear{&s.layer(pre + "attn.c_proj"), d, d},
        Norm{&s.layer(pre + "ln_2"), d},
        Linear{&s.layer(pre + "mlp.c_fc"), d, 4 * d},
        Linear{&s.layer(pre + "mlp.c_proj"), 4 * d, d},
    });
  }
  n.ln_f = Norm{&s.layer("ln_f"), d};
  n.head = Linear{&s.layer("lm_head"), d, v};
  return n;
}

struct NormCache {
  RowMat xhat;
  Eigen::VectorXd rstd;
};

RowMat layer_norm(const RowMat& x, const Norm& norm, const ParamVector& p, NormCache& cache) {
  const Eigen::Index t = x.rows(), d = x.cols();
  cache.xhat.resize(t, d);
  cache.rstd.resize(t);
  for (Eigen::Index r = 0; r < t; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    cache.rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.row(r) = (x.row(r).array() - mean) * cache.rstd(r);
  }
  RowMat y = cache.xhat.array().rowwise() * norm.gain(p).array();
  y.rowwise() += norm.shift(p);
  return y;
}

// Accumulates parameter gradients and returns dL/dx.
RowMat layer_norm_backward(const RowMat& dy, const Norm& norm, const ParamVector& p, const NormCache& cache,
                           ParamVector& g) {
  norm.gain(g) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  norm.shift(g) += dy.colwise().sum();
  const RowMat dxhat = dy.array().rowwise() * norm.gain(p).array();
  RowMat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
  }
  return dx;
}

RowMat affine(const RowMat& x, const Linear& lin, const ParamVector& p) {
  RowMat y = x * lin.w(p);
  y.rowwise() += lin.b(p);
  return y;
}

RowMat affine_backward(const RowMat& dy, const RowMat& x, const Linear& lin, const ParamVector& p, ParamVector& g) {
  lin.w(g).noalias() += x.transpose() * dy;
  lin.b(g) += dy.colwise().sum();
  return dy * lin.w(p).transpose();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct BlockCache {
  RowMat x_in, n1, qkv, probs, att, x_mid, n2, fc, act;
  NormCache ln1, ln2;
};

struct SequenceCache {
  std::vector<BlockCache> blocks;
  RowMat nf;
  NormCache lnf;
};

// Forward pass for one sequence; returns logits [T, V].
RowMat forward_sequence(const Net& net, const ParamVector& p, const Batch& batch, std::size_t row,
                        SequenceCache& cache) {
  const auto t_len = static_cast<Eigen::Index>(batch.seq_len);
  const auto wte = view(p, *net.wte, 0, net.v, net.d);
  const auto wpe = view(p, *net.wpe, 0, net.ctx, net.d);
  RowMat x(t_len, net.d);
  for (Eigen::Index t = 0; t < t_len; ++t)
    x.row(t) = wte.row(batch.token(row, static_cast<std::size_t>(t))) + wpe.row(t);

  const double scale = 1.0 / std::sqrt(static_cast<double>(net.d));
  cache.blocks.resize(net.blocks.size());
  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    const Block& blk = net.blocks[bi];
    BlockCache& c = cache.blocks[bi];
    c.x_in = x;
    c.n1 = layer_norm(x, blk.ln_1, p, c.ln1);
    c.qkv = affine(c.n1, blk.c_attn, p);
    const auto q = c.qkv.leftCols(net.d);
    const auto k = c.qkv.middleCols(net.d, net.d);
    const auto v = c.qkv.rightCols(net.d);
    c.probs = (q * k.transpose()) * scale;
    for (Eigen::Index r = 0; r < t_len; ++r) {
      const double mx = c.probs.row(r).head(r + 1).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index j = 0; j <= r; ++j) {
        c.probs(r, j) = std::exp(c.probs(r, j) - mx);
        sum += c.probs(r, j);
      }
      for (Eigen::Index j = 0; j <= r; ++j) c.probs(r, j) /= sum;
      for (Eigen::Index j = r + 1; j < t_len; ++j) c.probs(r, j) = 0.0;
    }
    c.att = c.probs * v;
    c.x_mid = x + affine(c.att, blk.attn_proj, p);
    c.n2 = layer_norm(c.x_mid, blk.ln_2, p, c.ln2);
    c.fc = affine(c.n2, blk.c_fc, p);
    c.act = c.fc.unaryExpr([](double z) { return gelu(z); });
    x = c.x_mid + affine(c.act, blk.mlp_proj, p);
  }
  cache.nf = layer_norm(x, net.ln_f, p, cache.lnf);
  return affine(cache.nf, net.head, p);
}

void backward_sequence(const Net& net, const ParamVector& p, const Batch& batch, std::size_t row,
                       const SequenceCache& cache, const RowMat& dlogits, ParamVector& g) {
  const auto t_len = static_cast<Eigen::Index>(batch.seq_len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(net.d));
  RowMat dx = layer_norm_backward(affine_backward(dlogits, cache.nf, net.head, p, g), net.ln_f, p, cache.lnf, g);

  for (std::size_t bi = net.blocks.size(); bi-- > 0;) {
    const Block& blk = net.blocks[bi];
    const BlockCache& c = cache.blocks[bi];
    RowMat dact = affine_backward(dx, c.act, blk.mlp_proj, p, g);
    for (Eigen::Index i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(c.fc.data()[i]);
    const RowMat dn2 = affine_backward(dact, c.n2, blk.c_fc, p, g);
    const RowMat dx_mid = dx + layer_norm_backward(dn2, blk.ln_2, p, c.ln2, g);

    const RowMat datt = affine_backward(dx_mid, c.att, blk.attn_proj, p, g);
    const auto q = c.qkv.leftCols(net.d);
    const auto k = c.qkv.middleCols(net.d, net.d);
    const auto v = c.qkv.rightCols(net.d);
    const RowMat dprobs = datt * v.transpose();
    RowMat dqkv(t_len, 3 * net.d);
    dqkv.rightCols(net.d).noalias() = c.probs.transpose() * datt;
    RowMat dscores = RowMat::Zero(t_len, t_len);
    for (Eigen::Index r = 0; r < t_len; ++r) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j <= r; ++j) dot += dprobs(r, j) * c.probs(r, j);
      for (Eigen::Index j = 0; j <= r; ++j) dscores(r, j) = c.probs(r, j) * (dprobs(r, j) - dot) * scale;
    }
    dqkv.leftCols(net.d).noalias() = dscores * k;
    dqkv.middleCols(net.d, net.d).noalias() = dscores.transpose() * q;
    const RowMat dn1 = affine_backward(dqkv, c.n1, blk.c_attn, p, g);
    dx = dx_mid + layer_norm_backward(dn1, blk.ln_1, p, c.ln1, g);
  }

  auto dwte = view(g, *net.wte, 0, net.v, net.d);
  auto dwpe = view(g, *net.wpe, 0, net.ctx, net.d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    dwte.row(batch.token(row, static_cast<std::size_t>(t))) += dx.row(t);
    dwpe.row(t) += dx.row(t);
  }
}

}  // namespace

SchemaPtr transformer_schema(const ModelConfig& c) {
  const std::size_t v = c.vocab_size, d = c.hidden_dim;
  std::vector<std::pair<std::string, std::size_t>> layers{{"wte", v * d}, {"wpe", c.seq_len * d}};
  for (std::size_t i = 0; i < c.num_blocks; ++i) {
    const std::string pre = "h" + std::to_string(i) + ".";
    layers.emplace_back(pre + "ln_1", 2 * d);
    layers.emplace_back(pre + "attn.c_attn", d * 3 * d + 3 * d);
    layers.emplace_back(pre + "attn.c_proj", d * d + d);
    layers.emplace_back(pre + "ln_2", 2 * d);
    layers.emplace_back(pre + "mlp.c_fc", d * 4 * d + 4 * d);
    layers.emplace_back(pre + "mlp.c_proj", 4 * d * d + d);
  }
  layers.emplace_back("ln_f", 2 * d);
  layers.emplace_back("lm_head", d * v + v);
  return std::make_shared<const LayerSchema>(std::move(layers));
}

TransformerModel::TransformerModel(const ModelConfig& config) : LanguageModel(config, transformer_schema(config)) {}

ParamVector TransformerModel::init() const {
  // Uniform everywhere except layer norms, which start as the identity
  // (unit gain, zero shift).
  ParamVector p = LanguageModel::init();
  for (const auto& l : p.schema().layers()) {
    if (l.name == "ln_f" || l.name.ends_with(".ln_1") || l.name.ends_with(".ln_2")) {
      auto seg = p.segment(l);
      const std::size_t d = seg.size() / 2;
      for (std::size_t i = 0; i < d; ++i) {
        seg[i] = 1.0;
        seg[d + i] = 0.0;
      }
    }
  }
  return p;
}

void TransformerModel::logits(const ParamVector& p, const Batch& batch, bool last_only,
                              AlignedDoubles& out) const {
  const Net net = bind(p.schema(), config());
  const std::size_t steps = last_only ? 1 : batch.seq_len;
  out.assign(batch.rows * steps * config().vocab_size, 0.0);
  MatMap o(out.data(), static_cast<Eigen::Index>(batch.rows * steps), net.v);
  SequenceCache cache;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const RowMat lg = forward_sequence(net, p, batch, r, cache);
    if (last_only)
      o.row(static_cast<Eigen::Index>(r)) = lg.bottomRows(1);
    else
      o.middleRows(static_cast<Eigen::Index>(r * steps), static_cast<Eigen::Index>(steps)) = lg;
  }
}

double TransformerModel::loss_grad_impl(const ParamVector& p, const Batch& batch, ParamVector* grad) const {
  const Net net = bind(p.schema(), config());
  const double n = static_cast<double>(batch.rows * batch.seq_len);
  SequenceCache cache;
  double total = 0.0;
  RowMat dlg;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const RowMat lg = forward_sequence(net, p, batch, r, cache);
    const double mean = softmax_cross_entropy(
        lg, [&](Eigen::Index t) { return static_cast<Eigen::Index>(batch.target(r, static_cast<std::size_t>(t))); },
        grad ? &dlg : nullptr);
    total += mean * static_cast<double>(batch.seq_len);
    if (grad) {
      dlg *= static_cast<double>(batch.seq_len) / n;
      backward_sequence(net, p, batch, r, cache, dlg, *grad);
    }
  }
  return total / n;
}

}  // namespace sdba::detail
