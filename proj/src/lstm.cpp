// Single-layer LSTM language model.
//
// Segments: encoder [V, H] embedding table; ih [4H, H] input weights followed
// by the 4H gate bias; hh [4H, H] recurrent weights; decoder [V, H] output
// projection followed by the V output bias. Gate order is i, f, g, o.

#include <cmath>

#include "model_impl.hpp"

namespace sdba::detail {

namespace {

struct Dims {
  Eigen::Index v, h, b, t;
};

struct Layers {
  const Layer& encoder;
  const Layer& ih;
  const Layer& hh;
  const Layer& decoder;
};

Layers layers_of(const LayerSchema& s) {
  return {s.layer("encoder"), s.layer("ih"), s.layer("hh"), s.layer("decoder")};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Activations for all time steps; row t*B + b holds sequence b at step t.
struct Trace {
  RowMat x;      // [TB, H] embeddings
  RowMat gates;  // [TB, 4H] activated i, f, g, o
  RowMat c;      // [TB, H]
  RowMat tanh_c; // [TB, H]
  RowMat h;      // [TB, H]
};

void run_forward(const ParamVector& p, const Layers& L, const Batch& batch, const Dims& d, Trace& tr) {
  const auto enc = view(p, L.encoder, 0, d.v, d.h);
  const auto wih = view(p, L.ih, 0, 4 * d.h, d.h);
  const auto bias = vec(p, L.ih, static_cast<std::size_t>(4 * d.h * d.h), 4 * d.h);
  const auto whh = view(p, L.hh, 0, 4 * d.h, d.h);
  const Eigen::Index tb = d.t * d.b;

  tr.x.resize(tb, d.h);
  for (Eigen::Index t = 0; t < d.t; ++t)
    for (Eigen::Index r = 0; r < d.b; ++r)
      tr.x.row(t * d.b + r) = enc.row(batch.token(static_cast<std::size_t>(r), static_cast<std::size_t>(t)));

  tr.gates.noalias() = tr.x * wih.transpose();
  tr.gates.rowwise() += bias;
  tr.c.resize(tb, d.h);
  tr.tanh_c.resize(tb, d.h);
  tr.h.resize(tb, d.h);

  RowMat pre(d.b, 4 * d.h);
  for (Eigen::Index t = 0; t < d.t; ++t) {
    auto a = tr.gates.middleRows(t * d.b, d.b);
    if (t > 0) a.noalias() += tr.h.middleRows((t - 1) * d.b, d.b) * whh.transpose();
    for (Eigen::Index r = 0; r < d.b; ++r) {
      for (Eigen::Index k = 0; k < d.h; ++k) {
        const double i = sigmoid(a(r, k));
        const double f = sigmoid(a(r, d.h + k));
        const double g = std::tanh(a(r, 2 * d.h + k));
        const double o = sigmoid(a(r, 3 * d.h + k));
        a(r, k) = i;
        a(r, d.h + k) = f;
        a(r, 2 * d.h + k) = g;
        a(r, 3 * d.h + k) = o;
        const double c_prev = t > 0 ? tr.c((t - 1) * d.b + r, k) : 0.0;
        const double c = f * c_prev + i * g;
        const double tc = std::tanh(c);
        tr.c(t * d.b + r, k) = c;
        tr.tanh_c(t * d.b + r, k) = tc;
        tr.h(t * d.b + r, k) = o * tc;
      }
    }
  }
}

}  // namespace

SchemaPtr lstm_schema(const ModelConfig& c) {
  const std::size_t v = c.vocab_size, h = c.hidden_dim;
  return std::make_shared<const LayerSchema>(std::vector<std::pair<std::string, std::size_t>>{
      {"encoder", v * h},
      {"ih", 4 * h * h + 4 * h},
      {"hh", 4 * h * h},
      {"decoder", v * h + v},
  });
}

LstmModel::LstmModel(const ModelConfig& config) : LanguageModel(config, lstm_schema(config)) {}

void LstmModel::logits(const ParamVector& p, const Batch& batch, bool last_only, AlignedDoubles& out) const {
  const Layers L = layers_of(p.schema());
  const Dims d{static_cast<Eigen::Index>(config().vocab_size), static_cast<Eigen::Index>(config().hidden_dim),
               static_cast<Eigen::Index>(batch.rows), static_cast<Eigen::Index>(batch.seq_len)};
  Trace tr;
  run_forward(p, L, batch, d, tr);
  const auto wd = view(p, L.decoder, 0, d.v, d.h);
  const auto bd = vec(p, L.decoder, static_cast<std::size_t>(d.v * d.h), d.v);

  // Output rows are ordered sequence-major (row r, step t) to match Batch.
  const Eigen::Index steps = last_only ? 1 : d.t;
  out.assign(static_cast<std::size_t>(d.b * steps * d.v), 0.0);
  MatMap o(out.data(), d.b * steps, d.v);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = last_only ? d.t - 1 : s;
    RowMat lg = tr.h.middleRows(t * d.b, d.b) * wd.transpose();
    lg.rowwise() += bd;
    for (Eigen::Index r = 0; r < d.b; ++r) o.row(r * steps + s) = lg.row(r);
  }
}

double LstmModel::loss_grad_impl(const ParamVector& p, const Batch& batch, ParamVector* grad) const {
  const Layers L = layers_of(p.schema());
  const Dims d{static_cast<Eigen::Index>(config().vocab_size), static_cast<Eigen::Index>(config().hidden_dim),
               static_cast<Eigen::Index>(batch.rows), static_cast<Eigen::Index>(batch.seq_len)};
  Trace tr;
  run_forward(p, L, batch, d, tr);
  const auto wd = view(p, L.decoder, 0, d.v, d.h);
  const auto bd = vec(p, L.decoder, static_cast<std::size_t>(d.v * d.h), d.v);

  RowMat lg = tr.h * wd.transpose();
  lg.rowwise() += bd;
  const auto target_of = [&](Eigen::Index row) {
    const auto t = static_cast<std::size_t>(row / d.b), r = static_cast<std::size_t>(row % d.b);
    return static_cast<Eigen::Index>(batch.target(r, t));
  };
  RowMat dlg;
  const double loss = softmax_cross_entropy(lg, target_of, grad ? &dlg : nullptr);
  if (!grad) return loss;

  ParamVector& g = *grad;
  const auto wih = view(p, L.ih, 0, 4 * d.h, d.h);
  const auto whh = view(p, L.hh, 0, 4 * d.h, d.h);

  view(g, L.decoder, 0, d.v, d.h).noalias() = dlg.transpose() * tr.h;
  vec(g, L.decoder, static_cast<std::size_t>(d.v * d.h), d.v) = dlg.colwise().sum();
  RowMat dh_out = dlg * wd;  // [TB, H]

  const Eigen::Index tb = d.t * d.b;
  RowMat da(tb, 4 * d.h);
  RowMat dh_next = RowMat::Zero(d.b, d.h);
  RowMat dc_next = RowMat::Zero(d.b, d.h);
  for (Eigen::Index t = d.t - 1; t >= 0; --t) {
    for (Eigen::Index r = 0; r < d.b; ++r) {
      const Eigen::Index row = t * d.b + r;
      for (Eigen::Index k = 0; k < d.h; ++k) {
        const double i = tr.gates(row, k);
        const double f = tr.gates(row, d.h + k);
        const double gg = tr.gates(row, 2 * d.h + k);
        const double o = tr.gates(row, 3 * d.h + k);
        const double tc = tr.tanh_c(row, k);
        const double c_prev = t > 0 ? tr.c(row - d.b, k) : 0.0;
        const double dh = dh_out(row, k) + dh_next(r, k);
        const double dc = dh * o * (1.0 - tc * tc) + dc_next(r, k);
        da(row, k) = dc * gg * i * (1.0 - i);
        da(row, d.h + k) = dc * c_prev * f * (1.0 - f);
        da(row, 2 * d.h + k) = dc * i * (1.0 - gg * gg);
        da(row, 3 * d.h + k) = dh * tc * o * (1.0 - o);
        dc_next(r, k) = dc * f;
      }
    }
    if (t > 0) dh_next.noalias() = da.middleRows(t * d.b, d.b) * whh;
  }

  view(g, L.ih, 0, 4 * d.h, d.h).noalias() = da.transpose() * tr.x;
  vec(g, L.ih, static_cast<std::size_t>(4 * d.h * d.h), 4 * d.h) = da.colwise().sum();
  if (d.t > 1)
    view(g, L.hh, 0, 4 * d.h, d.h).noalias() =
        da.bottomRows(tb - d.b).transpose() * tr.h.topRows(tb - d.b);

  RowMat dx = da * wih;
  auto denc = view(g, L.encoder, 0, d.v, d.h);
  for (Eigen::Index t = 0; t < d.t; ++t)
    for (Eigen::Index r = 0; r < d.b; ++r)
      denc.row(batch.token(static_cast<std::size_t>(r), static_cast<std::size_t>(t))) += dx.row(t * d.b + r);
  return loss;
}

}  // namespace sdba::detail
