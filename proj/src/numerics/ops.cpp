#include "gct/numerics/ops.hpp"

#include "gct/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace gct {

namespace {

constexpr double kKlFloor = 1e-12;
constexpr double kRowSumTol = 1e-9;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_tape(Tensor a, Tensor b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

bool any_grad(Tensor a, Tensor b) { return a.requires_grad() || b.requires_grad(); }

void check_distribution_rows(const Matrix& p, const char* what) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (v < 0.0 || !std::isfinite(v))
        throw DomainError(std::string(what) + ": negative or non-finite entry at row " +
                          std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > kRowSumTol)
      throw DomainError(std::string(what) + ": row " + std::to_string(i) +
                        " does not sum to 1 (" + std::to_string(s) + ")");
  }
}

/// Fills log(p / max(q, floor)) where p > 0 (0 elsewhere) and returns the KL sum.
double kl_terms(const Matrix& p, const Matrix& q, Matrix& log_ratio) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw DimensionError("kl_divergence_rows: " + shape_str(p) + " vs " + shape_str(q));
  check_distribution_rows(p, "kl_divergence_rows(p)");
  check_distribution_rows(q, "kl_divergence_rows(q)");
  const auto pa = p.array();
  const Eigen::ArrayXXd lr = (pa / q.array().max(kKlFloor)).log();
  log_ratio = (pa > 0.0).select(lr, 0.0);
  return std::max((pa * log_ratio.array()).sum(), 0.0);
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  Matrix out = av * bv;
  const NodeId ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Tensor matmul_nt(Tensor a, Tensor b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: " + shape_str(av) + " x " + shape_str(bv) + "^T");
  Matrix out = av * bv.transpose();
  const NodeId ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

Tensor add(Tensor a, Tensor b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw DimensionError("add: " + shape_str(av) + " vs " + shape_str(bv));
  const NodeId ia = a.id(), ib = b.id();
  return a.tape()->record(av + bv, any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Tensor add_row(Tensor x, Tensor bias) {
  require_same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw DimensionError("add_row: " + shape_str(xv) + " + " + shape_str(bv));
  Matrix out = xv.rowwise() + bv.row(0);
  const NodeId ix = x.id(), ib = bias.id();
  return x.tape()->record(std::move(out), any_grad(x, bias), [ix, ib](Tape& t, const Matrix& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Tensor scale(Tensor x, double s) {
  const NodeId ix = x.id();
  return x.tape()->record(x.value() * s, x.requires_grad(),
                          [ix, s](Tape& t, const Matrix& g) { t.accumulate(ix, g * s); });
}

Tensor relu(Tensor x) {
  const NodeId ix = x.id();
  return x.tape()->record(x.value().cwiseMax(0.0), x.requires_grad(),
                          [ix](Tape& t, const Matrix& g) {
                            const Matrix& xv = t.value(ix);
                            t.accumulate(ix, (xv.array() > 0.0).select(g.array(), 0.0).matrix());
                          });
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), c = xv.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  Matrix xhat(n, c);
  RowVector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const NodeId ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return x.tape()->record(
      std::move(out), rg,
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                          const Matrix& g) {
        if (t.requires_grad(ig))
          t.accumulate(ig, (g.array() * xhat.array()).colwise().sum().matrix());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (!t.requires_grad(ix)) return;
        const auto gamma = t.value(ig).row(0).array();
        Matrix gx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const Eigen::ArrayXd gh = (g.row(i).array() * gamma).transpose();
          const Eigen::ArrayXd xh = xhat.row(i).array().transpose();
          const double mean_g = gh.mean();
          const double mean_gx = (gh * xh).mean();
          gx.row(i) = ((gh - mean_g - xh * mean_gx) * inv_std(i)).transpose();
        }
        t.accumulate(ix, gx);
      });
}

Tensor dropout(Tensor x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const Matrix& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  Matrix out = xv.cwiseProduct(mask);
  const NodeId ix = x.id();
  return x.tape()->record(std::move(out), x.requires_grad(),
                          [ix, mask = std::move(mask)](Tape& t, const Matrix& g) {
                            t.accumulate(ix, g.cwiseProduct(mask));
                          });
}

Tensor select_row(Tensor x, Eigen::Index row) {
  const Matrix& xv = x.value();
  if (row < 0 || row >= xv.rows())
    throw DimensionError("select_row: row " + std::to_string(row) + " of " + shape_str(xv));
  const NodeId ix = x.id();
  return x.tape()->record(xv.row(row), x.requires_grad(), [ix, row](Tape& t, const Matrix& g) {
    t.accumulate_block(ix, row, 0, g);
  });
}

Tensor sum_rows(Tensor x) {
  const NodeId ix = x.id();
  const Eigen::Index n = x.rows();
  return x.tape()->record(x.value().colwise().sum(), x.requires_grad(),
                          [ix, n](Tape& t, const Matrix& g) {
                            t.accumulate(ix, g.replicate(n, 1));
                          });
}

Tensor sum_all(Tensor x) {
  const NodeId ix = x.id();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Eigen::Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), x.requires_grad(),
                          [ix, r, c](Tape& t, const Matrix& g) {
                            t.accumulate(ix, Matrix::Constant(r, c, g(0, 0)));
                          });
}

Matrix masked_row_softmax(const Matrix& logits, const Matrix& mask) {
  if (logits.rows() != mask.rows() || logits.cols() != mask.cols())
    throw DimensionError("masked_row_softmax: logits " + shape_str(logits) + " vs mask " +
                         shape_str(mask));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto allowed = mask.array() > kMaskedThreshold;
  const Eigen::VectorXd mx = allowed.select(logits.array(), kNegInf).rowwise().maxCoeff();
  for (Eigen::Index i = 0; i < mx.size(); ++i)
    if (mx(i) == kNegInf)
      throw DegenerateRowError("masked_row_softmax: row " + std::to_string(i) +
                               " is fully masked");
  const Eigen::ArrayXXd ex = (logits.colwise() - mx).array().exp();
  Matrix out = allowed.select(ex, 0.0);
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

Tensor masked_row_softmax(Tensor logits, const Matrix& mask) {
  Matrix out = masked_row_softmax(logits.value(), mask);
  const NodeId il = logits.id();
  const NodeId self = static_cast<NodeId>(logits.tape()->size());
  return logits.tape()->record(std::move(out), logits.requires_grad(),
                               [il, self](Tape& t, const Matrix& g) {
                                 const Matrix& p = t.value(self);
                                 const Eigen::VectorXd dot = (g.cwiseProduct(p)).rowwise().sum();
                                 t.accumulate(il, p.cwiseProduct(g.colwise() - dot));
                               });
}

double kl_divergence_rows(const Matrix& p, const Matrix& q) {
  Matrix log_ratio;
  return kl_terms(p, q, log_ratio);
}

Tensor kl_divergence_rows(Tensor p, Tensor q) {
  require_same_tape(p, q);
  Matrix log_ratio;
  const double kl = kl_terms(p.value(), q.value(), log_ratio);
  Matrix out(1, 1);
  out(0, 0) = kl;
  const NodeId ip = p.id(), iq = q.id();
  return p.tape()->record(std::move(out), any_grad(p, q),
                          [ip, iq, lr = std::move(log_ratio)](Tape& t, const Matrix& g) {
    const Matrix& pv = t.value(ip);
    const Matrix& qv = t.value(iq);
    const double up = g(0, 0);
    if (t.requires_grad(ip)) {
      Matrix gp = (pv.array() > 0.0).select(up * (lr.array() + 1.0), 0.0);
      t.accumulate(ip, std::move(gp));
    }
    if (t.requires_grad(iq)) {
      const auto qa = qv.array();
      Matrix gq = (pv.array() > 0.0 && qa >= kKlFloor).select(-up * pv.array() / qa, 0.0);
      t.accumulate(iq, std::move(gq));
    }
  });
}

double row_entropy(const Matrix& p) {
  if (p.rows() == 0) return 0.0;
  check_distribution_rows(p, "row_entropy");
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p.data()[i];
    if (v > 0.0) h -= v * std::log(v);
  }
  return h / static_cast<double>(p.rows());
}

Tensor sigmoid_bce(Tensor logits, const Matrix& targets) {
  const Matrix& z = logits.value();
  if (z.rows() != targets.rows() || z.cols() != targets.cols())
    throw DimensionError("sigmoid_bce: logits " + shape_str(z) + " vs targets " +
                         shape_str(targets));
  const double n = static_cast<double>(z.size());
  const auto za = z.array();
  const auto ya = targets.array();
  const Eigen::ArrayXXd e = (-za.abs()).exp();
  // max(z,0) - z*y + log(1 + exp(-|z|))
  const double loss = (za.max(0.0) - za * ya + e.log1p()).sum();
  // d loss / d z
  Matrix dz = ((za >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)) - ya) / n;
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  const NodeId il = logits.id();
  return logits.tape()->record(std::move(out), logits.requires_grad(),
                               [il, dz = std::move(dz)](Tape& t, const Matrix& g) {
                                 t.accumulate(il, g(0, 0) * dz);
                               });
}

Tensor softmax_cross_entropy(Tensor logits, Eigen::Index target) {
  const Matrix& z = logits.value();
  if (z.rows() != 1) throw DimensionError("softmax_cross_entropy expects 1 x K logits");
  if (target < 0 || target >= z.cols())
    throw DimensionError("softmax_cross_entropy: target " + std::to_string(target) +
                         " outside " + std::to_string(z.cols()) + " classes");
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  Matrix out(1, 1);
  out(0, 0) = lse - z(0, target);
  const NodeId il = logits.id();
  return logits.tape()->record(std::move(out), logits.requires_grad(),
                               [il, target](Tape& t, const Matrix& g) {
                                 const Matrix& zv = t.value(il);
                                 const double m = zv.maxCoeff();
                                 Matrix p = (zv.array() - m).exp().matrix();
                                 p /= p.sum();
                                 p(0, target) -= 1.0;
                                 t.accumulate(il, p * g(0, 0));
                               });
}

Tensor embedding_lookup(Tape& tape, std::span<Parameter* const> tables,
                        std::span<const RowRef> rows) {
  if (tables.empty()) throw DimensionError("embedding_lookup: no tables");
  const Eigen::Index width = tables[0]->value.cols();
  for (Parameter* p : tables)
    if (p->value.cols() != width) throw DimensionError("embedding_lookup: table widths differ");
  Matrix out(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RowRef& r = rows[i];
    if (r.table >= tables.size() || r.row < 0 || r.row >= tables[r.table]->value.rows())
      throw DimensionError("embedding_lookup: row reference out of range");
    out.row(static_cast<Eigen::Index>(i)) = tables[r.table]->value.row(r.row);
  }
  std::vector<Parameter*> tabs(tables.begin(), tables.end());
  std::vector<RowRef> refs(rows.begin(), rows.end());
  return tape.record(std::move(out), true,
                     [tabs = std::move(tabs), refs = std::move(refs)](Tape&, const Matrix& g) {
                       for (std::size_t i = 0; i < refs.size(); ++i)
                         tabs[refs[i].table]->grad.row(refs[i].row) +=
                             g.row(static_cast<Eigen::Index>(i));
                     });
}

Tensor mlp_block(Tensor x, std::span<const DenseLayer> layers, double dropout_rate, bool train,
                 Rng& rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw DomainError("mlp_block: dropout rate must be in [0, 1)");
  Tape& tape = *x.tape();
  Tensor h = x;
  for (const DenseLayer& layer : layers) {
    if (layer.weight->value.rows() != h.cols())
      throw DimensionError("mlp_block: layer " + layer.weight->name + " expects width " +
                           std::to_string(layer.weight->value.rows()) + ", got " +
                           std::to_string(h.cols()));
    Tensor y = add_row(matmul(h, tape.param(*layer.weight)), tape.param(*layer.bias));
    y = layer_norm(y, tape.param(*layer.ln_gain), tape.param(*layer.ln_bias));
    y = relu(y);
    y = dropout(y, dropout_rate, rng, train);
    if (y.cols() == h.cols()) y = add(y, h);
    h = y;
  }
  return h;
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return m;
}

DenseLayer make_dense_layer(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                            Eigen::Index out, Rng& rng) {
  DenseLayer l;
  l.weight = &store.add(prefix + ".w", glorot_uniform(in, out, rng));
  l.bias = &store.add(prefix + ".b", Matrix::Zero(1, out));
  l.ln_gain = &store.add(prefix + ".ln_gain", Matrix::Ones(1, out));
  l.ln_bias = &store.add(prefix + ".ln_bias", Matrix::Zero(1, out));
  return l;
}

}  // namespace gct
