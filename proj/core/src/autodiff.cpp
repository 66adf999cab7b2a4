#include "imbal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "imbal/errors.hpp"

namespace imbal::ad {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.value().size() != 1) throw ShapeError("backward needs a scalar output");
  grad(out.id)(0, 0) = 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.has_grad) continue;
    if (n.param) {
      if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols())
        n.param->zero_grad();
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Matrix v = a.value() * b.value();
  return t.record(std::move(v), any_grad({a, b}), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.grad(a.id).noalias() += g * tp.value(b.id).transpose();
    if (tp.needs_grad(b.id)) tp.grad(b.id).noalias() += tp.value(a.id).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), any_grad({a, b}), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.grad(a.id) += g;
    if (tp.needs_grad(b.id)) tp.grad(b.id) += g;
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Tape& t = *a.tape;
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return t.record(std::move(v), any_grad({a, row}), [a, row](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.grad(a.id) += g;
    if (tp.needs_grad(row.id)) tp.grad(row.id) += g.colwise().sum();
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Matrix v = a.value().cwiseMax(0.0);
  return t.record(std::move(v), any_grad({a}), [a](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& x = tp.value(a.id);
    tp.grad(a.id) += (x.array() > 0.0).select(g, 0.0);
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, any_grad({a}), [a, s](Tape& tp, int self) {
    tp.grad(a.id) += s * tp.grad(self);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool need = false;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
    need = need || t.needs_grad(p.id);
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(v), need, [parts](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      const Eigen::Index w = tp.value(p.id).cols();
      if (tp.needs_grad(p.id)) tp.grad(p.id) += g.middleCols(off, w);
      off += w;
    }
  });
}

Var gather_rows(Var a, std::vector<int> index) {
  Tape& t = *a.tape;
  Matrix v(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] >= 0 && index[r] < a.rows(), "gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
  }
  return t.record(std::move(v), any_grad({a}), [a, index = std::move(index)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(a.id);
    for (std::size_t r = 0; r < index.size(); ++r) ga.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var l1_mean(Var pred, const Matrix& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "l1_mean: shape mismatch");
  Tape& t = *pred.tape;
  const double n = static_cast<double>(target.size());
  Matrix diff = pred.value() - target;
  Matrix v(1, 1);
  v(0, 0) = diff.cwiseAbs().sum() / n;
  return t.record(std::move(v), any_grad({pred}), [pred, diff = std::move(diff), n](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    tp.grad(pred.id) += (g / n) * diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
  });
}

Var block_row_dot(Var keys, Var query, int L, double scale) {
  const Eigen::Index B = query.rows();
  require(keys.rows() == B * L && keys.cols() == query.cols(), "block_row_dot: shape mismatch");
  Tape& t = *keys.tape;
  Matrix v(B, L);
  const Matrix& k = keys.value();
  const Matrix& q = query.value();
  for (Eigen::Index b = 0; b < B; ++b)
    v.row(b) = (k.middleRows(b * L, L) * q.row(b).transpose()).transpose() * scale;
  return t.record(std::move(v), any_grad({keys, query}), [keys, query, L, scale](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& kv = tp.value(keys.id);
    const Matrix& qv = tp.value(query.id);
    const Eigen::Index nb = qv.rows();
    if (tp.needs_grad(keys.id)) {
      Matrix& gk = tp.grad(keys.id);
      for (Eigen::Index b = 0; b < nb; ++b)
        gk.middleRows(b * L, L).noalias() += scale * g.row(b).transpose() * qv.row(b);
    }
    if (tp.needs_grad(query.id)) {
      Matrix& gq = tp.grad(query.id);
      for (Eigen::Index b = 0; b < nb; ++b) gq.row(b).noalias() += scale * g.row(b) * kv.middleRows(b * L, L);
    }
  });
}

Var masked_softmax_rows(Var scores, const Matrix& mask) {
  require(mask.rows() == scores.rows() && mask.cols() == scores.cols(), "masked_softmax_rows: mask shape");
  Tape& t = *scores.tape;
  const Matrix& s = scores.value();
  Matrix v = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index b = 0; b < s.rows(); ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l < s.cols(); ++l)
      if (mask(b, l) != 0.0) mx = std::max(mx, s(b, l));
    if (!std::isfinite(mx)) continue;
    double sum = 0.0;
    for (Eigen::Index l = 0; l < s.cols(); ++l)
      if (mask(b, l) != 0.0) {
        v(b, l) = std::exp(s(b, l) - mx);
        sum += v(b, l);
      }
    v.row(b) /= sum;
  }
  return t.record(std::move(v), any_grad({scores}), [scores](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix& gs = tp.grad(scores.id);
    for (Eigen::Index b = 0; b < y.rows(); ++b) {
      const double dot = g.row(b).dot(y.row(b));
      gs.row(b).array() += y.row(b).array() * (g.row(b).array() - dot);
    }
  });
}

std::vector<int> topk_indices(const double* weights, const double* mask, int L, int k) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    if (mask[l] != 0.0) idx.push_back(l);
  const std::size_t take = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), [&](int a, int b) {
    return weights[a] > weights[b] || (weights[a] == weights[b] && a < b);
  });
  idx.resize(take);
  return idx;
}

Var topk_gate(Var weights, const Matrix& features, const Matrix& mask, int k, bool straight_through) {
  const Eigen::Index B = weights.rows();
  const int L = static_cast<int>(weights.cols());
  const Eigen::Index F = features.cols();
  require(features.rows() == B * L, "topk_gate: feature rows must be B*L");
  require(mask.rows() == B && mask.cols() == L, "topk_gate: mask shape");
  Tape& t = *weights.tape;
  const Matrix& w = weights.value();
  Matrix v = Matrix::Zero(B, k * F);
  std::vector<std::vector<int>> chosen(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    chosen[static_cast<std::size_t>(b)] = topk_indices(w.row(b).data(), mask.row(b).data(), L, k);
    const auto& sel = chosen[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < sel.size(); ++s)
      v.block(b, static_cast<Eigen::Index>(s) * F, 1, F) = w(b, sel[s]) * features.row(b * L + sel[s]);
  }
  const bool need = straight_through && t.needs_grad(weights.id);
  return t.record(std::move(v), need,
                  [weights, features, chosen = std::move(chosen), L, F](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    Matrix& gw = tp.grad(weights.id);
                    for (std::size_t b = 0; b < chosen.size(); ++b) {
                      const auto& sel = chosen[b];
                      const auto bi = static_cast<Eigen::Index>(b);
                      for (std::size_t s = 0; s < sel.size(); ++s)
                        gw(bi, sel[s]) +=
                            g.row(bi).segment(static_cast<Eigen::Index>(s) * F, F).dot(features.row(bi * L + sel[s]));
                    }
                  });
}

}  // namespace imbal::ad
