#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace imbal::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool nonnegative = false;  // projected onto >= 0 after every optimizer step

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over dense matrices. Each op records its value and a
/// closure that scatters the node's adjoint into its inputs.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Matrix value);
  Var param(Parameter& p);
  Var record(Matrix value, bool needs_grad, Backward backward);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to parameters.
  void backward(Var out);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Adjoint buffer of a node, allocated on first use.
  Matrix& grad(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a (n x m) + broadcast row (1 x m).
Var add_row(Var a, Var row);
Var relu(Var a);
Var scale(Var a, double s);
Var concat_cols(const std::vector<Var>& parts);
/// Output row r is input row index[r].
Var gather_rows(Var a, std::vector<int> index);
/// mean(|pred - target|) as a 1x1 node.
Var l1_mean(Var pred, const Matrix& target);

/// scores(b, l) = <keys.row(b*L + l), query.row(b)> * scale, for keys with
/// B*L rows and query with B rows.
Var block_row_dot(Var keys, Var query, int L, double scale);
/// Row-wise softmax over entries where mask(b, l) != 0; masked entries are 0.
Var masked_softmax_rows(Var scores, const Matrix& mask);

/// Hard top-k gate. For every row b picks the k largest weights among the
/// unmasked entries (ties: lower index first), orders them by weight, and
/// emits weight * features.row(b*L + l) into consecutive slots of width F.
/// Unfilled slots are zero. With `straight_through` the 0/1 selection mask is
/// treated as identity in the backward pass so the selected weights receive
/// gradient; otherwise the gate output is a constant for backward.
Var topk_gate(Var weights, const Matrix& features, const Matrix& mask, int k, bool straight_through);

/// Indices chosen by the top-k rule for one row of weights (same rule as topk_gate).
std::vector<int> topk_indices(const double* weights, const double* mask, int L, int k);

}  // namespace imbal::ad
