#pragma once

#include <Eigen/Dense>

namespace imbal::qp {

/// minimize 0.5 x'Hx + c'x  subject to  A_in x >= b_in,  A_eq x = b_eq,  lower <= x <= upper.
/// H must be symmetric positive semidefinite; all bounds must be finite.
struct Problem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  Eigen::MatrixXd ineq;
  Eigen::VectorXd ineq_rhs;
  Eigen::MatrixXd eq;
  Eigen::VectorXd eq_rhs;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  /// Zero objective, no rows, box [lower, upper].
  static Problem box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);
  Eigen::Index size() const { return linear.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(hessian * x) + linear.dot(x); }
};

enum class Status { optimal, infeasible, iteration_limit };

struct Result {
  Status status = Status::iteration_limit;
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd ineq_mult;   // >= 0 at optimum
  Eigen::VectorXd eq_mult;
  Eigen::VectorXd bound_mult;  // > 0 on active lower bounds, < 0 on active upper bounds
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  /// Minimum total constraint violation found by phase 1 (0 when feasible).
  /// With status infeasible, `ineq_mult`/`eq_mult` hold the phase-1 dual
  /// multipliers: a Farkas-type certificate for the row system.
  double infeasibility = 0.0;
};

struct Options {
  double feasibility_tol = 1e-9;
  int max_iterations = 0;  // 0 = 50 * (n + rows) + 100
};

/// Primal active-set method with a null-space step. Cholesky on the reduced
/// Hessian; falls back to an eigen-decomposition when it is singular so LPs
/// and semidefinite problems are handled. Throws ContractError when H is not
/// positive semidefinite or the data are inconsistent in shape.
Result solve(const Problem& problem, const Options& options = {});

}  // namespace imbal::qp
