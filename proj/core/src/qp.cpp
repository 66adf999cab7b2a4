#include "imbal/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "imbal/errors.hpp"

namespace imbal::qp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Problem Problem::box(const VectorXd& lower, const VectorXd& upper) {
  const Index n = lower.size();
  Problem p;
  p.hessian = MatrixXd::Zero(n, n);
  p.linear = VectorXd::Zero(n);
  p.ineq = MatrixXd::Zero(0, n);
  p.ineq_rhs = VectorXd::Zero(0);
  p.eq = MatrixXd::Zero(0, n);
  p.eq_rhs = VectorXd::Zero(0);
  p.lower = lower;
  p.upper = upper;
  return p;
}

namespace {

template <class V>
double inf_norm(const V& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

enum class VarState : unsigned char { free, at_lower, at_upper };

void check_shapes(const Problem& p) {
  const Index n = p.linear.size();
  auto bad = [](const char* what) { throw ContractError(std::string("qp: inconsistent shape: ") + what); };
  if (p.hessian.rows() != n || p.hessian.cols() != n) bad("hessian");
  if (p.ineq.cols() != n && p.ineq.rows() > 0) bad("ineq");
  if (p.ineq.rows() != p.ineq_rhs.size()) bad("ineq_rhs");
  if (p.eq.cols() != n && p.eq.rows() > 0) bad("eq");
  if (p.eq.rows() != p.eq_rhs.size()) bad("eq_rhs");
  if (p.lower.size() != n || p.upper.size() != n) bad("bounds");
  for (Index j = 0; j < n; ++j) {
    if (!std::isfinite(p.lower[j]) || !std::isfinite(p.upper[j])) throw ContractError("qp: bounds must be finite");
    if (p.lower[j] > p.upper[j]) throw ContractError("qp: lower bound above upper bound");
  }
}

void check_convex(const MatrixXd& h) {
  if (h.size() == 0) return;
  if (!h.isApprox(h.transpose(), 1e-12) && (h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ContractError("qp: hessian not symmetric");
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  // Fast path: diagonal Hessians are the common case here.
  if ((h - MatrixXd(h.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0) {
    if (h.diagonal().minCoeff() < -1e-12 * scale) throw ContractError("qp: nonconvex objective (negative curvature)");
    return;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(h, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw ContractError("qp: nonconvex objective (negative curvature)");
}

double max_violation(const Problem& p, const VectorXd& x) {
  double v = 0.0;
  if (p.ineq.rows() > 0) v = std::max(v, (p.ineq_rhs - p.ineq * x).maxCoeff());
  if (p.eq.rows() > 0) v = std::max(v, (p.eq * x - p.eq_rhs).cwiseAbs().maxCoeff());
  if (x.size() > 0) {
    v = std::max(v, (p.lower - x).maxCoeff());
    v = std::max(v, (x - p.upper).maxCoeff());
  }
  return std::max(v, 0.0);
}

struct Core {
  const Problem& p;
  const Options& opt;
  VectorXd x;
  std::vector<VarState> state;
  std::vector<char> in_working;  // per inequality row
  std::vector<Index> working;    // active inequality rows, in order of activation
  int iterations = 0;
  VectorXd ineq_mult, eq_mult, bound_mult;

  Core(const Problem& prob, const Options& o, VectorXd start) : p(prob), opt(o), x(std::move(start)) {
    const Index n = x.size();
    state.assign(static_cast<std::size_t>(n), VarState::free);
    for (Index j = 0; j < n; ++j) {
      if (p.lower[j] == p.upper[j] || x[j] <= p.lower[j]) {
        x[j] = p.lower[j];
        state[j] = VarState::at_lower;
      } else if (x[j] >= p.upper[j]) {
        x[j] = p.upper[j];
        state[j] = VarState::at_upper;
      }
    }
    in_working.assign(static_cast<std::size_t>(p.ineq.rows()), 0);
  }

  // Rows of the current working set (equalities first) over all columns.
  MatrixXd working_rows() const {
    const Index me = p.eq.rows();
    MatrixXd a(me + static_cast<Index>(working.size()), x.size());
    if (me > 0) a.topRows(me) = p.eq;
    for (std::size_t k = 0; k < working.size(); ++k) a.row(me + static_cast<Index>(k)) = p.ineq.row(working[k]);
    return a;
  }

  Status run(int max_iter) {
    const Index n = x.size();
    const Index me = p.eq.rows();
    for (; iterations < max_iter; ++iterations) {
      const VectorXd g = p.hessian * x + p.linear;
      std::vector<Index> free_idx;
      for (Index j = 0; j < n; ++j)
        if (state[j] == VarState::free) free_idx.push_back(j);
      const Index nf = static_cast<Index>(free_idx.size());
      const MatrixXd aw = working_rows();
      const Index mw = aw.rows();

      MatrixXd awf(mw, nf);
      VectorXd gf(nf);
      for (Index k = 0; k < nf; ++k) {
        awf.col(k) = aw.col(free_idx[k]);
        gf[k] = g[free_idx[k]];
      }

      // Null space of the active rows restricted to free variables.
      MatrixXd z;
      if (mw == 0) {
        z = MatrixXd::Identity(nf, nf);
      } else if (nf > 0) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(awf.transpose());
        qr.setThreshold(1e-11);
        const Index rank = qr.rank();
        const MatrixXd q = qr.householderQ() * MatrixXd::Identity(nf, nf);
        z = q.rightCols(nf - rank);
      } else {
        z = MatrixXd(0, 0);
      }

      VectorXd df = VectorXd::Zero(nf);
      bool ray = false;
      if (z.cols() > 0) {
        MatrixXd hff(nf, nf);
        for (Index a = 0; a < nf; ++a)
          for (Index b = 0; b < nf; ++b) hff(a, b) = p.hessian(free_idx[a], free_idx[b]);
        const MatrixXd hr = z.transpose() * hff * z;
        const VectorXd gr = z.transpose() * gf;
        const double hscale = std::max(1.0, inf_norm(hr));
        const double gscale = 1.0 + inf_norm(gf);
        bool done = false;
        if (hr.diagonal().minCoeff() > 1e-9 * hscale) {
          Eigen::LLT<MatrixXd> llt(hr);
          if (llt.info() == Eigen::Success) {
            const MatrixXd l = llt.matrixL();
            if (l.diagonal().minCoeff() > 1e-7 * std::sqrt(hscale)) {
              df = -z * llt.solve(gr);
              done = true;
            }
          }
        }
        if (!done) {
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(hr);
          const VectorXd& lam = es.eigenvalues();
          const MatrixXd& v = es.eigenvectors();
          const VectorXd q = v.transpose() * gr;
          const double ltol = 1e-10 * hscale;
          VectorXd flat = VectorXd::Zero(q.size());
          for (Index i = 0; i < q.size(); ++i)
            if (lam[i] <= ltol && std::abs(q[i]) > 1e-12 * gscale) flat[i] = q[i];
          if (inf_norm(flat) > 0.0) {
            // Zero-curvature descent direction: move until a constraint blocks.
            df = -z * (v * flat);
            ray = true;
          } else {
            VectorXd step = VectorXd::Zero(q.size());
            for (Index i = 0; i < q.size(); ++i)
              if (lam[i] > ltol) step[i] = -q[i] / lam[i];
            df = z * (v * step);
          }
        }
      }

      const double xscale = 1.0 + inf_norm(x);
      if (!ray && inf_norm(df) <= 1e-13 * xscale) {
        // Stationary on the working set: check multiplier signs.
        VectorXd mu = VectorXd::Zero(mw);
        if (mw > 0 && nf > 0) mu = awf.transpose().colPivHouseholderQr().solve(gf);
        VectorXd nu = g - aw.transpose() * mu;  // bound multipliers (lower: >= 0, upper: <= 0)
        const double dtol = 1e-9 * (1.0 + inf_norm(g));
        double worst = -dtol;
        Index worst_row = -1, worst_var = -1;
        for (std::size_t k = 0; k < working.size(); ++k) {
          const double m = mu[me + static_cast<Index>(k)];
          if (m < worst) {
            worst = m;
            worst_row = static_cast<Index>(k);
            worst_var = -1;
          }
        }
        for (Index j = 0; j < n; ++j) {
          if (state[j] == VarState::free || p.lower[j] == p.upper[j]) continue;
          const double m = state[j] == VarState::at_lower ? nu[j] : -nu[j];
          if (m < worst) {
            worst = m;
            worst_var = j;
            worst_row = -1;
          }
        }
        if (worst_row < 0 && worst_var < 0) {
          ineq_mult = VectorXd::Zero(p.ineq.rows());
          for (std::size_t k = 0; k < working.size(); ++k) ineq_mult[working[k]] = mu[me + static_cast<Index>(k)];
          eq_mult = mu.head(me);
          bound_mult = VectorXd::Zero(n);
          for (Index j = 0; j < n; ++j)
            if (state[j] != VarState::free) bound_mult[j] = nu[j];
          return Status::optimal;
        }
        if (worst_row >= 0) {
          in_working[working[worst_row]] = 0;
          working.erase(working.begin() + worst_row);
        } else {
          state[worst_var] = VarState::free;
        }
        continue;
      }

      VectorXd d = VectorXd::Zero(n);
      for (Index k = 0; k < nf; ++k) d[free_idx[k]] = df[k];
      const double dnorm = inf_norm(d);

      double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
      Index block_row = -1, block_var = -1;
      bool block_upper = false;
      for (Index i = 0; i < p.ineq.rows(); ++i) {
        if (in_working[i]) continue;
        const double ad = p.ineq.row(i).dot(d);
        if (ad < -1e-14 * (1.0 + inf_norm(p.ineq.row(i))) * dnorm) {
          const double slack = std::max(0.0, p.ineq.row(i).dot(x) - p.ineq_rhs[i]);
          const double a = slack / -ad;
          if (a < alpha) {
            alpha = a;
            block_row = i;
            block_var = -1;
          }
        }
      }
      for (Index k = 0; k < nf; ++k) {
        const Index j = free_idx[k];
        if (d[j] < 0.0) {
          const double a = std::max(0.0, x[j] - p.lower[j]) / -d[j];
          if (a < alpha) {
            alpha = a;
            block_var = j;
            block_row = -1;
            block_upper = false;
          }
        } else if (d[j] > 0.0) {
          const double a = std::max(0.0, p.upper[j] - x[j]) / d[j];
          if (a < alpha) {
            alpha = a;
            block_var = j;
            block_row = -1;
            block_upper = true;
          }
        }
      }
      if (!std::isfinite(alpha)) throw ContractError("qp: unbounded direction (bounds must be finite)");
      x += alpha * d;
      if (block_var >= 0) {
        x[block_var] = block_upper ? p.upper[block_var] : p.lower[block_var];
        state[block_var] = block_upper ? VarState::at_upper : VarState::at_lower;
      } else if (block_row >= 0) {
        in_working[block_row] = 1;
        working.push_back(block_row);
      }
    }
    return Status::iteration_limit;
  }
};

}  // namespace

Result solve(const Problem& problem, const Options& options) {
  check_shapes(problem);
  check_convex(problem.hessian);
  const Index n = problem.linear.size();
  const Index mi = problem.ineq.rows();
  const Index me = problem.eq.rows();
  const int max_iter = options.max_iterations > 0 ? options.max_iterations
                                                  : static_cast<int>(50 * (n + mi + me) + 100);
  const double ftol = options.feasibility_tol;

  VectorXd x0 = VectorXd::Zero(n).cwiseMax(problem.lower).cwiseMin(problem.upper);
  Result res;

  if (max_violation(problem, x0) > ftol) {
    // Phase 1: elastic problem  min sum(s) + sum(e+ + e-).
    const Index ne = n + mi + 2 * me;
    Problem ph = Problem::box(VectorXd::Zero(ne), VectorXd::Zero(ne));
    ph.lower.head(n) = problem.lower;
    ph.upper.head(n) = problem.upper;
    ph.linear.tail(mi + 2 * me).setOnes();
    VectorXd start = VectorXd::Zero(ne);
    start.head(n) = x0;
    ph.ineq = MatrixXd::Zero(mi, ne);
    ph.ineq_rhs = problem.ineq_rhs;
    if (mi > 0) {
      ph.ineq.leftCols(n) = problem.ineq;
      ph.ineq.block(0, n, mi, mi).setIdentity();
      const VectorXd viol = (problem.ineq_rhs - problem.ineq * x0).cwiseMax(0.0);
      start.segment(n, mi) = viol;
    }
    ph.eq = MatrixXd::Zero(me, ne);
    ph.eq_rhs = problem.eq_rhs;
    if (me > 0) {
      ph.eq.leftCols(n) = problem.eq;
      ph.eq.block(0, n + mi, me, me).setIdentity();
      ph.eq.block(0, n + mi + me, me, me) = -MatrixXd::Identity(me, me);
      const VectorXd r = problem.eq_rhs - problem.eq * x0;
      start.segment(n + mi, me) = r.cwiseMax(0.0);
      start.segment(n + mi + me, me) = (-r).cwiseMax(0.0);
    }
    const double cap = 10.0 * (1.0 + inf_norm(start));
    ph.upper.tail(mi + 2 * me).setConstant(cap);
    Core c1(ph, options, start);
    const Status s1 = c1.run(max_iter);
    res.iterations = c1.iterations;
    const double infeas = c1.x.tail(mi + 2 * me).sum();
    if (s1 != Status::optimal) {
      res.status = s1;
      res.x = c1.x.head(n);
      return res;
    }
    if (infeas > ftol * (1.0 + problem.ineq_rhs.cwiseAbs().sum() + problem.eq_rhs.cwiseAbs().sum())) {
      res.status = Status::infeasible;
      res.x = c1.x.head(n);
      res.infeasibility = infeas;
      res.ineq_mult = c1.ineq_mult;
      res.eq_mult = c1.eq_mult;
      return res;
    }
    x0 = c1.x.head(n);
  }

  Core core(problem, options, x0);
  res.status = core.run(max_iter - res.iterations);
  res.iterations += core.iterations;
  res.x = core.x;
  res.objective = problem.objective(core.x);
  res.primal_residual = max_violation(problem, core.x);
  if (res.status == Status::optimal) {
    res.ineq_mult = core.ineq_mult;
    res.eq_mult = core.eq_mult;
    res.bound_mult = core.bound_mult;
    VectorXd r = problem.hessian * core.x + problem.linear - res.bound_mult;
    if (mi > 0) r -= problem.ineq.transpose() * res.ineq_mult;
    if (me > 0) r -= problem.eq.transpose() * res.eq_mult;
    res.dual_residual = inf_norm(r);
  }
  return res;
}

}  // namespace imbal::qp
