#include <doctest.h>

#include <random>

#include "imbal/errors.hpp"
#include "imbal/qp.hpp"

using namespace imbal;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

bool kkt_ok(const qp::Problem& p, const qp::Result& r, double tol) {
  return r.status == qp::Status::optimal && r.primal_residual <= tol && r.dual_residual <= tol &&
         (r.ineq_mult.size() == 0 || r.ineq_mult.minCoeff() >= -tol);
}

}  // namespace

TEST_SUITE("qp") {
  TEST_CASE("interior optimum of a separable quadratic") {
    qp::Problem p = qp::Problem::box(VectorXd::Zero(2), VectorXd::Constant(2, 10.0));
    p.hessian.diagonal() << 2.0, 4.0;
    p.linear << -6.0, -4.0;
    const auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x(0) == doctest::Approx(3.0));
    CHECK(r.x(1) == doctest::Approx(1.0));
    CHECK(kkt_ok(p, r, 1e-8));
  }

  TEST_CASE("linear program on a box goes to the vertices") {
    qp::Problem p = qp::Problem::box(VectorXd::Constant(3, -1.0), VectorXd::Constant(3, 2.0));
    p.linear << 1.0, -1.0, 0.0;
    const auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x(0) == -1.0);
    CHECK(r.x(1) == 2.0);
    CHECK(r.objective == doctest::Approx(-3.0));
  }

  TEST_CASE("coupling row and equality") {
    // min (x-2)^2 + (y-2)^2  s.t. x + y <= 2, x - y = 0.5
    qp::Problem p = qp::Problem::box(VectorXd::Constant(2, -10.0), VectorXd::Constant(2, 10.0));
    p.hessian = 2.0 * MatrixXd::Identity(2, 2);
    p.linear << -4.0, -4.0;
    p.ineq = MatrixXd(1, 2);
    p.ineq << -1.0, -1.0;
    p.ineq_rhs = VectorXd::Constant(1, -2.0);
    p.eq = MatrixXd(1, 2);
    p.eq << 1.0, -1.0;
    p.eq_rhs = VectorXd::Constant(1, 0.5);
    const auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x(0) == doctest::Approx(1.25));
    CHECK(r.x(1) == doctest::Approx(0.75));
    CHECK(kkt_ok(p, r, 1e-8));
  }

  TEST_CASE("infeasible rows are reported") {
    qp::Problem p = qp::Problem::box(VectorXd::Zero(1), VectorXd::Constant(1, 1.0));
    p.ineq = MatrixXd::Constant(1, 1, 1.0);
    p.ineq_rhs = VectorXd::Constant(1, 2.0);
    const auto r = qp::solve(p);
    CHECK(r.status == qp::Status::infeasible);
    CHECK(r.infeasibility == doctest::Approx(1.0));
  }

  TEST_CASE("nonconvex and misshapen data are contract errors") {
    qp::Problem p = qp::Problem::box(VectorXd::Zero(1), VectorXd::Constant(1, 1.0));
    p.hessian(0, 0) = -1.0;
    CHECK_THROWS_AS(qp::solve(p), ContractError);
    qp::Problem q = qp::Problem::box(VectorXd::Zero(2), VectorXd::Constant(2, 1.0));
    q.linear = VectorXd::Zero(3);
    CHECK_THROWS_AS(qp::solve(q), ContractError);
  }

  TEST_CASE("random convex problems satisfy KKT and beat random feasible points") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> N(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      const int n = 1 + static_cast<int>(rng() % 6), m = static_cast<int>(rng() % 5);
      qp::Problem p = qp::Problem::box(VectorXd::Constant(n, -1.0), VectorXd::Constant(n, 1.0));
      MatrixXd g(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) g(i, j) = N(rng);
      p.hessian = g * g.transpose() * (k % 3 == 0 ? 0.0 : 1.0);  // some LPs
      for (int i = 0; i < n; ++i) p.linear(i) = N(rng);
      // Rows satisfied by x = 0 keep the problem feasible.
      p.ineq = MatrixXd(m, n);
      p.ineq_rhs = VectorXd(m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) p.ineq(i, j) = N(rng);
        p.ineq_rhs(i) = -U(rng);
      }
      const auto r = qp::solve(p);
      REQUIRE(r.status == qp::Status::optimal);
      CHECK(kkt_ok(p, r, 1e-7));
      for (int s = 0; s < 50; ++s) {
        VectorXd x(n);
        for (int j = 0; j < n; ++j) x(j) = -1.0 + 2.0 * U(rng);
        if (m > 0 && (p.ineq * x - p.ineq_rhs).minCoeff() < 0.0) continue;
        CHECK(r.objective <= p.objective(x) + 1e-9);
      }
    }
  }
}
