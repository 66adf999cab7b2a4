#include <doctest.h>

#include <random>

#include "imbal/errors.hpp"
#include "imbal/milp_encode.hpp"

using namespace imbal;

namespace {

/// Random desk-sized x-path with kinks spread over [0, 50] MW.
XPathNetwork random_net(std::mt19937_64& rng, std::vector<int> widths = {8, 4}) {
  std::normal_distribution<double> N(0.0, 1.0);
  XPathNetwork net;
  widths.push_back(1);
  int prev = 0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int w = widths[l];
    Eigen::RowVectorXd wx(w), c(w);
    for (int j = 0; j < w; ++j) {
      wx(j) = std::abs(N(rng));
      c(j) = 10.0 * N(rng);
    }
    net.wx.push_back(wx);
    net.c.push_back(c);
    if (l > 0) {
      Eigen::MatrixXd wz(prev, w);
      for (Eigen::Index i = 0; i < wz.size(); ++i) wz.data()[i] = std::abs(N(rng));
      net.wz.push_back(wz);
    }
    prev = w;
  }
  return net;
}

}  // namespace

TEST_SUITE("milp_encode") {
  TEST_CASE("zero weights bound to the bias; identity bounds to the range") {
    XPathNetwork net;
    net.wx = {Eigen::RowVectorXd::Zero(2), Eigen::RowVectorXd::Zero(1)};
    net.c = {Eigen::RowVectorXd::Constant(2, 3.0), Eigen::RowVectorXd::Constant(1, -2.0)};
    net.wz = {Eigen::MatrixXd::Zero(2, 1)};
    const UnitBounds b = propagate_bounds(net, 0.0, 10.0);
    CHECK(b.lower[0](0) == 3.0);
    CHECK(b.upper[0](1) == 3.0);
    CHECK(b.lower[1](0) == -2.0);
    CHECK(b.upper[1](0) == -2.0);

    XPathNetwork id;
    id.wx = {Eigen::RowVectorXd::Constant(1, 1.0), Eigen::RowVectorXd::Zero(1)};
    id.c = {Eigen::RowVectorXd::Zero(1), Eigen::RowVectorXd::Zero(1)};
    id.wz = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
    const UnitBounds c = propagate_bounds(id, 0.0, 1.0);
    CHECK(c.lower[0](0) == 0.0);
    CHECK(c.upper[0](0) == 1.0);
  }

  TEST_CASE("sampled forward passes stay inside propagated bounds") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
      const XPathNetwork net = random_net(rng);
      const double lo = 20.0 * U(rng), hi = lo + 30.0 * U(rng);
      const UnitBounds b = propagate_bounds(net, lo, hi);
      for (int s = 0; s < 1000; ++s) {
        const auto pre = net.pre_activations(lo + (hi - lo) * U(rng));
        for (std::size_t l = 0; l < pre.size(); ++l) {
          CHECK((pre[l].array() >= b.lower[l].array() - 1e-9).all());
          CHECK((pre[l].array() <= b.upper[l].array() + 1e-9).all());
        }
      }
    }
  }

  TEST_CASE("fixed input reproduces the network output") {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
      if (k % 50 == 0) rng.seed(1000 + static_cast<std::uint64_t>(k));
      const XPathNetwork net = random_net(rng);
      const UnitBounds b = propagate_bounds(net, 0.0, 50.0);
      const MilpSystem sys = encode(net, b, 0.0, 50.0, +1);
      const double p = 50.0 * U(rng);
      const auto x = solve_fixed_input(sys, p);
      worst = std::max(worst, std::abs(x[static_cast<std::size_t>(sys.output)] - net.evaluate(p)));
      CHECK(sys.max_violation(x) <= 1e-9 * (1.0 + std::abs(net.evaluate(p))));
    }
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("dead and always-active units carry no binary") {
    XPathNetwork net;
    net.wx = {(Eigen::RowVectorXd(3) << 1.0, 1.0, 1.0).finished(), Eigen::RowVectorXd::Zero(1)};
    net.c = {(Eigen::RowVectorXd(3) << -100.0, 5.0, -10.0).finished(), Eigen::RowVectorXd::Zero(1)};
    net.wz = {Eigen::MatrixXd::Ones(3, 1)};
    const MilpSystem sys = encode(net, propagate_bounds(net, 0.0, 50.0), 0.0, 50.0, +1);
    REQUIRE(sys.units.size() == 3);
    CHECK(sys.units[0].kind == MilpSystem::UnitKind::dead);
    CHECK(sys.units[0].y == -1);
    CHECK(sys.units[1].kind == MilpSystem::UnitKind::active);
    CHECK(sys.units[1].delta == -1);
    CHECK(sys.units[2].kind == MilpSystem::UnitKind::relu);
    CHECK(sys.units[2].rows.size() == 4);
    CHECK(sys.binary_count() == 1);
    for (double p : {0.0, 7.0, 10.0, 33.0, 50.0}) {
      const auto x = solve_fixed_input(sys, p);
      CHECK(x[static_cast<std::size_t>(sys.output)] == doctest::Approx(net.evaluate(p)));
    }
    for (const auto& v : sys.vars) {
      CHECK(std::isfinite(v.lo));
      CHECK(std::isfinite(v.hi));
    }
  }

  TEST_CASE("thresholds mark where units switch on") {
    std::mt19937_64 rng(33);
    const XPathNetwork net = random_net(rng);
    const auto thr = relu_thresholds(net, 0.0, 50.0);
    std::size_t f = 0;
    for (int l = 0; l + 1 < net.layers(); ++l)
      for (Eigen::Index j = 0; j < net.wx[static_cast<std::size_t>(l)].size(); ++j, ++f) {
        const double t = thr[f];
        if (!std::isfinite(t)) continue;
        if (t > 1e-6) CHECK(net.pre_activations(t - 1e-6)[static_cast<std::size_t>(l)](j) <= 1e-9);
        if (t < 50.0 - 1e-6) CHECK(net.pre_activations(t + 1e-6)[static_cast<std::size_t>(l)](j) > -1e-9);
      }
  }

  TEST_CASE("LP export prints 17 significant digits") {
    XPathNetwork net;
    net.wx = {Eigen::RowVectorXd::Constant(1, 0.1), Eigen::RowVectorXd::Zero(1)};
    net.c = {Eigen::RowVectorXd::Constant(1, -1.0 / 3.0), Eigen::RowVectorXd::Zero(1)};
    net.wz = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
    const MilpSystem sys = encode(net, propagate_bounds(net, 0.0, 10.0), 0.0, 10.0, +1);
    const std::string lp = sys.to_lp();
    CHECK(lp.find("0.10000000000000001") != std::string::npos);
    CHECK(lp.find("Binaries") != std::string::npos);
    CHECK(lp.find("End") != std::string::npos);
  }

  TEST_CASE("non-finite bounds are rejected") {
    std::mt19937_64 rng(34);
    const XPathNetwork net = random_net(rng);
    UnitBounds b = propagate_bounds(net, 0.0, 50.0);
    b.upper[0](0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(encode(net, b, 0.0, 50.0, +1), EncodingError);
  }
}
