#include <doctest.h>

#include <algorithm>

#include <random>

#include "imbal/errors.hpp"
#include "imbal/market_sim.hpp"

using namespace imbal;

namespace {

QhMeritOrders two_step_orders() {
  QhMeritOrders o;
  o.afrr_up = MeritOrder::from_bids(Product::aFRR, Direction::up, {{50.0, 100.0}, {80.0, 100.0}});
  o.afrr_down = MeritOrder::from_bids(Product::aFRR, Direction::down, {{30.0, 100.0}, {-10.0, 100.0}});
  return o;
}

MinuteTrace flat(double si) {
  MinuteTrace t;
  t.si_mw.fill(si);
  return t;
}

QhMeritOrders random_orders(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto make = [&](Product p, Direction d, double start, double sign, int n) {
    std::vector<std::pair<double, double>> bids;
    double price = start;
    for (int i = 0; i < n; ++i) {
      bids.emplace_back(price, 5.0 + 20.0 * U(rng));
      price += sign * 30.0 * U(rng);
    }
    return MeritOrder::from_bids(p, d, bids);
  };
  QhMeritOrders o;
  const double mid = 100.0 * U(rng);
  o.afrr_up = make(Product::aFRR, Direction::up, mid + 5.0, +1.0, 12);
  o.afrr_down = make(Product::aFRR, Direction::down, mid - 5.0, -1.0, 12);
  o.mfrr_up = make(Product::mFRR, Direction::up, mid + 200.0, +1.0, 5);
  o.mfrr_down = make(Product::mFRR, Direction::down, mid - 200.0, -1.0, 5);
  return o;
}

}  // namespace

TEST_SUITE("market_sim") {
  TEST_CASE("merit-order walks") {
    const PriceLadders lad(two_step_orders());
    CHECK(lad.marginal_price(-150.0) == 80.0);
    CHECK(lad.marginal_price(120.0) == -10.0);
    CHECK(lad.marginal_price(-100.0) == 50.0);
    CHECK(lad.marginal_price(-100.0000001) == 80.0);
  }

  TEST_CASE("zero imbalance prices at the midpoint of the first bids") {
    QhMeritOrders o;
    o.afrr_up = MeritOrder::from_bids(Product::aFRR, Direction::up, {{60.0, 10.0}});
    o.afrr_down = MeritOrder::from_bids(Product::aFRR, Direction::down, {{40.0, 10.0}});
    CHECK(marginal_price(o, 0.0) == 50.0);
  }

  TEST_CASE("activation beyond the ladder depth carries the deepest price") {
    const PriceLadders lad(two_step_orders());
    try {
      lad.marginal_price(-250.0);
      FAIL("expected exhaustion");
    } catch (const LadderExhaustedError& e) {
      CHECK(e.deepest_price() == 80.0);
    }
    CHECK_THROWS_AS(lad.marginal_price(201.0), LadderExhaustedError);
  }

  TEST_CASE("aFRR and mFRR merge by price") {
    QhMeritOrders o = two_step_orders();
    o.mfrr_up = MeritOrder::from_bids(Product::mFRR, Direction::up, {{60.0, 100.0}});
    const PriceLadders lad(o);
    CHECK(lad.marginal_price(-50.0) == 50.0);
    CHECK(lad.marginal_price(-150.0) == 60.0);
    CHECK(lad.marginal_price(-250.0) == 80.0);
    CHECK(lad.up_depth() == 300.0);
  }

  TEST_CASE("settlement of a flat shortage quarter hour") {
    const PriceLadders lad(two_step_orders());
    const Settlement s = settle_qh(lad, flat(-100.0), Action::discharge(1.0));
    CHECK(s.qh_price == 50.0);
    CHECK(s.battery_profit == doctest::Approx(12.5));
    CHECK(s.net_si_mean == doctest::Approx(-99.0));
    CHECK(settle_qh(lad, flat(-100.0), Action::idle()).battery_profit == 0.0);
  }

  TEST_CASE("replay equals settlement with the equivalent action") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> N(0.0, 30.0);
    for (int k = 0; k < 200; ++k) {
      const PriceLadders lad(random_orders(rng));
      MinuteTrace tr;
      for (double& v : tr.si_mw) v = N(rng);
      const double p = 10.0 * std::abs(N(rng)) / 30.0;
      CHECK(replay_with_perturbation(lad, tr, 0.0).qh_price == settle_qh(lad, tr, Action::idle()).qh_price);
      CHECK(replay_with_perturbation(lad, tr, -p).qh_price == settle_qh(lad, tr, Action::charge(p)).qh_price);
      CHECK(replay_with_perturbation(lad, tr, p).qh_price == settle_qh(lad, tr, Action::discharge(p)).qh_price);
    }
  }

  TEST_CASE("price is monotone in the battery action") {
    std::mt19937_64 rng(17);
    // Ladders are at least 85 MW deep; |SI| <= 40 and shifts <= 40 stay inside.
    std::normal_distribution<double> N(0.0, 20.0);
    std::uniform_real_distribution<double> U(0.0, 20.0);
    auto bounded = [&](double cap) { return std::clamp(N(rng), -cap, cap); };
    for (int k = 0; k < 1000; ++k) {
      const PriceLadders lad(random_orders(rng));
      MinuteTrace tr;
      for (double& v : tr.si_mw) v = bounded(40.0);
      const double a = U(rng), b = U(rng);
      const double lo = std::min(a, b), hi = std::max(a, b);
      const double idle = settle_qh(lad, tr, Action::idle()).qh_price;
      CHECK(settle_qh(lad, tr, Action::charge(hi)).qh_price >= settle_qh(lad, tr, Action::charge(lo)).qh_price);
      CHECK(settle_qh(lad, tr, Action::charge(lo)).qh_price >= idle);
      CHECK(settle_qh(lad, tr, Action::discharge(hi)).qh_price <= settle_qh(lad, tr, Action::discharge(lo)).qh_price);
      CHECK(settle_qh(lad, tr, Action::discharge(lo)).qh_price <= idle);
      const double d1 = bounded(20.0), d2 = d1 + std::abs(bounded(20.0));
      CHECK(replay_with_perturbation(lad, tr, d2).qh_price <= replay_with_perturbation(lad, tr, d1).qh_price);
    }
  }

  TEST_CASE("minute averaging versus the price at the mean") {
    const PriceLadders lad(two_step_orders());
    // All minutes on one ladder segment: the QH price equals the price at the mean.
    MinuteTrace same;
    for (int m = 0; m < kMinutesPerQh; ++m) same.si_mw[static_cast<std::size_t>(m)] = -20.0 - 4.0 * m;
    CHECK(settle_qh(lad, same, Action::idle()).qh_price == lad.marginal_price(same.mean()));
    // Minutes straddling the 100 MW step: average of 50 and 80 against one price.
    MinuteTrace straddle;
    for (int m = 0; m < kMinutesPerQh; ++m) straddle.si_mw[static_cast<std::size_t>(m)] = m % 2 ? -99.0 : -101.0;
    const double qh = settle_qh(lad, straddle, Action::idle()).qh_price;
    CHECK(qh == doctest::Approx((8 * 80.0 + 7 * 50.0) / 15.0));
    CHECK(qh != lad.marginal_price(straddle.mean()));
  }

  TEST_CASE("ladder construction and validation") {
    const MeritOrder up = MeritOrder::from_bids(Product::aFRR, Direction::up, {{80.0, 5.0}, {50.0, 5.0}});
    CHECK(up.bids.front().price == 50.0);
    CHECK(up.bids.back().cum_volume == 10.0);
    CHECK_NOTHROW(up.validate());
    MeritOrder bad = up;
    bad.bids[1].price = 10.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    CHECK(product_from_string("mFRR") == Product::mFRR);
    CHECK(direction_from_string("down") == Direction::down);
    CHECK_THROWS(product_from_string("FCR"));
  }
}
