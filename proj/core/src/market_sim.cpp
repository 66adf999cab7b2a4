#include "imbal/market_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "imbal/errors.hpp"

namespace imbal {

std::string_view to_string(Product p) { return p == Product::aFRR ? "aFRR" : "mFRR"; }
std::string_view to_string(Direction d) { return d == Direction::up ? "up" : "down"; }

Product product_from_string(std::string_view s) {
  if (s == "aFRR" || s == "afrr") return Product::aFRR;
  if (s == "mFRR" || s == "mfrr") return Product::mFRR;
  throw ContractError("unknown product '" + std::string(s) + "'");
}

Direction direction_from_string(std::string_view s) {
  if (s == "up") return Direction::up;
  if (s == "down") return Direction::down;
  throw ContractError("unknown direction '" + std::string(s) + "'");
}

MeritOrder MeritOrder::from_bids(Product product, Direction direction,
                                 std::vector<std::pair<double, double>> price_volume) {
  if (direction == Direction::up)
    std::stable_sort(price_volume.begin(), price_volume.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  else
    std::stable_sort(price_volume.begin(), price_volume.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
  MeritOrder out{product, direction, {}};
  out.bids.reserve(price_volume.size());
  double cum = 0.0;
  for (const auto& [price, volume] : price_volume) {
    cum += volume;
    out.bids.push_back({price, volume, cum});
  }
  return out;
}

void MeritOrder::validate() const {
  double prev_cum = 0.0;
  for (std::size_t i = 0; i < bids.size(); ++i) {
    const Bid& b = bids[i];
    if (!(b.volume > 0.0)) throw ContractError("merit order: nonpositive bid volume");
    if (!(b.cum_volume > prev_cum)) throw ContractError("merit order: cum_volume not strictly increasing");
    if (std::abs(b.cum_volume - prev_cum - b.volume) > 1e-9 * std::max(1.0, b.cum_volume))
      throw ContractError("merit order: cum_volume inconsistent with volumes");
    if (i > 0) {
      const double prev = bids[i - 1].price;
      if (direction == Direction::up && b.price < prev)
        throw ContractError("merit order: up bids must have nondecreasing prices");
      if (direction == Direction::down && b.price > prev)
        throw ContractError("merit order: down bids must have nonincreasing prices");
    }
    prev_cum = b.cum_volume;
  }
}

const MeritOrder& QhMeritOrders::ladder(Product p, Direction d) const {
  if (p == Product::aFRR) return d == Direction::up ? afrr_up : afrr_down;
  return d == Direction::up ? mfrr_up : mfrr_down;
}

MeritOrder& QhMeritOrders::ladder(Product p, Direction d) {
  return const_cast<MeritOrder&>(std::as_const(*this).ladder(p, d));
}

namespace {

void merge(const MeritOrder& a, const MeritOrder& b, bool ascending, std::vector<double>& cum,
           std::vector<double>& price) {
  std::vector<std::pair<double, double>> all;
  all.reserve(a.bids.size() + b.bids.size());
  for (const Bid& bid : a.bids) all.emplace_back(bid.price, bid.volume);
  for (const Bid& bid : b.bids) all.emplace_back(bid.price, bid.volume);
  // Stable: at equal price aFRR (first argument) is activated first.
  if (ascending)
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  else
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  double c = 0.0;
  for (const auto& [p, v] : all) {
    c += v;
    cum.push_back(c);
    price.push_back(p);
  }
}

double walk(const std::vector<double>& cum, const std::vector<double>& price, double volume,
            const char* side) {
  // Marginal bid: first bid whose cumulative volume covers the activation.
  auto it = std::lower_bound(cum.begin(), cum.end(), volume);
  if (it == cum.end()) {
    if (!cum.empty() && volume <= cum.back() * (1.0 + 1e-12)) return price.back();
    const double deepest = price.empty() ? 0.0 : price.back();
    throw LadderExhaustedError(deepest, std::string(side) + " ladder exhausted at " + std::to_string(volume) +
                                            " MW (depth " +
                                            std::to_string(cum.empty() ? 0.0 : cum.back()) + " MW)");
  }
  return price[static_cast<std::size_t>(it - cum.begin())];
}

}  // namespace

PriceLadders::PriceLadders(const QhMeritOrders& orders) {
  merge(orders.afrr_up, orders.mfrr_up, true, up_cum_, up_price_);
  merge(orders.afrr_down, orders.mfrr_down, false, down_cum_, down_price_);
}

double PriceLadders::marginal_price(double net_si_mw) const {
  if (net_si_mw < 0.0) return walk(up_cum_, up_price_, -net_si_mw, "up");
  if (net_si_mw > 0.0) return walk(down_cum_, down_price_, net_si_mw, "down");
  if (up_price_.empty() || down_price_.empty())
    throw LadderExhaustedError(0.0, "empty ladder at zero imbalance");
  return 0.5 * (up_price_.front() + down_price_.front());
}

double marginal_price(const QhMeritOrders& orders, double net_si_mw) {
  return PriceLadders(orders).marginal_price(net_si_mw);
}

double MinuteTrace::mean() const {
  return std::accumulate(si_mw.begin(), si_mw.end(), 0.0) / kMinutesPerQh;
}

namespace {

double minute_average_price(const PriceLadders& ladders, const MinuteTrace& trace, double shift_mw,
                            double& net_mean) {
  double price_sum = 0.0;
  double net_sum = 0.0;
  for (double si : trace.si_mw) {
    const double net = si + shift_mw;
    net_sum += net;
    price_sum += ladders.marginal_price(net);
  }
  net_mean = net_sum / kMinutesPerQh;
  return price_sum / kMinutesPerQh;
}

}  // namespace

Settlement settle_qh(const PriceLadders& ladders, const MinuteTrace& trace, const Action& action,
                     double delta_t_h) {
  Settlement s;
  s.qh_price = minute_average_price(ladders, trace, action.net_injection_mw(), s.net_si_mean);
  s.battery_profit = s.qh_price * action.net_injection_mw() * delta_t_h;
  return s;
}

Settlement replay_with_perturbation(const PriceLadders& ladders, const MinuteTrace& trace,
                                    double delta_mw) {
  Settlement s;
  s.qh_price = minute_average_price(ladders, trace, delta_mw, s.net_si_mean);
  return s;
}

}  // namespace imbal
