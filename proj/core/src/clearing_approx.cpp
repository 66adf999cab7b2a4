#include "imbal/clearing_approx.hpp"

#include <algorithm>

#include "imbal/errors.hpp"

namespace imbal {

double approx_price(const PriceLadders& ladders, double mean_si_mw, const Action& action) {
  return ladders.marginal_price(mean_si_mw + action.net_injection_mw());
}

PwlPriceCurve approx_cost_curve(const PriceLadders& ladders, double mean_si_mw, int direction, double p_max_mw) {
  if (direction != 1 && direction != -1) throw ContractError("direction must be +1 or -1");
  if (!(p_max_mw > 0.0)) throw ContractError("p_max must be positive");
  // Charging moves net SI down, discharging up.
  const double sgn = direction > 0 ? -1.0 : 1.0;
  const double out_sign = direction > 0 ? 1.0 : -1.0;
  auto net_at = [&](double p) { return mean_si_mw + sgn * p; };
  auto price_at = [&](double p) { return out_sign * ladders.marginal_price(net_at(p)); };

  std::vector<double> changes;
  auto consider = [&](double net_boundary) {
    const double p = (net_boundary - mean_si_mw) / sgn;
    if (p > 0.0 && p < p_max_mw) changes.push_back(p);
  };
  for (double c : ladders.up_cum()) consider(-c);
  for (double c : ladders.down_cum()) consider(c);
  consider(0.0);
  std::sort(changes.begin(), changes.end());
  changes.erase(std::unique(changes.begin(), changes.end()), changes.end());

  PwlPriceCurve curve;
  curve.direction = direction;
  // Segment values are read at interior points so an SI sitting exactly on a
  // boundary does not create a spurious sloped segment.
  const double first_end = changes.empty() ? p_max_mw : changes.front();
  curve.breakpoints.emplace_back(0.0, price_at(0.5 * first_end));
  double prev = 0.0;
  for (std::size_t i = 0; i < changes.size(); ++i) {
    const double x = changes[i];
    const double next = i + 1 < changes.size() ? changes[i + 1] : p_max_mw;
    const double left = price_at(0.5 * (prev + x));
    const double right = price_at(0.5 * (x + next));
    curve.breakpoints.emplace_back(x, left);
    if (right != left) curve.breakpoints.emplace_back(x, right);
    prev = x;
  }
  curve.breakpoints.emplace_back(p_max_mw, price_at(0.5 * (prev + p_max_mw)));
  return curve;
}

}  // namespace imbal
