#include "imbal/pwl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imbal/errors.hpp"

namespace imbal {

double PwlPriceCurve::evaluate(double p) const {
  const auto& bp = breakpoints;
  if (bp.empty()) throw ContractError("empty price curve");
  if (p <= bp.front().first) return bp.front().second;
  if (p >= bp.back().first) {
    // Left limit at a terminal jump.
    std::size_t i = bp.size() - 1;
    while (i > 0 && bp[i - 1].first == bp.back().first) --i;
    return bp[i].second;
  }
  // First segment whose right end is >= p; at a jump this is the left side.
  auto it = std::lower_bound(bp.begin(), bp.end(), p,
                             [](const auto& pt, double x) { return pt.first < x; });
  const std::size_t j = static_cast<std::size_t>(it - bp.begin());
  const auto& right = bp[j];
  const auto& left = bp[j - 1];
  if (right.first == p) return right.second;
  const double w = (p - left.first) / (right.first - left.first);
  return left.second + w * (right.second - left.second);
}

std::vector<double> PwlPriceCurve::slopes() const {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    const double dx = breakpoints[i + 1].first - breakpoints[i].first;
    if (dx > 0.0) out.push_back((breakpoints[i + 1].second - breakpoints[i].second) / dx);
  }
  return out;
}

bool PwlPriceCurve::continuous(double tol) const {
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
    if (breakpoints[i + 1].first == breakpoints[i].first &&
        std::abs(breakpoints[i + 1].second - breakpoints[i].second) > tol)
      return false;
  return true;
}

bool PwlPriceCurve::nondecreasing(double tol) const {
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
    if (breakpoints[i + 1].second < breakpoints[i].second - tol) return false;
  return true;
}

bool PwlPriceCurve::convex(double rel_tol) const {
  if (!continuous()) return false;
  const auto s = slopes();
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i + 1] < s[i] - rel_tol * std::max(1.0, std::abs(s[i]))) return false;
  return true;
}

ConvexCost::ConvexCost(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
  if (pieces_.empty()) throw ContractError("convex cost needs at least one piece");
  for (const Piece& pc : pieces_)
    if (pc.curv < -1e-12 * std::max(1.0, std::abs(pc.slope)))
      throw ContractError("convex cost piece with negative curvature");
}

ConvexCost ConvexCost::product_with_action(const PwlPriceCurve& curve, double scale) {
  if (!curve.continuous()) throw ContractError("product_with_action needs a continuous curve");
  std::vector<Piece> pieces;
  const auto& bp = curve.breakpoints;
  for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
    const double x0 = bp[i].first, x1 = bp[i + 1].first;
    if (!(x1 > x0)) continue;
    const double y0 = bp[i].second;
    const double s = (bp[i + 1].second - y0) / (x1 - x0);
    // (x0 + u)(y0 + s u) = x0 y0 + (y0 + s x0) u + s u^2
    pieces.push_back({x0, x1, scale * x0 * y0, scale * (y0 + s * x0), scale * s});
  }
  if (pieces.empty()) {
    const double x = bp.front().first;
    pieces.push_back({x, x, scale * x * bp.front().second, 0.0, 0.0});
  }
  return ConvexCost(std::move(pieces));
}

ConvexCost ConvexCost::envelope_of_step_product(const PwlPriceCurve& curve, double scale) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.breakpoints.size());
  for (const auto& [x, y] : curve.breakpoints) pts.emplace_back(x, scale * x * y);
  // Lower hull (monotone chain); at equal abscissa keep the lower value.
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second < b.second);
  });
  std::vector<std::pair<double, double>> hull;
  for (const auto& pt : pts) {
    if (!hull.empty() && hull.back().first == pt.first) continue;
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull.back();
      const double cross = (b.first - a.first) * (pt.second - a.second) - (b.second - a.second) * (pt.first - a.first);
      if (cross <= 0.0) hull.pop_back();
      else break;
    }
    hull.push_back(pt);
  }
  std::vector<Piece> pieces;
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const double dx = hull[i + 1].first - hull[i].first;
    pieces.push_back({hull[i].first, hull[i + 1].first, hull[i].second, (hull[i + 1].second - hull[i].second) / dx, 0.0});
  }
  if (pieces.empty()) pieces.push_back({hull.front().first, hull.front().first, hull.front().second, 0.0, 0.0});
  return ConvexCost(std::move(pieces));
}

ConvexCost ConvexCost::max_of_lines(const std::vector<std::pair<double, double>>& lines, double lo, double hi) {
  if (lines.empty()) throw ContractError("max_of_lines: no lines");
  auto value = [&](std::size_t i, double x) { return lines[i].first + lines[i].second * x; };
  std::vector<Piece> pieces;
  double x = lo;
  // Active line at lo: highest value, ties broken by the larger slope.
  std::size_t cur = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const double vi = value(i, x), vc = value(cur, x);
    if (vi > vc || (vi == vc && lines[i].second > lines[cur].second)) cur = i;
  }
  while (x < hi) {
    double next_x = hi;
    std::size_t next = cur;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].second <= lines[cur].second) continue;
      const double xi = (lines[cur].first - lines[i].first) / (lines[i].second - lines[cur].second);
      if (xi > x && (xi < next_x || (xi == next_x && lines[i].second > lines[next].second))) {
        next_x = xi;
        next = i;
      }
    }
    pieces.push_back({x, next_x, value(cur, x), lines[cur].second, 0.0});
    if (next == cur) break;
    x = next_x;
    cur = next;
  }
  if (pieces.empty()) pieces.push_back({lo, hi, value(cur, lo), lines[cur].second, 0.0});
  return ConvexCost(std::move(pieces));
}

ConvexCost ConvexCost::quadratic(double lo, double hi, double value0, double slope, double curv) {
  return ConvexCost({Piece{lo, hi, value0, slope, curv}});
}

ConvexCost ConvexCost::zero_at_origin() { return ConvexCost({Piece{0.0, 0.0, 0.0, 0.0, 0.0}}); }

double ConvexCost::evaluate(double p) const {
  const Piece* pc = &pieces_.front();
  for (const Piece& q : pieces_) {
    pc = &q;
    if (p <= q.x1) break;
  }
  const double u = p - pc->x0;
  return pc->value + pc->slope * u + pc->curv * u * u;
}

bool ConvexCost::is_convex(double rel_tol) const {
  for (std::size_t i = 0; i + 1 < pieces_.size(); ++i) {
    const Piece& a = pieces_[i];
    const Piece& b = pieces_[i + 1];
    const double len = a.x1 - a.x0;
    const double end_slope = a.slope + 2.0 * a.curv * len;
    const double end_value = a.value + a.slope * len + a.curv * len * len;
    const double scale = std::max({1.0, std::abs(end_slope), std::abs(b.slope)});
    if (b.slope < end_slope - rel_tol * scale) return false;
    if (std::abs(end_value - b.value) > rel_tol * std::max(1.0, std::abs(end_value))) return false;
  }
  return true;
}

}  // namespace imbal
