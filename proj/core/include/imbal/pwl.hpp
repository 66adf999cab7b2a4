#pragma once

#include <utility>
#include <vector>

namespace imbal {

/// Price as a piecewise-linear function of action magnitude, in the market
/// model's output convention (charge: price, discharge: negated price).
///
/// The curve is a polyline through `breakpoints`. Two consecutive points with
/// the same abscissa encode a jump; `evaluate` returns the left limit there.
struct PwlPriceCurve {
  int direction = +1;
  std::vector<std::pair<double, double>> breakpoints;  // (action_mag MW, price)

  double p_min() const { return breakpoints.front().first; }
  double p_max() const { return breakpoints.back().first; }
  double evaluate(double p) const;
  /// Slope of every non-degenerate segment.
  std::vector<double> slopes() const;
  bool continuous(double tol = 1e-12) const;
  bool nondecreasing(double tol = 1e-9) const;
  /// Continuous with nondecreasing slopes.
  bool convex(double rel_tol = 1e-9) const;
};

/// Convex, continuous, piecewise-quadratic cost on [lo, hi]. Piece k covers
/// [x_k, x_{k+1}] and equals value_k + slope_k*u + curv_k*u^2 with u = p - x_k.
class ConvexCost {
 public:
  struct Piece {
    double x0 = 0.0, x1 = 0.0;
    double value = 0.0, slope = 0.0, curv = 0.0;
  };

  ConvexCost() = default;
  explicit ConvexCost(std::vector<Piece> pieces);

  /// Exact p * curve(p) * scale for a continuous convex nondecreasing curve.
  static ConvexCost product_with_action(const PwlPriceCurve& curve, double scale);
  /// Lower convex envelope of p * curve(p) * scale, for curves whose
  /// segments are flat (step prices). Exact between vertices.
  static ConvexCost envelope_of_step_product(const PwlPriceCurve& curve, double scale);
  /// Pointwise maximum of lines `intercept + slope * p` on [lo, hi].
  static ConvexCost max_of_lines(const std::vector<std::pair<double, double>>& lines, double lo, double hi);
  /// value0 + slope * (p - lo) + curv * (p - lo)^2 on [lo, hi].
  static ConvexCost quadratic(double lo, double hi, double value0, double slope, double curv);
  /// Identically zero on [0, 0].
  static ConvexCost zero_at_origin();

  double lo() const { return pieces_.front().x0; }
  double hi() const { return pieces_.back().x1; }
  double evaluate(double p) const;
  const std::vector<Piece>& pieces() const { return pieces_; }
  bool is_convex(double rel_tol = 1e-9) const;

 private:
  std::vector<Piece> pieces_;
};

}  // namespace imbal
