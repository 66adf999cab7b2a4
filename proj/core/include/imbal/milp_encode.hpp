#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "imbal/market_model.hpp"

namespace imbal {

/// Pre-activation bounds of every x-path layer (hidden layers, then output).
struct UnitBounds {
  std::vector<Eigen::RowVectorXd> lower, upper;
};

/// Interval arithmetic through the x-path for p in [p_lo, p_hi] (MW).
UnitBounds propagate_bounds(const XPathNetwork& net, double p_lo, double p_hi);
UnitBounds propagate_bounds(const IcnnParams& params, const Eigen::VectorXd& x_static, double p_lo_mw, double p_hi_mw);

struct MilpVar {
  std::string name;
  double lo = 0.0, hi = 0.0;
  bool binary = false;
};

/// lo <= sum(coef * var) <= hi
struct MilpRow {
  std::string name;
  std::vector<std::pair<int, double>> terms;
  double lo = 0.0, hi = 0.0;
};

struct MilpSystem {
  enum class UnitKind { dead, active, relu };
  struct Unit {
    int layer = 0, index = 0;
    UnitKind kind = UnitKind::relu;
    double lower = 0.0, upper = 0.0;
    int y = -1;      // output variable, -1 for dead units
    int delta = -1;  // binary, relu units only
    std::vector<int> rows;
  };

  std::vector<MilpVar> vars;
  std::vector<MilpRow> rows;
  std::vector<Unit> units;
  int input = -1;   // action magnitude, MW
  int output = -1;  // price in output convention
  int output_row = -1;
  int direction = +1;

  int binary_count() const;
  /// Maximum absolute row violation of an assignment.
  double max_violation(const std::vector<double>& x) const;
  /// CPLEX LP text; coefficients printed with 17 significant digits.
  std::string to_lp(const std::vector<std::pair<int, double>>& objective = {}) const;
};

/// Big-M encoding of the x-path: per ReLU unit y >= a, y >= 0,
/// y <= a - L(1 - delta), y <= U delta. Units with U <= 0 become y = 0 and
/// units with L >= 0 become y = a, both without a binary. Throws
/// EncodingError on non-finite bounds.
MilpSystem encode(const XPathNetwork& net, const UnitBounds& bounds, double p_lo, double p_hi, int direction);

/// Fixes the input to `p` and derives the remaining variables from the
/// encoded rows alone; returns the full assignment. Throws EncodingError if
/// the rows admit no solution.
std::vector<double> solve_fixed_input(const MilpSystem& system, double p, double tol = 1e-9);

/// Smallest p in [p_lo, p_hi] at which each hidden unit becomes active,
/// flattened layer by layer. Pre-activations are nondecreasing in p, so the
/// unit's binary equals [p >= threshold]. Units never active get +inf,
/// units active on the whole range get -inf.
std::vector<double> relu_thresholds(const XPathNetwork& net, double p_lo, double p_hi);

}  // namespace imbal
