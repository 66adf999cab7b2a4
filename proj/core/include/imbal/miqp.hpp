#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "imbal/battery.hpp"
#include "imbal/market_model.hpp"
#include "imbal/pwl.hpp"
#include "imbal/qp.hpp"

namespace imbal {

struct SolverConfig {
  double gap_tol = 1e-6;    // relative to max(|incumbent|, 1)
  long node_limit = 200000;
  /// Per-MW objective nudge that breaks ties toward idle and earlier actions.
  double tie_epsilon = 1e-9;
  /// Receives one structured trace line per event when set.
  std::function<void(const std::string&)> trace;
};

/// Receding-horizon problem. networks[t][0] prices charging at step t,
/// networks[t][1] discharging (output convention, MW in, EUR/MWh out).
struct HorizonProblem {
  BatterySpec spec;
  BatteryState initial;
  std::vector<std::array<XPathNetwork, 2>> networks;
  SolverConfig config;

  int horizon() const { return static_cast<int>(networks.size()); }
  void validate() const;
};

struct Solution {
  std::vector<Action> actions;
  double objective = 0.0;                     // EUR, sum of p * price * dt
  std::vector<std::array<double, 2>> prices;  // predicted settled price (EUR/MWh) for charge / discharge at the action
  double gap = 0.0;
  long nodes = 0;
  double wall_time_s = 0.0;
  bool optimal = false;
};

/// Global optimum by branch-and-bound over the mode binaries and the ReLU
/// binaries. Because every pre-activation is nondecreasing in the action,
/// fixing a ReLU binary is the same as bounding the action by that unit's
/// activation threshold, so nodes carry per-(t, direction) power intervals.
/// Node bound: McCormick envelope of p * lambda with lambda bounded from the
/// interval and by the tangents at its ends; intervals containing no
/// threshold use the exact quadratic cost.
Solution solve_bnb(const HorizonProblem& problem);

/// Oracle: exact piecewise-linear prices via extract_pwl, convex
/// piecewise-quadratic costs, all 2^H mode assignments. Refuses H > 8.
Solution solve_sweep(const HorizonProblem& problem);

/// Per step, cost of charging and of discharging as a function of power (EUR).
using StepCosts = std::array<ConvexCost, 2>;

/// Mode enumeration over arbitrary convex per-step costs (shared with the
/// clearing-approximation benchmark). Refuses H > 8.
Solution solve_modes(const BatterySpec& spec, const BatteryState& initial, const std::vector<StepCosts>& costs,
                     const SolverConfig& config = {});

/// Fixed-mode convex subproblem: cost_t = quad_t p_t^2 + lin_t p_t in the
/// direction mode_t (+1 charge, -1 discharge), p_t in [p_lo_t, p_hi_t].
struct LeafProblem {
  BatterySpec spec;
  BatteryState initial;
  std::vector<int> mode;
  std::vector<double> quad, lin;
  std::vector<double> p_lo, p_hi;
};

struct LeafSolution {
  bool feasible = false;
  std::vector<double> power;
  double objective = 0.0;
  qp::Result qp;  // holds the infeasibility certificate when !feasible
};

/// Throws ContractError when a quadratic coefficient is below -1e-12.
LeafSolution solve_qp(const LeafProblem& leaf);

/// Cost of an action under the networks of one step (EUR).
double action_cost(const BatterySpec& spec, const std::array<XPathNetwork, 2>& nets, const Action& a);

}  // namespace imbal
