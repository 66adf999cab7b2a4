#pragma once

#include <string_view>

namespace imbal {

/// Physical parameters of the controlled storage asset. SoC is a fraction of
/// `energy_max_mwh`.
struct BatterySpec {
  double power_max_mw = 1.0;
  double energy_max_mwh = 2.0;
  double eff_charge = 0.9486832980505138;     // sqrt(0.9): 90 % round trip
  double eff_discharge = 0.9486832980505138;
  double soc_min = 0.0;
  double soc_max = 1.0;
  double delta_t_h = 0.25;

  /// Throws imbal::ContractError when a field is out of range.
  void validate() const;

  /// Named presets "1mw", "10mw", "50mw", "100mw" (2 h duration each).
  static BatterySpec preset(std::string_view name);
};

struct BatteryState {
  double soc = 0.5;
};

/// Constant power held for one quarter hour. At most one of the two powers is
/// nonzero; `mode_charge` is the binary that selects which one may be.
struct Action {
  double charge_mw = 0.0;
  double discharge_mw = 0.0;
  bool mode_charge = false;

  static Action idle() { return {}; }
  static Action charge(double mw) { return {mw, 0.0, true}; }
  static Action discharge(double mw) { return {0.0, mw, false}; }

  bool is_idle() const { return charge_mw == 0.0 && discharge_mw == 0.0; }
  /// Power injected into the grid (discharge minus charge).
  double net_injection_mw() const { return discharge_mw - charge_mw; }
};

/// Checks the Action invariants against `spec`; throws FeasibilityError.
void validate_action(const BatterySpec& spec, const Action& action);

/// SoC after holding `action` for one period. Throws FeasibilityError naming
/// the violated bound when the result leaves [soc_min, soc_max].
BatteryState step_soc(const BatterySpec& spec, const BatteryState& state, const Action& action);

/// Largest action in the requested direction whose step stays feasible; idle
/// when that direction is saturated.
Action clamp_feasible(const BatterySpec& spec, const BatteryState& state, const Action& action);

/// SoC change per MW of charge / discharge over one period.
double soc_per_mw_charge(const BatterySpec& spec);
double soc_per_mw_discharge(const BatterySpec& spec);

}  // namespace imbal
