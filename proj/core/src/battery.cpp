#include "imbal/battery.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imbal/errors.hpp"

namespace imbal {

namespace {
// Absolute slack on SoC bounds; results inside the slack are snapped onto the bound.
constexpr double kSocSlack = 1e-9;
}  // namespace

void BatterySpec::validate() const {
  auto fail = [](const char* field) { throw ContractError(std::string("invalid battery spec: ") + field); };
  if (!(power_max_mw > 0.0)) fail("power_max_mw must be > 0");
  if (!(energy_max_mwh > 0.0)) fail("energy_max_mwh must be > 0");
  if (!(eff_charge > 0.0 && eff_charge <= 1.0)) fail("eff_charge must be in (0, 1]");
  if (!(eff_discharge > 0.0 && eff_discharge <= 1.0)) fail("eff_discharge must be in (0, 1]");
  if (!(soc_min >= 0.0 && soc_min < soc_max && soc_max <= 1.0)) fail("need 0 <= soc_min < soc_max <= 1");
  if (!(delta_t_h > 0.0)) fail("delta_t_h must be > 0");
}

BatterySpec BatterySpec::preset(std::string_view name) {
  BatterySpec spec;
  double mw = 0.0;
  if (name == "1mw") mw = 1.0;
  else if (name == "10mw") mw = 10.0;
  else if (name == "50mw") mw = 50.0;
  else if (name == "100mw") mw = 100.0;
  else throw ContractError("unknown battery preset '" + std::string(name) + "'");
  spec.power_max_mw = mw;
  spec.energy_max_mwh = 2.0 * mw;
  return spec;
}

double soc_per_mw_charge(const BatterySpec& spec) {
  return spec.eff_charge * spec.delta_t_h / spec.energy_max_mwh;
}

double soc_per_mw_discharge(const BatterySpec& spec) {
  return spec.delta_t_h / (spec.eff_discharge * spec.energy_max_mwh);
}

void validate_action(const BatterySpec& spec, const Action& action) {
  const double tol = 1e-9 * spec.power_max_mw;
  if (action.charge_mw < 0.0 || action.discharge_mw < 0.0)
    throw FeasibilityError(FeasibilityError::Bound::power, "negative power in action");
  if (action.charge_mw > 0.0 && action.discharge_mw > 0.0)
    throw FeasibilityError(FeasibilityError::Bound::power, "simultaneous charge and discharge");
  const double cap_charge = action.mode_charge ? spec.power_max_mw : 0.0;
  const double cap_discharge = action.mode_charge ? 0.0 : spec.power_max_mw;
  if (action.charge_mw > cap_charge + tol)
    throw FeasibilityError(FeasibilityError::Bound::power, "charge power exceeds mode_flag * power_max");
  if (action.discharge_mw > cap_discharge + tol)
    throw FeasibilityError(FeasibilityError::Bound::power,
                           "discharge power exceeds (1 - mode_flag) * power_max");
}

BatteryState step_soc(const BatterySpec& spec, const BatteryState& state, const Action& action) {
  validate_action(spec, action);
  double soc = state.soc + action.charge_mw * soc_per_mw_charge(spec) -
               action.discharge_mw * soc_per_mw_discharge(spec);
  if (soc > spec.soc_max) {
    if (soc > spec.soc_max + kSocSlack)
      throw FeasibilityError(FeasibilityError::Bound::soc_max,
                             "state of charge above soc_max: " + std::to_string(soc));
    soc = spec.soc_max;
  }
  if (soc < spec.soc_min) {
    if (soc < spec.soc_min - kSocSlack)
      throw FeasibilityError(FeasibilityError::Bound::soc_min,
                             "state of charge below soc_min: " + std::to_string(soc));
    soc = spec.soc_min;
  }
  return {soc};
}

Action clamp_feasible(const BatterySpec& spec, const BatteryState& state, const Action& action) {
  // Direction is taken from the larger requested power.
  if (action.charge_mw > action.discharge_mw) {
    const double headroom = std::max(0.0, spec.soc_max - state.soc) / soc_per_mw_charge(spec);
    const double limit = std::min(spec.power_max_mw, headroom);
    double p = action.charge_mw;
    if (p > limit * (1.0 + 1e-12)) p = limit;
    return p > 0.0 ? Action::charge(p) : Action::idle();
  }
  if (action.discharge_mw > 0.0) {
    const double room = std::max(0.0, state.soc - spec.soc_min) / soc_per_mw_discharge(spec);
    const double limit = std::min(spec.power_max_mw, room);
    double p = action.discharge_mw;
    if (p > limit * (1.0 + 1e-12)) p = limit;
    return p > 0.0 ? Action::discharge(p) : Action::idle();
  }
  return Action::idle();
}

}  // namespace imbal
