#include <doctest.h>

#include <random>

#include "imbal/battery.hpp"
#include "imbal/errors.hpp"

using namespace imbal;

TEST_SUITE("battery") {
  TEST_CASE("idle action leaves the state of charge unchanged") {
    BatterySpec spec = BatterySpec::preset("10mw");
    for (double soc : {0.0, 0.3, 1.0}) CHECK(step_soc(spec, {soc}, Action::idle()).soc == soc);
  }

  TEST_CASE("charge and discharge steps match hand evaluation") {
    BatterySpec spec;
    spec.eff_charge = spec.eff_discharge = 0.94868;
    const BatteryState a = step_soc(spec, {0.10}, Action::charge(1.0));
    CHECK(a.soc == doctest::Approx(0.10 + 0.94868 * 0.25 / 2.0).epsilon(1e-15));
    CHECK(a.soc == doctest::Approx(0.218585).epsilon(1e-6));
    const BatteryState b = step_soc(spec, {0.218585}, Action::discharge(1.0));
    CHECK(b.soc == doctest::Approx(0.218585 - 0.25 / (0.94868 * 2.0)).epsilon(1e-15));
    CHECK(b.soc == doctest::Approx(0.086823).epsilon(1e-5));
  }

  TEST_CASE("infeasible steps name the violated bound") {
    BatterySpec spec;
    try {
      step_soc(spec, {0.99}, Action::charge(1.0));
      FAIL("expected a feasibility error");
    } catch (const FeasibilityError& e) {
      CHECK(e.bound() == FeasibilityError::Bound::soc_max);
    }
    try {
      step_soc(spec, {0.01}, Action::discharge(1.0));
      FAIL("expected a feasibility error");
    } catch (const FeasibilityError& e) {
      CHECK(e.bound() == FeasibilityError::Bound::soc_min);
    }
  }

  TEST_CASE("clamp_feasible saturates at the limits") {
    BatterySpec spec;
    CHECK(clamp_feasible(spec, {spec.soc_max}, Action::charge(1.0)).is_idle());
    CHECK(clamp_feasible(spec, {spec.soc_min}, Action::discharge(1.0)).is_idle());
    const double headroom = soc_per_mw_charge(spec) * spec.power_max_mw;
    const Action full = Action::charge(spec.power_max_mw);
    const Action kept = clamp_feasible(spec, {spec.soc_max - headroom}, full);
    CHECK(kept.charge_mw == full.charge_mw);
    CHECK(kept.discharge_mw == 0.0);
    const Action partial = clamp_feasible(spec, {spec.soc_max - headroom / 2}, full);
    CHECK(partial.charge_mw == doctest::Approx(0.5 * spec.power_max_mw));
  }

  TEST_CASE("a round trip never gains energy") {
    BatterySpec spec;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const double soc0 = 0.2 + 0.6 * U(rng);
      const double p = spec.power_max_mw * U(rng);
      const BatteryState up = step_soc(spec, {soc0}, Action::charge(p));
      // Discharge the energy that was stored.
      const double stored = (up.soc - soc0) * spec.energy_max_mwh;
      const double p_out = stored / spec.delta_t_h * spec.eff_discharge;
      const BatteryState back = step_soc(spec, up, Action::discharge(p_out));
      CHECK(back.soc <= soc0 + 1e-15);
      // Discharging the grid energy that was bought always ends lower.
      const BatteryState loss = step_soc(spec, up, Action::discharge(p * spec.eff_charge * spec.eff_discharge));
      CHECK(loss.soc <= soc0 + 1e-15);
    }
  }

  TEST_CASE("step_soc is affine in the powers") {
    BatterySpec spec;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.0, 0.4);
    auto charge = [&](double c) { return step_soc(spec, {0.5}, Action::charge(c)).soc - 0.5; };
    auto discharge = [&](double d) { return step_soc(spec, {0.5}, Action::discharge(d)).soc - 0.5; };
    for (int i = 0; i < 1000; ++i) {
      const double c1 = U(rng), c2 = U(rng), d1 = U(rng), d2 = U(rng);
      CHECK(std::abs(charge(c1 + c2) - charge(c1) - charge(c2)) < 1e-12);
      CHECK(std::abs(discharge(d1 + d2) - discharge(d1) - discharge(d2)) < 1e-12);
      CHECK(std::abs(charge(c1) - c1 * soc_per_mw_charge(spec)) < 1e-12);
      CHECK(std::abs(discharge(d1) + d1 * soc_per_mw_discharge(spec)) < 1e-12);
    }
  }

  TEST_CASE("spec validation and presets") {
    BatterySpec bad;
    bad.soc_min = 0.8;
    bad.soc_max = 0.2;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = BatterySpec{};
    bad.eff_charge = 1.2;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    for (const char* name : {"1mw", "10mw", "50mw", "100mw"}) {
      const BatterySpec s = BatterySpec::preset(name);
      CHECK(s.energy_max_mwh == doctest::Approx(2.0 * s.power_max_mw));
      CHECK(s.eff_charge * s.eff_discharge == doctest::Approx(0.9));
    }
    CHECK_THROWS(BatterySpec::preset("7mw"));
  }

  TEST_CASE("simultaneous charge and discharge is rejected") {
    BatterySpec spec;
    CHECK_THROWS_AS(validate_action(spec, Action{0.5, 0.5, true}), FeasibilityError);
    CHECK_THROWS_AS(validate_action(spec, Action::charge(2.0)), FeasibilityError);
    CHECK_NOTHROW(validate_action(spec, Action::discharge(1.0)));
  }
}
