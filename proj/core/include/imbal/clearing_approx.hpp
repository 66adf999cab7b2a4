#pragma once

#include "imbal/battery.hpp"
#include "imbal/market_sim.hpp"
#include "imbal/pwl.hpp"

namespace imbal {

/// Quarter-hour clearing approximation: the merit-order price read once at
/// the QH-average net imbalance (no minute resolution).
double approx_price(const PriceLadders& ladders, double mean_si_mw, const Action& action);

/// Step price curve of the clearing approximation versus action magnitude on
/// [0, p_max], in output convention (direction +1: price of charging p;
/// direction -1: negated price of discharging p). Breakpoints sit at the
/// ladder's cumulative volumes (and the zero crossing) shifted by mean SI.
PwlPriceCurve approx_cost_curve(const PriceLadders& ladders, double mean_si_mw, int direction, double p_max_mw);

}  // namespace imbal
