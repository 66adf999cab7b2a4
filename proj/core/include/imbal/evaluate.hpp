#pragma once

#include <string>
#include <vector>

#include "imbal/battery.hpp"
#include "imbal/mpc.hpp"

namespace imbal {

/// Quarter-hour selection by realized |mean SI| against a threshold (MW).
struct SiFilter {
  enum class Kind { all, large, small } kind = Kind::all;
  double threshold_mw = 20.0;

  static SiFilter all() { return {}; }
  static SiFilter large(double t = 20.0) { return {Kind::large, t}; }
  static SiFilter small(double t = 20.0) { return {Kind::small, t}; }
  bool accepts(double si_mean_mw) const;
  std::string label() const;
};

/// Sum of profit over the filtered quarter hours / (P_max * their count).
/// Throws MetricError when the filter selects nothing.
double profit_per_mw_qh(const EpisodeResult& result, const BatterySpec& spec, const SiFilter& filter);

/// Fraction of filtered quarter hours with zero charge and zero discharge.
double idle_probability(const EpisodeResult& result, const SiFilter& filter);

struct BinRmse {
  double lo = 0.0, hi = 0.0;  // |SI| range [lo, hi)
  std::size_t count = 0;
  double rmse = 0.0;          // NaN when the bin is empty
};

/// RMSE of predictions per |SI| bin; `edges` are interior bin edges.
/// Throws MetricError when the series lengths differ.
std::vector<BinRmse> price_rmse_by_bin(const std::vector<double>& predicted, const std::vector<double>& realized,
                                       const std::vector<double>& si_mean_mw, const std::vector<double>& edges = {20.0});
/// Same, from an episode's predicted and settled prices. Throws MetricError
/// when the records are not in consecutive quarter-hour order.
std::vector<BinRmse> price_rmse_by_bin(const EpisodeResult& result, const std::vector<double>& edges = {20.0});

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);
std::string format_mean_std(const MeanStd& m, int precision = 3);

}  // namespace imbal
