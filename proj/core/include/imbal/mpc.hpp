#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imbal/battery.hpp"
#include "imbal/dataio.hpp"
#include "imbal/market_model.hpp"
#include "imbal/miqp.hpp"

namespace imbal {

enum class ForecastKind { perfect, gaussian };

struct ForecastModel {
  ForecastKind kind = ForecastKind::perfect;
  double sigma0_mw = 10.0;
  double growth = 1.2;
  std::uint64_t seed = 0;

  /// Noise standard deviation at 1-based horizon step h.
  double sigma(int h) const;
};

ForecastKind forecast_kind_from_string(const std::string& s);
std::string to_string(ForecastKind k);

/// Mean-SI forecasts for quarter hours t .. t+H-1. The noise drawn for a
/// quarter hour depends only on (seed, t, h), so forecasts are reproducible
/// in any call order. Throws ContractError when t + H exceeds the data.
std::vector<double> forecast_si(const std::vector<double>& qh_means, std::size_t t, int H, const ForecastModel& model);

enum class Method { icnn, clearing };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct EpisodeConfig {
  Method method = Method::clearing;
  const IcnnParams* model = nullptr;  // required for Method::icnn
  BatterySpec spec;
  BatteryState initial;
  int horizon = 1;
  ForecastModel forecast;
  SolverConfig solver;
  bool use_sweep = false;  // solve the ICNN program with the sweep path instead of branch-and-bound
  std::size_t first_qh = 0;
  std::size_t qh_count = 0;  // 0 = to the end of the data
};

struct QhRecord {
  long qh = 0;
  int qh_index = 0;
  double si_mean_mw = 0.0;
  double si_forecast_mw = 0.0;
  Action action;
  double qh_price = 0.0;
  double profit = 0.0;
  double predicted_charge_price = 0.0;
  double predicted_discharge_price = 0.0;
  double soc_after = 0.0;
  bool solver_failed = false;

  /// Predicted settled price for the direction actually taken (charge when idle).
  double predicted_price() const { return action.discharge_mw > 0.0 ? predicted_discharge_price : predicted_charge_price; }
};

struct EpisodeResult {
  std::vector<QhRecord> records;
  double cumulative_profit = 0.0;
  double solve_time_s = 0.0;      // not persisted
  std::vector<double> solve_times_s;  // per quarter hour, not persisted
  double discretization_bound = 0.0;  // DP results only
  std::map<std::string, std::string> summary;

  void recompute_total();
};

EpisodeResult run_episode(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const EpisodeConfig& config);

/// Price-taker optimum: dynamic program over `levels` SoC levels on the
/// realized idle prices of quarter hours [first_qh, first_qh + count).
EpisodeResult optimal_pricetaker(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const BatterySpec& spec,
                                 const BatteryState& initial, std::size_t first_qh = 0, std::size_t count = 0,
                                 int levels = 401);

/// Receding-horizon DP: at each quarter hour the DP over the next `horizon`
/// realized prices picks the first action.
EpisodeResult optimal_pricetaker_windowed(const MinuteData& si, const std::vector<QhMeritOrders>& orders,
                                          const BatterySpec& spec, const BatteryState& initial, int horizon,
                                          std::size_t first_qh = 0, std::size_t count = 0, int levels = 401);

/// DP over given prices; exposed for tests.
EpisodeResult dp_over_prices(const std::vector<double>& prices, const BatterySpec& spec, const BatteryState& initial,
                             int levels = 401);

void write_episode_csv(const std::filesystem::path& path, const EpisodeResult& result);
EpisodeResult read_episode_csv(const std::filesystem::path& path);

}  // namespace imbal
