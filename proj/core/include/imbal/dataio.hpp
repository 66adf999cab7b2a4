#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imbal/market_sim.hpp"
#include "imbal/training.hpp"

namespace imbal {

/// Consecutive quarter hours of minute SI. `start_minute` counts UTC minutes
/// since 1970-01-01 of the first minute.
struct MinuteData {
  std::int64_t start_minute = 0;
  std::vector<MinuteTrace> traces;

  std::vector<double> qh_means() const;
};

/// CSV `timestamp,si_mw`, timestamps `YYYY-MM-DDTHH:MM:SSZ` (UTC), one row per
/// minute, strictly consecutive and starting on a quarter-hour boundary.
MinuteData load_minute_si(const std::filesystem::path& path);
void write_minute_si(const std::filesystem::path& path, const MinuteData& data);
std::string format_timestamp(std::int64_t minute);
std::int64_t parse_timestamp(const std::string& text);

inline constexpr double kAfrrStepMw = 2.0;
inline constexpr double kMfrrStepMw = 100.0;

/// Sums volumes at equal prices, then resamples the ladder onto a grid of
/// `step_mw`: each step is priced at the marginal bid at the step's end, and a
/// volume that is not a multiple of the step keeps a final short step.
MeritOrder discretize(const MeritOrder& ladder, double step_mw);
double discretization_step(Product product);

/// CSV `qh,product,direction,price_eur_mwh,volume_mw`; qh is the 0-based
/// quarter-hour ordinal. Every qh from 0 to the largest one must be present.
/// Ladders are sorted, cumulated and discretized on load.
std::vector<QhMeritOrders> load_merit_orders(const std::filesystem::path& path);
void write_merit_orders(const std::filesystem::path& path, const std::vector<QhMeritOrders>& orders);

struct DatasetConfig {
  /// Action magnitudes (MW); every nonzero value yields a charge and a
  /// discharge sample, zero yields one sample per direction.
  std::vector<double> perturbation_mw{0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 35.0, 50.0};
  /// Standard deviation of noise added to the SI forecast feature (MW).
  double forecast_noise_mw = 0.0;
  std::uint64_t seed = 0;
};

/// One context per quarter hour; labels from replay_with_perturbation.
/// Chronological 10:1:1 train/validation/test split.
Dataset build_training_set(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const DatasetConfig& config);

struct ScenarioConfig {
  int days = 365;
  std::uint64_t seed = 1;
  std::int64_t start_minute = 27875520;  // 2023-01-01T00:00:00Z

  double si_mean_mw = 0.0;
  double si_reversion_per_min = 0.03;
  double si_volatility_mw_sqrt_min = 20.0;
  double si_jump_rate_per_min = 0.01;
  double si_jump_std_mw = 80.0;
  double si_diurnal_amplitude_mw = 30.0;
  double si_clip_mw = 900.0;

  double afrr_depth_mw = 150.0;
  double afrr_bid_min_mw = 5.0;
  double afrr_bid_max_mw = 15.0;
  double afrr_up_base_eur_mwh = 80.0;
  double afrr_down_base_eur_mwh = 50.0;
  double afrr_slope_eur_mwh_per_mw = 1.0;
  double price_diurnal_amplitude_eur_mwh = 20.0;
  double price_noise_eur_mwh = 10.0;

  double mfrr_depth_mw = 1100.0;
  double mfrr_bid_min_mw = 50.0;
  double mfrr_bid_max_mw = 150.0;
  double mfrr_gap_eur_mwh = 15.0;
  double mfrr_step_min_eur_mwh = 10.0;
  double mfrr_step_max_eur_mwh = 50.0;

  /// Mirror-image up/down ladders around a fixed midpoint with no price noise.
  bool symmetric_ladders = false;

  void validate() const;
};

struct Scenario {
  MinuteData si;
  std::vector<QhMeritOrders> orders;  // discretized
  std::vector<QhMeritOrders> raw_orders;
};

Scenario generate_synthetic(const ScenarioConfig& config);

}  // namespace imbal
