#pragma once

#include <array>
#include <string_view>
#include <utility>
#include <vector>

#include "imbal/battery.hpp"

namespace imbal {

/// Sign convention used throughout: SI > 0 is a system surplus, and charging
/// the battery subtracts from SI.
enum class Product { aFRR, mFRR };
enum class Direction { up, down };

std::string_view to_string(Product p);
std::string_view to_string(Direction d);
Product product_from_string(std::string_view s);
Direction direction_from_string(std::string_view s);

struct Bid {
  double price = 0.0;       // EUR/MWh
  double volume = 0.0;      // MW
  double cum_volume = 0.0;  // MW, including this bid
};

/// One discretized ladder. Up ladders ascend in price, down ladders descend.
struct MeritOrder {
  Product product = Product::aFRR;
  Direction direction = Direction::up;
  std::vector<Bid> bids;

  /// Builds a ladder from (price, volume) pairs: sorts in merit order and
  /// cumulates. No discretization is applied.
  static MeritOrder from_bids(Product product, Direction direction,
                              std::vector<std::pair<double, double>> price_volume);

  double depth() const { return bids.empty() ? 0.0 : bids.back().cum_volume; }
  /// Throws ContractError when ordering or volume invariants fail.
  void validate() const;
};

/// The four ARC ladders of one quarter hour.
struct QhMeritOrders {
  MeritOrder afrr_up{Product::aFRR, Direction::up, {}};
  MeritOrder afrr_down{Product::aFRR, Direction::down, {}};
  MeritOrder mfrr_up{Product::mFRR, Direction::up, {}};
  MeritOrder mfrr_down{Product::mFRR, Direction::down, {}};

  const MeritOrder& ladder(Product p, Direction d) const;
  MeritOrder& ladder(Product p, Direction d);
};

/// aFRR and mFRR merged by price per direction; the ladder the per-minute
/// marginal price is read from.
class PriceLadders {
 public:
  PriceLadders() = default;
  explicit PriceLadders(const QhMeritOrders& orders);

  /// Marginal price at net imbalance `net_si_mw`. Shortage reads the up
  /// ladder at |net_si|, surplus the down ladder, zero the midpoint of the
  /// first up and first down bid. Throws LadderExhaustedError past the depth.
  double marginal_price(double net_si_mw) const;

  double up_depth() const { return up_cum_.empty() ? 0.0 : up_cum_.back(); }
  double down_depth() const { return down_cum_.empty() ? 0.0 : down_cum_.back(); }
  /// Cumulative volumes (MW) where the marginal price changes, per direction.
  const std::vector<double>& up_cum() const { return up_cum_; }
  const std::vector<double>& down_cum() const { return down_cum_; }
  const std::vector<double>& up_price() const { return up_price_; }
  const std::vector<double>& down_price() const { return down_price_; }

 private:
  std::vector<double> up_cum_, up_price_;
  std::vector<double> down_cum_, down_price_;
};

double marginal_price(const QhMeritOrders& orders, double net_si_mw);

inline constexpr int kMinutesPerQh = 15;
inline constexpr int kQhPerDay = 96;

struct MinuteTrace {
  int qh_index = 0;  // 0..95 within the day
  std::array<double, kMinutesPerQh> si_mw{};

  double mean() const;
};

struct Settlement {
  double qh_price = 0.0;        // EUR/MWh, applied to both surplus and shortage
  double battery_profit = 0.0;  // EUR
  double net_si_mean = 0.0;     // MW
};

/// Settles one quarter hour at minute resolution: every minute's net SI is
/// priced on the merged ladder and the QH price is the minute average.
Settlement settle_qh(const PriceLadders& ladders, const MinuteTrace& trace, const Action& action,
                     double delta_t_h = 0.25);

/// Price of the quarter hour with every minute shifted by `delta_mw`
/// (positive = extra surplus). No battery profit is booked.
Settlement replay_with_perturbation(const PriceLadders& ladders, const MinuteTrace& trace,
                                    double delta_mw);

}  // namespace imbal
