#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "imbal/autodiff.hpp"
#include "imbal/market_sim.hpp"
#include "imbal/pwl.hpp"

namespace imbal {

inline constexpr int kKeyDim = 5;         // bid key width
inline constexpr int kBidFeatureDim = 6;  // key plus normalized price
inline constexpr int kLadderCount = 4;    // aFRR up, aFRR down, mFRR up, mFRR down

/// Ladder slot order used by the model.
std::array<std::pair<Product, Direction>, kLadderCount> ladder_slots();

/// Per-bid inputs of one ladder in physical units. Columns of `keys`: price
/// difference to the previous bid, to the next bid (zero at the edges),
/// cum_volume minus the volume the forecast SI activates on this side,
/// its absolute value, and cum_volume.
struct LadderFeatures {
  Eigen::MatrixXd keys;   // n x 5
  Eigen::VectorXd price;  // n

  int size() const { return static_cast<int>(price.size()); }
};

LadderFeatures bid_features(const MeritOrder& ladder, double si_forecast_mw);

/// Everything the model sees about one quarter hour except the action.
struct QhContext {
  double si_forecast_mw = 0.0;
  double si_lag1_mw = 0.0;
  double si_lag2_mw = 0.0;
  int qh_index = 0;
  std::array<LadderFeatures, kLadderCount> ladders;
};

QhContext make_context(const QhMeritOrders& orders, double si_forecast_mw, double si_lag1_mw, double si_lag2_mw,
                       int qh_index);

struct MarketFeatures {
  QhContext context;
  double action_mag_mw = 0.0;
  int dir_flag = +1;  // +1 charge, -1 discharge

  void validate() const;
};

struct ModelConfig {
  std::vector<int> var_hidden{64, 32};
  std::vector<int> static_hidden{1024, 512};
  std::vector<int> embed_hidden{256, 128};
  int embed_dim = 4;
  int attn_dim = 16;
  std::array<int, kLadderCount> top_k{64, 64, 8, 8};
  double action_scale_mw = 100.0;
  double si_scale_mw = 100.0;
  double price_scale = 100.0;
  double volume_scale_mw = 100.0;

  static ModelConfig full();
  static ModelConfig desk();
  int static_input_dim() const;
  void validate() const;
};

/// Trainable parameters. Row-vector convention: a layer maps h to h * W + b.
///
/// x-path, k = var_hidden.size():
///   z_1 = relu(x wx[0] + u_0 wuz[0] + bz[0])
///   z_i = relu(z_{i-1} wz[i-2] + x wx[i-1] + u_{i-1} wuz[i-1] + bz[i-1])
///   out = z_k wz[k-1] + x wx[k] + u_k wuz[k] + bz[k]           (linear)
/// static path: u_0 = x_static, u_i = relu(u_{i-1} wu[i-1] + bu[i-1]).
struct IcnnParams {
  ModelConfig config;
  std::vector<ad::Parameter> embed_w, embed_b;
  std::array<ad::Parameter, kLadderCount> attn_wq, attn_bq, attn_wk, attn_bk;
  std::vector<ad::Parameter> wu, bu;
  std::vector<ad::Parameter> wz, wx, wuz, bz;

  /// Kaiming-uniform initialization followed by the nonnegativity projection.
  static IcnnParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<ad::Parameter*> all();
  std::vector<const ad::Parameter*> all() const;
  /// Clamps every element of wz and wx at zero.
  void project();
  /// Shape chain and nonnegativity; throws ShapeError / ContractError.
  void validate() const;
  int var_relu_units() const;
};

Eigen::VectorXd embed_qh(int qh_index, const IcnnParams& params);

struct GatedLadder {
  Eigen::VectorXd weights;    // softmax weight of every bid
  std::vector<int> selected;  // chosen bid indices, by weight descending
  Eigen::MatrixXd features;   // k x 6, weight-scaled, zero-padded
};

std::array<GatedLadder, kLadderCount> gate_bids(const QhContext& context, const IcnnParams& params);

/// x_static = embedding | gated ladders (flattened) | SI triple | dir_flag.
Eigen::VectorXd static_input(const QhContext& context, int dir_flag, const IcnnParams& params);

/// Network output in normalized units for normalized scalar input x_var.
double icnn_forward(double x_var, const Eigen::VectorXd& x_static, const IcnnParams& params);

/// The x-path with the static contributions folded into per-unit constants
/// and the input/output scaling folded into the weights: evaluate() takes
/// action magnitude in MW and returns EUR/MWh in output convention.
/// Layer i pre-activation: z_{i-1} * wz[i-1] (i > 0) + p * wx[i] + c[i].
struct XPathNetwork {
  std::vector<Eigen::RowVectorXd> wx;
  std::vector<Eigen::MatrixXd> wz;
  std::vector<Eigen::RowVectorXd> c;

  int layers() const { return static_cast<int>(wx.size()); }
  int hidden_units() const;
  double evaluate(double p) const;
  /// One-sided derivative; `right` picks the slope on [p, p + eps).
  double slope(double p, bool right) const;
  /// Pre-activations of every layer at p.
  std::vector<Eigen::RowVectorXd> pre_activations(double p) const;
};

XPathNetwork x_path(const IcnnParams& params, const Eigen::VectorXd& x_static);
XPathNetwork x_path(const QhContext& context, int dir_flag, const IcnnParams& params);
/// Both directions, {charge (+1), discharge (-1)}, sharing the static work.
std::array<XPathNetwork, 2> x_paths(const QhContext& context, const IcnnParams& params);

/// x_paths with the quarter-hour embeddings computed once up front. Holds a
/// reference to the parameters, which must outlive it.
class XPathBuilder {
 public:
  explicit XPathBuilder(const IcnnParams& params);
  std::array<XPathNetwork, 2> operator()(const QhContext& context) const;

 private:
  const IcnnParams* params_;
  std::array<Eigen::VectorXd, kQhPerDay> embeddings_;
};

/// Output-convention price: lambda for dir_flag = +1, the negated price for -1.
double predict_price(const MarketFeatures& features, const IcnnParams& params);
/// The settled-price estimate in EUR/MWh regardless of direction.
double predict_true_price(const MarketFeatures& features, const IcnnParams& params);

/// Exact breakpoints of the output-convention price on [0, p_max_mw].
/// `max_breakpoints` <= 0 means 4 x the x-path ReLU count.
PwlPriceCurve extract_pwl(const XPathNetwork& net, int direction, double p_max_mw, int max_breakpoints = 0,
                          double slope_tol = 1e-9);
PwlPriceCurve extract_pwl(const QhContext& context, const IcnnParams& params, int direction, double p_max_mw);

}  // namespace imbal
