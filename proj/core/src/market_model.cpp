#include "imbal/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "imbal/errors.hpp"

namespace imbal {

std::array<std::pair<Product, Direction>, kLadderCount> ladder_slots() {
  return {{{Product::aFRR, Direction::up},
           {Product::aFRR, Direction::down},
           {Product::mFRR, Direction::up},
           {Product::mFRR, Direction::down}}};
}

LadderFeatures bid_features(const MeritOrder& ladder, double si_forecast_mw) {
  const auto n = static_cast<Eigen::Index>(ladder.bids.size());
  LadderFeatures f;
  f.keys.setZero(n, kKeyDim);
  f.price.resize(n);
  // Volume the forecast activates on this side: shortage draws on up bids.
  const double need = ladder.direction == Direction::up ? -si_forecast_mw : si_forecast_mw;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Bid& b = ladder.bids[static_cast<std::size_t>(i)];
    f.price(i) = b.price;
    f.keys(i, 0) = i > 0 ? b.price - ladder.bids[static_cast<std::size_t>(i - 1)].price : 0.0;
    f.keys(i, 1) = i + 1 < n ? ladder.bids[static_cast<std::size_t>(i + 1)].price - b.price : 0.0;
    f.keys(i, 2) = b.cum_volume - need;
    f.keys(i, 3) = std::abs(b.cum_volume - need);
    f.keys(i, 4) = b.cum_volume;
  }
  return f;
}

QhContext make_context(const QhMeritOrders& orders, double si_forecast_mw, double si_lag1_mw, double si_lag2_mw,
                       int qh_index) {
  if (qh_index < 0 || qh_index >= kQhPerDay) throw ContractError("qh_index out of range: " + std::to_string(qh_index));
  QhContext c;
  c.si_forecast_mw = si_forecast_mw;
  c.si_lag1_mw = si_lag1_mw;
  c.si_lag2_mw = si_lag2_mw;
  c.qh_index = qh_index;
  const auto slots = ladder_slots();
  for (std::size_t l = 0; l < slots.size(); ++l)
    c.ladders[l] = bid_features(orders.ladder(slots[l].first, slots[l].second), si_forecast_mw);
  return c;
}

void MarketFeatures::validate() const {
  if (!(action_mag_mw >= 0.0) || !std::isfinite(action_mag_mw)) throw ContractError("action_mag must be >= 0");
  if (dir_flag != 1 && dir_flag != -1) throw ContractError("dir_flag must be +1 or -1");
  if (context.qh_index < 0 || context.qh_index >= kQhPerDay) throw ContractError("qh_index out of range");
  for (const auto& l : context.ladders)
    if (l.keys.rows() != l.price.size() || l.keys.cols() != kKeyDim) throw ShapeError("bid key rows must match ladder");
}

ModelConfig ModelConfig::full() { return {}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.var_hidden = {8, 4};
  c.static_hidden = {64, 32};
  return c;
}

int ModelConfig::static_input_dim() const {
  int dim = embed_dim + 3 + 1;
  for (int k : top_k) dim += k * kBidFeatureDim;
  return dim;
}

void ModelConfig::validate() const {
  if (var_hidden.empty() || var_hidden.size() != static_hidden.size())
    throw ContractError("x-path and static path need the same nonzero depth");
  auto positive = [](const std::vector<int>& v) { return std::all_of(v.begin(), v.end(), [](int n) { return n > 0; }); };
  if (!positive(var_hidden) || !positive(static_hidden) || !positive(embed_hidden) || embed_dim <= 0 || attn_dim <= 0)
    throw ContractError("layer widths must be positive");
  for (int k : top_k)
    if (k <= 0) throw ContractError("top-k must be positive");
  if (action_scale_mw <= 0 || si_scale_mw <= 0 || price_scale <= 0 || volume_scale_mw <= 0)
    throw ContractError("normalization scales must be positive");
}

namespace {

ad::Parameter make_param(std::string name, int rows, int cols, double bound, std::mt19937_64& rng, bool nonneg = false) {
  ad::Parameter p;
  p.name = std::move(name);
  p.value.resize(rows, cols);
  std::uniform_real_distribution<double> U(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = U(rng);
  p.nonnegative = nonneg;
  p.zero_grad();
  return p;
}

ad::Parameter weight(std::string name, int rows, int cols, std::mt19937_64& rng, bool nonneg = false) {
  return make_param(std::move(name), rows, cols, std::sqrt(6.0 / rows), rng, nonneg);
}

ad::Parameter bias(std::string name, int fan_in, int cols, std::mt19937_64& rng) {
  return make_param(std::move(name), 1, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void check_shape(const ad::Parameter& p, Eigen::Index r, Eigen::Index c) {
  if (p.value.rows() != r || p.value.cols() != c)
    throw ShapeError(p.name + ": expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                     std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
}

}  // namespace

IcnnParams IcnnParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  IcnnParams p;
  p.config = config;

  std::vector<int> e{kQhPerDay};
  e.insert(e.end(), config.embed_hidden.begin(), config.embed_hidden.end());
  e.push_back(config.embed_dim);
  for (std::size_t i = 0; i + 1 < e.size(); ++i) {
    p.embed_w.push_back(weight("embed_w" + std::to_string(i), e[i], e[i + 1], rng));
    p.embed_b.push_back(bias("embed_b" + std::to_string(i), e[i], e[i + 1], rng));
  }
  for (int l = 0; l < kLadderCount; ++l) {
    const std::string s = std::to_string(l);
    p.attn_wq[l] = weight("attn_wq" + s, 3, config.attn_dim, rng);
    p.attn_bq[l] = bias("attn_bq" + s, 3, config.attn_dim, rng);
    p.attn_wk[l] = weight("attn_wk" + s, kKeyDim, config.attn_dim, rng);
    p.attn_bk[l] = bias("attn_bk" + s, kKeyDim, config.attn_dim, rng);
  }

  const int k = static_cast<int>(config.var_hidden.size());
  std::vector<int> u{config.static_input_dim()};
  u.insert(u.end(), config.static_hidden.begin(), config.static_hidden.end());
  std::vector<int> z(config.var_hidden);
  z.push_back(1);
  for (int i = 0; i < k; ++i) {
    p.wu.push_back(weight("wu" + std::to_string(i), u[i], u[i + 1], rng));
    p.bu.push_back(bias("bu" + std::to_string(i), u[i], u[i + 1], rng));
  }
  for (int i = 0; i <= k; ++i) {
    const std::string s = std::to_string(i);
    if (i > 0) p.wz.push_back(weight("wz" + std::to_string(i - 1), z[i - 1], z[i], rng, true));
    p.wx.push_back(weight("wx" + s, 1, z[i], rng, true));
    p.wuz.push_back(weight("wuz" + s, u[i], z[i], rng));
    p.bz.push_back(bias("bz" + s, u[i] + 1 + (i > 0 ? z[i - 1] : 0), z[i], rng));
  }
  p.project();
  return p;
}

std::vector<ad::Parameter*> IcnnParams::all() {
  std::vector<ad::Parameter*> v;
  for (auto* group : {&embed_w, &embed_b})
    for (auto& x : *group) v.push_back(&x);
  for (auto* group : {&attn_wq, &attn_bq, &attn_wk, &attn_bk})
    for (auto& x : *group) v.push_back(&x);
  for (auto* group : {&wu, &bu, &wz, &wx, &wuz, &bz})
    for (auto& x : *group) v.push_back(&x);
  return v;
}

std::vector<const ad::Parameter*> IcnnParams::all() const {
  auto v = const_cast<IcnnParams*>(this)->all();
  return {v.begin(), v.end()};
}

void IcnnParams::project() {
  for (auto* group : {&wz, &wx})
    for (auto& w : *group) w.value = w.value.cwiseMax(0.0);
}

void IcnnParams::validate() const {
  config.validate();
  const int k = static_cast<int>(config.var_hidden.size());
  if (embed_w.size() != config.embed_hidden.size() + 1 || embed_b.size() != embed_w.size())
    throw ShapeError("embedding depth mismatch");
  std::vector<int> e{kQhPerDay};
  e.insert(e.end(), config.embed_hidden.begin(), config.embed_hidden.end());
  e.push_back(config.embed_dim);
  for (std::size_t i = 0; i < embed_w.size(); ++i) {
    check_shape(embed_w[i], e[i], e[i + 1]);
    check_shape(embed_b[i], 1, e[i + 1]);
  }
  for (int l = 0; l < kLadderCount; ++l) {
    check_shape(attn_wq[l], 3, config.attn_dim);
    check_shape(attn_bq[l], 1, config.attn_dim);
    check_shape(attn_wk[l], kKeyDim, config.attn_dim);
    check_shape(attn_bk[l], 1, config.attn_dim);
  }
  if (static_cast<int>(wu.size()) != k || static_cast<int>(bu.size()) != k || static_cast<int>(wz.size()) != k ||
      static_cast<int>(wx.size()) != k + 1 || static_cast<int>(wuz.size()) != k + 1 ||
      static_cast<int>(bz.size()) != k + 1)
    throw ShapeError("ICNN depth mismatch");
  std::vector<int> u{config.static_input_dim()};
  u.insert(u.end(), config.static_hidden.begin(), config.static_hidden.end());
  std::vector<int> z(config.var_hidden);
  z.push_back(1);
  for (int i = 0; i < k; ++i) {
    check_shape(wu[i], u[i], u[i + 1]);
    check_shape(bu[i], 1, u[i + 1]);
    check_shape(wz[i], z[i], z[i + 1]);
  }
  for (int i = 0; i <= k; ++i) {
    check_shape(wx[i], 1, z[i]);
    check_shape(wuz[i], u[i], z[i]);
    check_shape(bz[i], 1, z[i]);
  }
  for (const auto* group : {&wz, &wx})
    for (const auto& w : *group)
      if (w.value.size() > 0 && w.value.minCoeff() < 0.0) throw ContractError(w.name + " has a negative element");
}

int IcnnParams::var_relu_units() const {
  int n = 0;
  for (int h : config.var_hidden) n += h;
  return n;
}

Eigen::VectorXd embed_qh(int qh_index, const IcnnParams& params) {
  if (qh_index < 0 || qh_index >= kQhPerDay) throw ContractError("qh_index out of range: " + std::to_string(qh_index));
  Eigen::RowVectorXd h = params.embed_w[0].value.row(qh_index) + params.embed_b[0].value;
  for (std::size_t i = 1; i < params.embed_w.size(); ++i) {
    h = h.cwiseMax(0.0);
    h = h * params.embed_w[i].value + params.embed_b[i].value;
  }
  return h.transpose();
}

namespace {

Eigen::RowVector3d si_triple(const QhContext& c, const ModelConfig& cfg) {
  return Eigen::RowVector3d(c.si_forecast_mw, c.si_lag1_mw, c.si_lag2_mw) / cfg.si_scale_mw;
}

}  // namespace

std::array<GatedLadder, kLadderCount> gate_bids(const QhContext& context, const IcnnParams& params) {
  const ModelConfig& cfg = params.config;
  const Eigen::RowVector3d si = si_triple(context, cfg);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
  std::array<GatedLadder, kLadderCount> out;
  for (int l = 0; l < kLadderCount; ++l) {
    const LadderFeatures& lf = context.ladders[static_cast<std::size_t>(l)];
    const int n = lf.size();
    if (lf.keys.rows() != n || lf.keys.cols() != kKeyDim) throw ShapeError("bid keys shape");
    GatedLadder& g = out[static_cast<std::size_t>(l)];
    const int k = cfg.top_k[static_cast<std::size_t>(l)];
    g.features.setZero(k, kBidFeatureDim);
    g.weights.resize(n);
    if (n == 0) continue;

    Eigen::MatrixXd feat(n, kBidFeatureDim);
    feat.col(0) = lf.keys.col(0) / cfg.price_scale;
    feat.col(1) = lf.keys.col(1) / cfg.price_scale;
    feat.middleCols(2, 3) = lf.keys.middleCols(2, 3) / cfg.volume_scale_mw;
    feat.col(5) = lf.price / cfg.price_scale;

    // (feat * Wk + bk) q' evaluated as feat * (Wk q') + bk q'.
    const Eigen::RowVectorXd q = si * params.attn_wq[l].value + params.attn_bq[l].value;
    const Eigen::VectorXd wq = params.attn_wk[l].value * q.transpose();
    const double bq = params.attn_bk[l].value.row(0).dot(q);
    Eigen::VectorXd s = ((feat.leftCols(kKeyDim) * wq).array() + bq).matrix() * inv_sqrt_d;
    const double mx = s.maxCoeff();
    g.weights = (s.array() - mx).exp().matrix();
    g.weights /= g.weights.sum();

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    g.selected = ad::topk_indices(g.weights.data(), ones.data(), n, k);
    for (std::size_t s_i = 0; s_i < g.selected.size(); ++s_i) {
      const int b = g.selected[s_i];
      g.features.row(static_cast<Eigen::Index>(s_i)) = g.weights(b) * feat.row(b);
    }
  }
  return out;
}

namespace {

Eigen::VectorXd static_input(const QhContext& context, double dir_flag, const Eigen::VectorXd& emb,
                             const IcnnParams& params) {
  const ModelConfig& cfg = params.config;
  Eigen::VectorXd x(cfg.static_input_dim());
  Eigen::Index off = 0;
  x.segment(off, emb.size()) = emb;
  off += emb.size();
  const auto gated = gate_bids(context, params);
  for (const auto& g : gated)
    for (Eigen::Index r = 0; r < g.features.rows(); ++r) {
      x.segment(off, kBidFeatureDim) = g.features.row(r).transpose();
      off += kBidFeatureDim;
    }
  x.segment(off, 3) = si_triple(context, cfg).transpose();
  off += 3;
  x(off) = dir_flag;
  return x;
}

}  // namespace

Eigen::VectorXd static_input(const QhContext& context, int dir_flag, const IcnnParams& params) {
  if (dir_flag != 1 && dir_flag != -1) throw ContractError("dir_flag must be +1 or -1");
  return static_input(context, dir_flag, embed_qh(context.qh_index, params), params);
}

namespace {

/// Per-layer constants u_i * wuz[i] + bz[i] of the x-path, given the first
/// layer's static products x_static * wuz[0] + bz[0] and x_static * wu[0] + bu[0].
std::vector<Eigen::RowVectorXd> static_constants(Eigen::RowVectorXd c0, Eigen::RowVectorXd u1_pre,
                                                 const IcnnParams& params) {
  const int k = static_cast<int>(params.wu.size());
  std::vector<Eigen::RowVectorXd> c;
  c.push_back(std::move(c0));
  if (k == 0) return c;
  Eigen::RowVectorXd u = u1_pre.cwiseMax(0.0);
  for (int i = 1; i <= k; ++i) {
    c.push_back(u * params.wuz[i].value + params.bz[i].value);
    if (i < k) u = (u * params.wu[i].value + params.bu[i].value).cwiseMax(0.0);
  }
  return c;
}

std::vector<Eigen::RowVectorXd> static_constants(const Eigen::VectorXd& x_static, const IcnnParams& params) {
  if (x_static.size() != params.wuz[0].value.rows())
    throw ShapeError("x_static has " + std::to_string(x_static.size()) + " entries, expected " +
                     std::to_string(params.wuz[0].value.rows()));
  const Eigen::RowVectorXd x = x_static.transpose();
  Eigen::RowVectorXd u1;
  if (!params.wu.empty()) u1 = x * params.wu[0].value + params.bu[0].value;
  return static_constants(x * params.wuz[0].value + params.bz[0].value, std::move(u1), params);
}

XPathNetwork fold(const std::vector<Eigen::RowVectorXd>& c, const IcnnParams& params) {
  const ModelConfig& cfg = params.config;
  const int k = static_cast<int>(params.wz.size());
  const double s_in = 1.0 / cfg.action_scale_mw;
  const double s_out = cfg.price_scale;
  XPathNetwork net;
  for (int i = 0; i <= k; ++i) {
    const double so = i == k ? s_out : 1.0;
    net.wx.push_back(params.wx[i].value.row(0) * s_in * so);
    net.c.push_back(c[static_cast<std::size_t>(i)] * so);
    if (i > 0) net.wz.push_back(params.wz[i - 1].value * so);
  }
  return net;
}

}  // namespace

double icnn_forward(double x_var, const Eigen::VectorXd& x_static, const IcnnParams& params) {
  const auto c = static_constants(x_static, params);
  const int k = static_cast<int>(params.wz.size());
  Eigen::RowVectorXd z = (x_var * params.wx[0].value + c[0]).cwiseMax(0.0);
  for (int i = 1; i <= k; ++i) {
    Eigen::RowVectorXd a = z * params.wz[i - 1].value + x_var * params.wx[i].value + c[i];
    z = i < k ? a.cwiseMax(0.0) : a;
  }
  return z(0);
}

int XPathNetwork::hidden_units() const {
  int n = 0;
  for (int i = 0; i + 1 < layers(); ++i) n += static_cast<int>(wx[i].size());
  return n;
}

std::vector<Eigen::RowVectorXd> XPathNetwork::pre_activations(double p) const {
  std::vector<Eigen::RowVectorXd> pre;
  Eigen::RowVectorXd z;
  for (int i = 0; i < layers(); ++i) {
    Eigen::RowVectorXd a = p * wx[i] + c[i];
    if (i > 0) a.noalias() += z * wz[i - 1];
    pre.push_back(a);
    z = a.cwiseMax(0.0);
  }
  return pre;
}

double XPathNetwork::evaluate(double p) const { return pre_activations(p).back()(0); }

double XPathNetwork::slope(double p, bool right) const {
  Eigen::RowVectorXd z, dz;
  double out = 0.0;
  for (int i = 0; i < layers(); ++i) {
    Eigen::RowVectorXd a = p * wx[i] + c[i];
    Eigen::RowVectorXd da = wx[i];
    if (i > 0) {
      a.noalias() += z * wz[i - 1];
      da.noalias() += dz * wz[i - 1];
    }
    if (i + 1 == layers()) {
      out = da(0);
      break;
    }
    z = a.cwiseMax(0.0);
    dz.resize(a.size());
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      // Pre-activations are nondecreasing in p, so at a == 0 the unit turns
      // on to the right and is off to the left.
      const bool on = a(j) > 0.0 || (right && a(j) == 0.0 && da(j) > 0.0);
      dz(j) = on ? da(j) : 0.0;
    }
  }
  return out;
}

XPathNetwork x_path(const IcnnParams& params, const Eigen::VectorXd& x_static) {
  return fold(static_constants(x_static, params), params);
}

XPathNetwork x_path(const QhContext& context, int dir_flag, const IcnnParams& params) {
  return x_path(params, static_input(context, dir_flag, params));
}

namespace {

std::array<XPathNetwork, 2> x_paths(const QhContext& context, const Eigen::VectorXd& emb, const IcnnParams& params) {
  // The static input is affine in dir_flag, its last entry, so the costly
  // first-layer products are shared between the two directions.
  const Eigen::VectorXd xs = static_input(context, 0.0, emb, params);
  const Eigen::Index last = xs.size() - 1;
  const Eigen::RowVectorXd x = xs.transpose();
  const Eigen::RowVectorXd c0 = x * params.wuz[0].value + params.bz[0].value;
  const Eigen::RowVectorXd dc0 = params.wuz[0].value.row(last);
  Eigen::RowVectorXd u1, du1;
  if (!params.wu.empty()) {
    u1 = x * params.wu[0].value + params.bu[0].value;
    du1 = params.wu[0].value.row(last);
  }
  std::array<XPathNetwork, 2> out;
  for (int d = 0; d < 2; ++d) {
    const double flag = d == 0 ? 1.0 : -1.0;
    out[static_cast<std::size_t>(d)] =
        fold(static_constants(c0 + flag * dc0, params.wu.empty() ? u1 : Eigen::RowVectorXd(u1 + flag * du1), params),
             params);
  }
  return out;
}

}  // namespace

std::array<XPathNetwork, 2> x_paths(const QhContext& context, const IcnnParams& params) {
  return x_paths(context, embed_qh(context.qh_index, params), params);
}

XPathBuilder::XPathBuilder(const IcnnParams& params) : params_(&params) {
  for (int q = 0; q < kQhPerDay; ++q) embeddings_[static_cast<std::size_t>(q)] = embed_qh(q, params);
}

std::array<XPathNetwork, 2> XPathBuilder::operator()(const QhContext& context) const {
  if (context.qh_index < 0 || context.qh_index >= kQhPerDay)
    throw ContractError("qh_index out of range: " + std::to_string(context.qh_index));
  return x_paths(context, embeddings_[static_cast<std::size_t>(context.qh_index)], *params_);
}

double predict_price(const MarketFeatures& features, const IcnnParams& params) {
  features.validate();
  const Eigen::VectorXd xs = static_input(features.context, features.dir_flag, params);
  return icnn_forward(features.action_mag_mw / params.config.action_scale_mw, xs, params) * params.config.price_scale;
}

double predict_true_price(const MarketFeatures& features, const IcnnParams& params) {
  return features.dir_flag * predict_price(features, params);
}

namespace {

struct Extractor {
  const XPathNetwork& net;
  double slope_tol;
  int cap;
  std::vector<std::pair<double, double>>& out;

  void refine(double a, double fa, double sa, double b, double fb, double sb, int depth) {
    const double scale = 1.0 + std::abs(sa) + std::abs(sb);
    if (sb - sa <= slope_tol * scale || b - a <= 1e-12 * (1.0 + std::abs(b))) return;
    double x = (fb - fa + sa * a - sb * b) / (sa - sb);
    x = std::clamp(x, a, b);
    const double fx = net.evaluate(x);
    const double line = fa + sa * (x - a);
    if (std::abs(fx - line) <= 1e-11 * (1.0 + std::abs(fx)) || depth > 200) {
      push(x, fx);
      return;
    }
    const double sl = net.slope(x, false);
    const double sr = net.slope(x, true);
    refine(a, fa, sa, x, fx, sl, depth + 1);
    push(x, fx);
    refine(x, fx, sr, b, fb, sb, depth + 1);
  }

  void push(double x, double fx) {
    if (!out.empty() && x <= out.back().first) return;
    out.emplace_back(x, fx);
    if (static_cast<int>(out.size()) - 1 > cap)
      throw ExtractionError("breakpoint count exceeds cap of " + std::to_string(cap));
  }
};

}  // namespace

PwlPriceCurve extract_pwl(const XPathNetwork& net, int direction, double p_max_mw, int max_breakpoints,
                          double slope_tol) {
  if (!(p_max_mw >= 0.0)) throw ContractError("p_max must be >= 0");
  PwlPriceCurve curve;
  curve.direction = direction;
  const double f0 = net.evaluate(0.0);
  curve.breakpoints.emplace_back(0.0, f0);
  if (p_max_mw == 0.0) {
    curve.breakpoints.emplace_back(0.0, f0);
    return curve;
  }
  const int cap = max_breakpoints > 0 ? max_breakpoints : std::max(1, 4 * net.hidden_units());
  const double f1 = net.evaluate(p_max_mw);
  Extractor ex{net, slope_tol, cap, curve.breakpoints};
  ex.refine(0.0, f0, net.slope(0.0, true), p_max_mw, f1, net.slope(p_max_mw, false), 0);
  if (curve.breakpoints.back().first < p_max_mw)
    curve.breakpoints.emplace_back(p_max_mw, f1);
  else
    curve.breakpoints.back().second = f1;
  return curve;
}

PwlPriceCurve extract_pwl(const QhContext& context, const IcnnParams& params, int direction, double p_max_mw) {
  return extract_pwl(x_path(context, direction, params), direction, p_max_mw);
}

}  // namespace imbal
