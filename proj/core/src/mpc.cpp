#include "imbal/mpc.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "imbal/clearing_approx.hpp"
#include "imbal/errors.hpp"

namespace imbal {

double ForecastModel::sigma(int h) const {
  if (kind == ForecastKind::perfect) return 0.0;
  return sigma0_mw * std::pow(growth, h - 1);
}

ForecastKind forecast_kind_from_string(const std::string& s) {
  if (s == "perfect") return ForecastKind::perfect;
  if (s == "gaussian") return ForecastKind::gaussian;
  throw ContractError("unknown forecast kind '" + s + "'");
}

std::string to_string(ForecastKind k) { return k == ForecastKind::perfect ? "perfect" : "gaussian"; }

Method method_from_string(const std::string& s) {
  if (s == "icnn") return Method::icnn;
  if (s == "clearing") return Method::clearing;
  throw ContractError("unknown method '" + s + "'");
}

std::string to_string(Method m) { return m == Method::icnn ? "icnn" : "clearing"; }

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<double> forecast_si(const std::vector<double>& means, std::size_t t, int H, const ForecastModel& model) {
  if (H < 1) throw ContractError("forecast horizon must be >= 1");
  if (t + static_cast<std::size_t>(H) > means.size())
    throw ContractError("forecast horizon runs past the data (t=" + std::to_string(t) + ", H=" + std::to_string(H) + ")");
  std::vector<double> f(means.begin() + static_cast<std::ptrdiff_t>(t),
                        means.begin() + static_cast<std::ptrdiff_t>(t) + H);
  if (model.kind == ForecastKind::perfect) return f;
  std::mt19937_64 rng(splitmix(model.seed ^ splitmix(static_cast<std::uint64_t>(t))));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int h = 1; h <= H; ++h) f[static_cast<std::size_t>(h - 1)] += model.sigma(h) * n01(rng);
  return f;
}

void EpisodeResult::recompute_total() {
  cumulative_profit = 0.0;
  for (const auto& r : records) cumulative_profit += r.profit;
}

EpisodeResult run_episode(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const EpisodeConfig& cfg) {
  if (si.traces.size() != orders.size()) throw ContractError("SI and merit orders are misaligned");
  cfg.spec.validate();
  if (cfg.horizon < 1) throw ContractError("horizon must be >= 1");
  if (cfg.method == Method::icnn && cfg.model == nullptr) throw ContractError("the icnn method needs a trained model");
  const std::size_t N = si.traces.size();
  const std::size_t first = cfg.first_qh;
  const std::size_t last = cfg.qh_count == 0 ? N : std::min(N, first + cfg.qh_count);
  if (first >= last) throw ContractError("empty episode range");
  const auto means = si.qh_means();
  const double P = cfg.spec.power_max_mw, dt = cfg.spec.delta_t_h;

  std::optional<XPathBuilder> paths;
  if (cfg.method == Method::icnn) paths.emplace(*cfg.model);

  EpisodeResult res;
  BatteryState state = cfg.initial;
  for (std::size_t t = first; t < last; ++t) {
    const int H = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.horizon), N - t));
    const auto fc = forecast_si(means, t, H, cfg.forecast);
    QhRecord rec;
    rec.qh = static_cast<long>(t);
    rec.qh_index = si.traces[t].qh_index;
    rec.si_mean_mw = means[t];
    rec.si_forecast_mw = fc[0];
    Action act = Action::idle();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (cfg.method == Method::icnn) {
        HorizonProblem pb;
        pb.spec = cfg.spec;
        pb.initial = state;
        pb.config = cfg.solver;
        for (int h = 0; h < H; ++h) {
          // Past quarter hours are realized; the current and later ones are forecasts.
          auto lag = [&](int back) {
            const long idx = static_cast<long>(h) - back;
            if (idx >= 0) return fc[static_cast<std::size_t>(idx)];
            const long q = static_cast<long>(t) + idx;
            return q >= 0 ? means[static_cast<std::size_t>(q)] : 0.0;
          };
          const QhContext ctx =
              make_context(orders[t + static_cast<std::size_t>(h)], fc[static_cast<std::size_t>(h)], lag(1), lag(2),
                           si.traces[t + static_cast<std::size_t>(h)].qh_index);
          pb.networks.push_back((*paths)(ctx));
        }
        const Solution sol = cfg.use_sweep ? solve_sweep(pb) : solve_bnb(pb);
        act = clamp_feasible(cfg.spec, state, sol.actions.front());
        rec.predicted_charge_price = pb.networks.front()[0].evaluate(act.charge_mw);
        rec.predicted_discharge_price = -pb.networks.front()[1].evaluate(act.discharge_mw);
      } else {
        std::vector<StepCosts> costs;
        for (int h = 0; h < H; ++h) {
          const PriceLadders lad(orders[t + static_cast<std::size_t>(h)]);
          const double f = fc[static_cast<std::size_t>(h)];
          costs.push_back({ConvexCost::envelope_of_step_product(approx_cost_curve(lad, f, +1, P), dt),
                           ConvexCost::envelope_of_step_product(approx_cost_curve(lad, f, -1, P), dt)});
        }
        const Solution sol = solve_modes(cfg.spec, state, costs, cfg.solver);
        act = clamp_feasible(cfg.spec, state, sol.actions.front());
        const PriceLadders lad(orders[t]);
        rec.predicted_charge_price = approx_price(lad, fc[0], Action::charge(act.charge_mw));
        rec.predicted_discharge_price = approx_price(lad, fc[0], Action::discharge(act.discharge_mw));
      }
    } catch (const Error&) {
      act = Action::idle();
      rec.solver_failed = true;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.solve_times_s.push_back(elapsed);
    res.solve_time_s += elapsed;

    const Settlement s = settle_qh(PriceLadders(orders[t]), si.traces[t], act, dt);
    state = step_soc(cfg.spec, state, act);
    rec.action = act;
    rec.qh_price = s.qh_price;
    rec.profit = s.battery_profit;
    rec.soc_after = state.soc;
    res.records.push_back(rec);
  }
  res.recompute_total();
  res.summary["method"] = to_string(cfg.method);
  res.summary["horizon"] = std::to_string(cfg.horizon);
  res.summary["forecast"] = to_string(cfg.forecast.kind);
  res.summary["power_max_mw"] = std::to_string(cfg.spec.power_max_mw);
  res.summary["energy_max_mwh"] = std::to_string(cfg.spec.energy_max_mwh);
  return res;
}

namespace {

/// Price-taker DP over a uniform SoC lattice. From any SoC the candidate
/// moves are idle, every lattice level within reach and the two power-limit
/// endpoints; values between levels are interpolated linearly. The rollout
/// starts from the true SoC, so every action is exactly feasible.
struct Dp {
  BatterySpec spec;
  double delta = 0.0;
  int levels = 0;
  double ac = 0.0, ad = 0.0;

  Dp(const BatterySpec& s, int lv) : spec(s), levels(lv) {
    if (lv < 2) throw ContractError("DP needs at least 2 SoC levels");
    delta = (spec.soc_max - spec.soc_min) / (lv - 1);
    ac = soc_per_mw_charge(spec);
    ad = soc_per_mw_discharge(spec);
  }

  double level_soc(int i) const { return i == levels - 1 ? spec.soc_max : spec.soc_min + i * delta; }

  double interp(const std::vector<double>& V, double soc) const {
    const double x = std::clamp((soc - spec.soc_min) / delta, 0.0, static_cast<double>(levels - 1));
    const int i = std::min(static_cast<int>(x), levels - 2);
    const double w = x - i;
    return (1.0 - w) * V[static_cast<std::size_t>(i)] + w * V[static_cast<std::size_t>(i) + 1];
  }

  Action action_to(double from, double to) const {
    const double P = spec.power_max_mw;
    if (to > from) return Action::charge(std::min(P, (to - from) / ac));
    if (to < from) return Action::discharge(std::min(P, (from - to) / ad));
    return Action::idle();
  }

  /// Best move from `soc` against next-step values V; idle wins ties.
  std::pair<double, Action> best_move(double soc, double price, const std::vector<double>& V) const {
    const double dt = spec.delta_t_h;
    const double hi = std::min(spec.soc_max, soc + spec.power_max_mw * ac);
    const double lo = std::max(spec.soc_min, soc - spec.power_max_mw * ad);
    Action best_a = Action::idle();
    double best = interp(V, soc);
    auto consider = [&](double to) {
      if (to == soc) return;
      const Action a = action_to(soc, to);
      const double v = a.net_injection_mw() * price * dt + interp(V, to);
      if (v > best + 1e-12) {
        best = v;
        best_a = a;
      }
    };
    const int jlo = std::max(0, static_cast<int>(std::ceil((lo - spec.soc_min) / delta - 1e-9)));
    const int jhi = std::min(levels - 1, static_cast<int>(std::floor((hi - spec.soc_min) / delta + 1e-9)));
    for (int j = jlo; j <= jhi; ++j) consider(std::clamp(level_soc(j), lo, hi));
    consider(lo);
    consider(hi);
    return {best, best_a};
  }

  /// Actions for `prices` from `initial`, zero terminal value.
  std::vector<Action> plan(const std::vector<double>& prices, const BatteryState& initial) const {
    const std::size_t T = prices.size();
    std::vector<std::vector<double>> V(T + 1, std::vector<double>(static_cast<std::size_t>(levels), 0.0));
    for (std::size_t k = T; k-- > 0;)
      for (int i = 0; i < levels; ++i)
        V[k][static_cast<std::size_t>(i)] = best_move(level_soc(i), prices[k], V[k + 1]).first;
    std::vector<Action> acts;
    BatteryState st = initial;
    for (std::size_t k = 0; k < T; ++k) {
      const Action a = clamp_feasible(spec, st, best_move(st.soc, prices[k], V[k + 1]).second);
      st = step_soc(spec, st, a);
      acts.push_back(a);
    }
    return acts;
  }
};

std::vector<double> idle_prices(const MinuteData& si, const std::vector<QhMeritOrders>& orders, std::size_t first,
                                std::size_t last) {
  std::vector<double> p;
  for (std::size_t t = first; t < last; ++t)
    p.push_back(settle_qh(PriceLadders(orders[t]), si.traces[t], Action::idle()).qh_price);
  return p;
}

std::pair<std::size_t, std::size_t> range_of(const MinuteData& si, const std::vector<QhMeritOrders>& orders,
                                             std::size_t first, std::size_t count) {
  if (si.traces.size() != orders.size()) throw ContractError("SI and merit orders are misaligned");
  const std::size_t last = count == 0 ? si.traces.size() : std::min(si.traces.size(), first + count);
  if (first >= last) throw ContractError("empty range");
  return {first, last};
}

EpisodeResult records_from(const std::vector<Action>& actions, const std::vector<double>& prices,
                           const BatterySpec& spec, const BatteryState& initial, const MinuteData* si,
                           std::size_t first) {
  EpisodeResult res;
  BatteryState st = initial;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    QhRecord r;
    r.qh = static_cast<long>(first + k);
    if (si) {
      r.qh_index = si->traces[first + k].qh_index;
      r.si_mean_mw = si->traces[first + k].mean();
      r.si_forecast_mw = r.si_mean_mw;
    }
    r.action = actions[k];
    r.qh_price = prices[k];
    r.predicted_charge_price = r.predicted_discharge_price = prices[k];
    r.profit = actions[k].net_injection_mw() * prices[k] * spec.delta_t_h;
    st = step_soc(spec, st, actions[k]);
    r.soc_after = st.soc;
    res.records.push_back(r);
  }
  res.recompute_total();
  return res;
}

double discretization_bound(const std::vector<double>& prices, const BatterySpec& spec, const Dp& dp) {
  const double dE = dp.delta * spec.energy_max_mwh;
  double s = 0.0;
  for (double p : prices) s += std::abs(p) * 2.0 * dE / spec.eff_charge;
  return s;
}

}  // namespace

EpisodeResult dp_over_prices(const std::vector<double>& prices, const BatterySpec& spec, const BatteryState& initial,
                             int levels) {
  spec.validate();
  const Dp dp(spec, levels);
  EpisodeResult r = records_from(dp.plan(prices, initial), prices, spec, initial, nullptr, 0);
  r.discretization_bound = discretization_bound(prices, spec, dp);
  r.summary["method"] = "optimal";
  return r;
}

EpisodeResult optimal_pricetaker(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const BatterySpec& spec,
                                 const BatteryState& initial, std::size_t first_qh, std::size_t count, int levels) {
  const auto [first, last] = range_of(si, orders, first_qh, count);
  const auto prices = idle_prices(si, orders, first, last);
  EpisodeResult dp = dp_over_prices(prices, spec, initial, levels);
  std::vector<Action> acts;
  for (const auto& r : dp.records) acts.push_back(r.action);
  EpisodeResult res = records_from(acts, prices, spec, initial, &si, first);
  res.discretization_bound = dp.discretization_bound;
  res.summary["method"] = "optimal";
  return res;
}

EpisodeResult optimal_pricetaker_windowed(const MinuteData& si, const std::vector<QhMeritOrders>& orders,
                                          const BatterySpec& spec, const BatteryState& initial, int horizon,
                                          std::size_t first_qh, std::size_t count, int levels) {
  if (horizon < 1) throw ContractError("horizon must be >= 1");
  spec.validate();
  const auto [first, last] = range_of(si, orders, first_qh, count);
  const auto prices = idle_prices(si, orders, first, last);
  const Dp dp(spec, levels);
  std::vector<Action> acts;
  BatteryState st = initial;
  for (std::size_t k = 0; k < prices.size(); ++k) {
    const std::size_t end = std::min(prices.size(), k + static_cast<std::size_t>(horizon));
    const std::vector<double> window(prices.begin() + static_cast<std::ptrdiff_t>(k),
                                     prices.begin() + static_cast<std::ptrdiff_t>(end));
    const Action a = dp.plan(window, st).front();
    st = step_soc(spec, st, a);
    acts.push_back(a);
  }
  EpisodeResult res = records_from(acts, prices, spec, initial, &si, first);
  res.discretization_bound = discretization_bound(prices, spec, dp);
  res.summary["method"] = "optimal_h" + std::to_string(horizon);
  return res;
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return {buf, p};
}

constexpr const char* kEpisodeHeader =
    "qh,qh_index,si_mean_mw,si_forecast_mw,charge_mw,discharge_mw,qh_price_eur_mwh,profit_eur,"
    "pred_charge_eur_mwh,pred_discharge_eur_mwh,soc,solver_failed";

}  // namespace

void write_episode_csv(const std::filesystem::path& path, const EpisodeResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [k, v] : r.summary) out << "# " << k << '=' << v << '\n';
  out << "# cumulative_profit_eur=" << num(r.cumulative_profit) << '\n';
  out << "# quarter_hours=" << r.records.size() << '\n';
  out << kEpisodeHeader << '\n';
  for (const auto& q : r.records)
    out << q.qh << ',' << q.qh_index << ',' << num(q.si_mean_mw) << ',' << num(q.si_forecast_mw) << ','
        << num(q.action.charge_mw) << ',' << num(q.action.discharge_mw) << ',' << num(q.qh_price) << ','
        << num(q.profit) << ',' << num(q.predicted_charge_price) << ',' << num(q.predicted_discharge_price) << ','
        << num(q.soc_after) << ',' << (q.solver_failed ? 1 : 0) << '\n';
}

EpisodeResult read_episode_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  EpisodeResult r;
  std::string line;
  std::size_t row = 0;
  bool header = false;
  auto d = [&](const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ParseError(row, path.string() + ": bad number '" + s + "' on line " + std::to_string(row));
    return v;
  };
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) r.summary[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (!header) {
      if (line != kEpisodeHeader) throw ParseError(row, path.string() + ": unexpected episode header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw ParseError(row, path.string() + ": expected 12 fields on line " + std::to_string(row));
    QhRecord q;
    q.qh = static_cast<long>(d(f[0]));
    q.qh_index = static_cast<int>(d(f[1]));
    q.si_mean_mw = d(f[2]);
    q.si_forecast_mw = d(f[3]);
    q.action.charge_mw = d(f[4]);
    q.action.discharge_mw = d(f[5]);
    q.action.mode_charge = q.action.charge_mw > 0.0;
    q.qh_price = d(f[6]);
    q.profit = d(f[7]);
    q.predicted_charge_price = d(f[8]);
    q.predicted_discharge_price = d(f[9]);
    q.soc_after = d(f[10]);
    q.solver_failed = f[11] == "1";
    r.records.push_back(q);
  }
  r.summary.erase("cumulative_profit_eur");
  r.summary.erase("quarter_hours");
  r.recompute_total();
  return r;
}

}  // namespace imbal
