#include "imbal/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "imbal/errors.hpp"

namespace imbal {

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t row, const char* field) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v))
    throw ParseError(row, "row " + std::to_string(row) + ": " + field + " is not a number: '" + s + "'");
  return v;
}

long parse_long(const std::string& s, std::size_t row, const char* field) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(row, "row " + std::to_string(row) + ": " + field + " is not an integer: '" + s + "'");
  return v;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return {buf, ptr};
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void expect_header(std::istream& in, const std::string& header, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != header)
    throw ParseError(0, path.string() + ": expected header '" + header + "'");
}

}  // namespace

std::vector<double> MinuteData::qh_means() const {
  std::vector<double> m;
  m.reserve(traces.size());
  for (const auto& t : traces) m.push_back(t.mean());
  return m;
}

std::string format_timestamp(std::int64_t minute) {
  using namespace std::chrono;
  const sys_days day{days{static_cast<int>(std::floor(static_cast<double>(minute) / 1440.0))}};
  const std::int64_t mod = minute - static_cast<std::int64_t>(day.time_since_epoch().count()) * 1440;
  const year_month_day ymd{day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:00Z", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(mod / 60),
                static_cast<int>(mod % 60));
  return buf;
}

std::int64_t parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  const int n = std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &tail);
  if (n != 7 || tail != 'Z' || text.size() != 20) throw ParseError(0, "bad timestamp '" + text + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s != 0) throw ParseError(0, "bad timestamp '" + text + "'");
  return static_cast<std::int64_t>(sys_days{ymd}.time_since_epoch().count()) * 1440 + h * 60 + mi;
}

MinuteData load_minute_si(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_header(in, "timestamp,si_mw", path);
  std::vector<std::pair<std::int64_t, double>> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 2) throw ParseError(row, "row " + std::to_string(row) + ": expected 2 fields");
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(f[0]);
    } catch (const ParseError& e) {
      throw ParseError(row, "row " + std::to_string(row) + ": " + e.what());
    }
    const double si = parse_double(f[1], row, "si_mw");
    if (!rows.empty()) {
      if (ts == rows.back().first) throw ParseError(row, "row " + std::to_string(row) + ": duplicate timestamp " + f[0]);
      if (ts < rows.back().first) throw ParseError(row, "row " + std::to_string(row) + ": timestamps not increasing");
    }
    rows.emplace_back(ts, si);
  }
  MinuteData data;
  if (rows.empty()) return data;

  // Group by quarter hour; every quarter hour must hold exactly 15 minutes
  // and quarter hours must follow each other without gaps.
  auto qh_of = [](std::int64_t m) { return m >= 0 ? m / kMinutesPerQh : (m - kMinutesPerQh + 1) / kMinutesPerQh; };
  std::size_t i = 0;
  std::int64_t expected_qh = qh_of(rows.front().first);
  data.start_minute = expected_qh * kMinutesPerQh;
  while (i < rows.size()) {
    const std::int64_t qh = qh_of(rows[i].first);
    const std::string name = format_timestamp(qh * kMinutesPerQh);
    if (qh != expected_qh)
      throw ParseError(i + 1, "missing minutes: quarter hour starting " + format_timestamp(expected_qh * kMinutesPerQh) +
                                  " is absent");
    std::size_t j = i;
    while (j < rows.size() && qh_of(rows[j].first) == qh) ++j;
    if (j - i != static_cast<std::size_t>(kMinutesPerQh))
      throw ParseError(i + 1, "quarter hour starting " + name + " has " + std::to_string(j - i) + " minutes, expected 15");
    MinuteTrace t;
    const std::int64_t day_min = ((qh * kMinutesPerQh) % 1440 + 1440) % 1440;
    t.qh_index = static_cast<int>(day_min / kMinutesPerQh);
    for (std::size_t k = 0; k < static_cast<std::size_t>(kMinutesPerQh); ++k) t.si_mw[k] = rows[i + k].second;
    data.traces.push_back(t);
    i = j;
    ++expected_qh;
  }
  return data;
}

void write_minute_si(const std::filesystem::path& path, const MinuteData& data) {
  auto out = open_out(path);
  std::string buf = "timestamp,si_mw\n";
  std::int64_t m = data.start_minute;
  for (const auto& t : data.traces)
    for (double v : t.si_mw) {
      buf += format_timestamp(m++);
      buf += ',';
      buf += fmt(v);
      buf += '\n';
    }
  out << buf;
}

double discretization_step(Product product) { return product == Product::aFRR ? kAfrrStepMw : kMfrrStepMw; }

MeritOrder discretize(const MeritOrder& ladder, double step_mw) {
  if (!(step_mw > 0.0)) throw ContractError("discretization step must be positive");
  std::vector<std::pair<double, double>> pv;
  for (const Bid& b : ladder.bids) {
    if (!(b.volume > 0.0)) throw ContractError("nonpositive bid volume");
    pv.emplace_back(b.price, b.volume);
  }
  const MeritOrder sorted = MeritOrder::from_bids(ladder.product, ladder.direction, std::move(pv));
  std::vector<Bid> agg;
  for (const Bid& b : sorted.bids) {
    if (!agg.empty() && agg.back().price == b.price) {
      agg.back().volume += b.volume;
      agg.back().cum_volume = b.cum_volume;
    } else {
      agg.push_back(b);
    }
  }
  MeritOrder out{ladder.product, ladder.direction, {}};
  if (agg.empty()) return out;
  const double depth = agg.back().cum_volume;
  const double tol = 1e-9 * std::max(1.0, depth);
  std::vector<double> ends;
  for (int k = 1; k * step_mw <= depth + tol; ++k) ends.push_back(k * step_mw);
  if (ends.empty() || depth - ends.back() > tol) ends.push_back(depth);
  std::size_t b = 0;
  double prev = 0.0;
  for (double e : ends) {
    while (b + 1 < agg.size() && agg[b].cum_volume < e - tol) ++b;
    out.bids.push_back({agg[b].price, e - prev, e});
    prev = e;
  }
  return out;
}

std::vector<QhMeritOrders> load_merit_orders(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_header(in, "qh,product,direction,price_eur_mwh,volume_mw", path);
  std::map<long, QhMeritOrders> by_qh;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 5) throw ParseError(row, "row " + std::to_string(row) + ": expected 5 fields");
    const long qh = parse_long(f[0], row, "qh");
    if (qh < 0) throw ParseError(row, "row " + std::to_string(row) + ": negative qh");
    Product p;
    Direction d;
    try {
      p = product_from_string(f[1]);
      d = direction_from_string(f[2]);
    } catch (const Error& e) {
      throw ParseError(row, "row " + std::to_string(row) + ": " + e.what());
    }
    const double price = parse_double(f[3], row, "price_eur_mwh");
    const double vol = parse_double(f[4], row, "volume_mw");
    if (!(vol > 0.0)) throw ParseError(row, "row " + std::to_string(row) + ": volume must be positive");
    by_qh[qh].ladder(p, d).bids.push_back({price, vol, 0.0});
  }
  std::vector<QhMeritOrders> out;
  long expected = 0;
  for (auto& [qh, orders] : by_qh) {
    if (qh != expected) throw ParseError(0, "merit orders missing for qh " + std::to_string(expected));
    ++expected;
    QhMeritOrders q;
    for (Product p : {Product::aFRR, Product::mFRR})
      for (Direction d : {Direction::up, Direction::down}) {
        MeritOrder raw = orders.ladder(p, d);
        raw.product = p;
        raw.direction = d;
        q.ladder(p, d) = discretize(raw, discretization_step(p));
      }
    out.push_back(std::move(q));
  }
  return out;
}

void write_merit_orders(const std::filesystem::path& path, const std::vector<QhMeritOrders>& orders) {
  auto out = open_out(path);
  std::string buf = "qh,product,direction,price_eur_mwh,volume_mw\n";
  for (std::size_t q = 0; q < orders.size(); ++q)
    for (Product p : {Product::aFRR, Product::mFRR})
      for (Direction d : {Direction::up, Direction::down})
        for (const Bid& b : orders[q].ladder(p, d).bids) {
          buf += std::to_string(q);
          buf += ',';
          buf += to_string(p);
          buf += ',';
          buf += to_string(d);
          buf += ',';
          buf += fmt(b.price);
          buf += ',';
          buf += fmt(b.volume);
          buf += '\n';
        }
  out << buf;
}

Dataset build_training_set(const MinuteData& si, const std::vector<QhMeritOrders>& orders, const DatasetConfig& config) {
  if (si.traces.size() != orders.size())
    throw ContractError("misaligned inputs: " + std::to_string(si.traces.size()) + " SI quarter hours vs " +
                        std::to_string(orders.size()) + " merit-order quarter hours");
  for (double m : config.perturbation_mw)
    if (!(m >= 0.0)) throw ContractError("perturbation magnitudes must be >= 0");
  Dataset ds;
  const std::size_t N = si.traces.size();
  const auto means = si.qh_means();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < N; ++t) {
    const PriceLadders ladders(orders[t]);
    const double eps = config.forecast_noise_mw > 0.0 ? config.forecast_noise_mw * noise(rng) : 0.0;
    const double lag1 = t >= 1 ? means[t - 1] : 0.0;
    const double lag2 = t >= 2 ? means[t - 2] : 0.0;
    ds.contexts.push_back(make_context(orders[t], means[t] + eps, lag1, lag2, si.traces[t].qh_index));
    ds.context_qh.push_back(static_cast<long>(t));
    const int begin = static_cast<int>(ds.samples.size());
    const int c = static_cast<int>(t);
    for (double m : config.perturbation_mw) {
      // Charging m MW removes m from every minute's SI; discharging adds it.
      ds.samples.push_back({c, m, +1, replay_with_perturbation(ladders, si.traces[t], -m).qh_price});
      ds.samples.push_back({c, m, -1, -replay_with_perturbation(ladders, si.traces[t], m).qh_price});
    }
    ds.context_samples.emplace_back(begin, static_cast<int>(ds.samples.size()));
  }
  const std::size_t n_train = N * 10 / 12, n_val = N / 12;
  for (std::size_t t = 0; t < N; ++t) {
    auto& split = t < n_train ? ds.train : (t < n_train + n_val ? ds.validation : ds.test);
    split.push_back(static_cast<int>(t));
  }
  return ds;
}

void ScenarioConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw ContractError(std::string("invalid scenario field: ") + field);
  };
  need(days > 0, "days");
  need(si_reversion_per_min >= 0.0 && si_reversion_per_min < 1.0, "si_reversion_per_min");
  need(si_volatility_mw_sqrt_min >= 0.0, "si_volatility_mw_sqrt_min");
  need(si_jump_rate_per_min >= 0.0 && si_jump_rate_per_min <= 1.0, "si_jump_rate_per_min");
  need(si_jump_std_mw >= 0.0, "si_jump_std_mw");
  need(si_clip_mw > 0.0, "si_clip_mw");
  need(afrr_depth_mw > 0.0, "afrr_depth_mw");
  need(afrr_bid_min_mw > 0.0 && afrr_bid_max_mw >= afrr_bid_min_mw, "afrr_bid_min_mw");
  need(afrr_slope_eur_mwh_per_mw >= 0.0, "afrr_slope_eur_mwh_per_mw");
  need(afrr_up_base_eur_mwh >= afrr_down_base_eur_mwh, "afrr_up_base_eur_mwh");
  need(price_noise_eur_mwh >= 0.0, "price_noise_eur_mwh");
  need(mfrr_depth_mw > 0.0, "mfrr_depth_mw");
  need(mfrr_bid_min_mw > 0.0 && mfrr_bid_max_mw >= mfrr_bid_min_mw, "mfrr_bid_min_mw");
  need(mfrr_step_min_eur_mwh >= 0.0 && mfrr_step_max_eur_mwh >= mfrr_step_min_eur_mwh, "mfrr_step_min_eur_mwh");
  need(afrr_depth_mw + mfrr_depth_mw > si_clip_mw, "si_clip_mw (must stay inside the ladder depth)");
}

namespace {

std::vector<std::pair<double, double>> ladder_bids(std::mt19937_64& rng, double depth, double vmin, double vmax,
                                                   double p0, double slope, double sign, bool fixed) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<std::pair<double, double>> bids;
  double cum = 0.0, price = p0;
  while (cum < depth - 1e-9) {
    double v = fixed ? 0.5 * (vmin + vmax) : vmin + (vmax - vmin) * U(rng);
    v = std::min(std::round(v * 10.0) / 10.0, depth - cum);
    bids.emplace_back(std::round(price * 100.0) / 100.0, v);
    cum += v;
    price += sign * slope * v * (fixed ? 1.0 : 0.5 + U(rng));
  }
  return bids;
}

}  // namespace

Scenario generate_synthetic(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario sc;
  const int n_qh = cfg.days * kQhPerDay;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);

  sc.si.start_minute = cfg.start_minute - cfg.start_minute % kMinutesPerQh;
  sc.si.traces.resize(static_cast<std::size_t>(n_qh));
  double x = cfg.si_mean_mw;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int q = 0; q < n_qh; ++q) {
    MinuteTrace& tr = sc.si.traces[static_cast<std::size_t>(q)];
    const std::int64_t first = sc.si.start_minute + static_cast<std::int64_t>(q) * kMinutesPerQh;
    tr.qh_index = static_cast<int>(((first % 1440) + 1440) % 1440 / kMinutesPerQh);
    for (int m = 0; m < kMinutesPerQh; ++m) {
      const double day_frac = static_cast<double>(((first + m) % 1440 + 1440) % 1440) / 1440.0;
      const double mu = cfg.si_mean_mw + cfg.si_diurnal_amplitude_mw * std::sin(two_pi * day_frac);
      x += cfg.si_reversion_per_min * (mu - x) + cfg.si_volatility_mw_sqrt_min * N01(rng);
      if (cfg.si_jump_rate_per_min > 0.0 && U(rng) < cfg.si_jump_rate_per_min) x += cfg.si_jump_std_mw * N01(rng);
      x = std::clamp(x, -cfg.si_clip_mw, cfg.si_clip_mw);
      tr.si_mw[static_cast<std::size_t>(m)] = x;
    }
  }

  std::mt19937_64 lrng(cfg.seed ^ 0x5bd1e995u);
  sc.orders.reserve(static_cast<std::size_t>(n_qh));
  sc.raw_orders.reserve(static_cast<std::size_t>(n_qh));
  for (int q = 0; q < n_qh; ++q) {
    const int qh_index = sc.si.traces[static_cast<std::size_t>(q)].qh_index;
    const bool sym = cfg.symmetric_ladders;
    double shift = 0.0;
    if (!sym)
      shift = cfg.price_diurnal_amplitude_eur_mwh * std::sin(two_pi * qh_index / kQhPerDay - 1.0) +
              cfg.price_noise_eur_mwh * N01(lrng);
    const double up0 = cfg.afrr_up_base_eur_mwh + shift;
    const double down0 = cfg.afrr_down_base_eur_mwh + shift;
    QhMeritOrders raw;
    raw.afrr_up = MeritOrder::from_bids(Product::aFRR, Direction::up,
                                        ladder_bids(lrng, cfg.afrr_depth_mw, cfg.afrr_bid_min_mw, cfg.afrr_bid_max_mw,
                                                    up0, cfg.afrr_slope_eur_mwh_per_mw, +1.0, sym));
    raw.afrr_down = MeritOrder::from_bids(Product::aFRR, Direction::down,
                                          ladder_bids(lrng, cfg.afrr_depth_mw, cfg.afrr_bid_min_mw, cfg.afrr_bid_max_mw,
                                                      down0, cfg.afrr_slope_eur_mwh_per_mw, -1.0, sym));
    const double gap = sym ? cfg.mfrr_gap_eur_mwh : cfg.mfrr_gap_eur_mwh * (0.5 + U(lrng));
    const double step_lo = cfg.mfrr_step_min_eur_mwh, step_hi = cfg.mfrr_step_max_eur_mwh;
    auto mfrr = [&](double p0, double sign) {
      std::vector<std::pair<double, double>> bids;
      double cum = 0.0, price = p0;
      while (cum < cfg.mfrr_depth_mw - 1e-9) {
        double v = sym ? 0.5 * (cfg.mfrr_bid_min_mw + cfg.mfrr_bid_max_mw)
                       : cfg.mfrr_bid_min_mw + (cfg.mfrr_bid_max_mw - cfg.mfrr_bid_min_mw) * U(lrng);
        v = std::min(std::round(v), cfg.mfrr_depth_mw - cum);
        bids.emplace_back(std::round(price * 100.0) / 100.0, v);
        cum += v;
        price += sign * (sym ? 0.5 * (step_lo + step_hi) : step_lo + (step_hi - step_lo) * U(lrng));
      }
      return bids;
    };
    raw.mfrr_up = MeritOrder::from_bids(Product::mFRR, Direction::up, mfrr(raw.afrr_up.bids.back().price + gap, +1.0));
    raw.mfrr_down =
        MeritOrder::from_bids(Product::mFRR, Direction::down, mfrr(raw.afrr_down.bids.back().price - gap, -1.0));
    QhMeritOrders disc;
    for (Product p : {Product::aFRR, Product::mFRR})
      for (Direction d : {Direction::up, Direction::down})
        disc.ladder(p, d) = discretize(raw.ladder(p, d), discretization_step(p));
    sc.raw_orders.push_back(std::move(raw));
    sc.orders.push_back(std::move(disc));
  }
  return sc;
}

}  // namespace imbal
