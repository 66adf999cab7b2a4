#include "imbal/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "imbal/errors.hpp"

namespace imbal {

bool SiFilter::accepts(double si) const {
  switch (kind) {
    case Kind::all: return true;
    case Kind::large: return std::abs(si) >= threshold_mw;
    case Kind::small: return std::abs(si) < threshold_mw;
  }
  return false;
}

std::string SiFilter::label() const {
  char buf[64];
  switch (kind) {
    case Kind::all: return "All";
    case Kind::large: std::snprintf(buf, sizeof buf, "|SI|>=%g", threshold_mw); return buf;
    case Kind::small: std::snprintf(buf, sizeof buf, "|SI|<%g", threshold_mw); return buf;
  }
  return {};
}

double profit_per_mw_qh(const EpisodeResult& result, const BatterySpec& spec, const SiFilter& filter) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : result.records)
    if (filter.accepts(r.si_mean_mw)) {
      sum += r.profit;
      ++n;
    }
  if (n == 0) throw MetricError("no quarter hours pass the filter " + filter.label());
  return sum / (spec.power_max_mw * static_cast<double>(n));
}

double idle_probability(const EpisodeResult& result, const SiFilter& filter) {
  std::size_t n = 0, idle = 0;
  for (const auto& r : result.records)
    if (filter.accepts(r.si_mean_mw)) {
      ++n;
      if (r.action.charge_mw == 0.0 && r.action.discharge_mw == 0.0) ++idle;
    }
  if (n == 0) throw MetricError("no quarter hours pass the filter " + filter.label());
  return static_cast<double>(idle) / static_cast<double>(n);
}

std::vector<BinRmse> price_rmse_by_bin(const std::vector<double>& pred, const std::vector<double>& real,
                                       const std::vector<double>& si, const std::vector<double>& edges) {
  if (pred.size() != real.size() || pred.size() != si.size())
    throw MetricError("misaligned series: " + std::to_string(pred.size()) + " predictions, " +
                      std::to_string(real.size()) + " realized, " + std::to_string(si.size()) + " SI values");
  std::vector<double> e{0.0};
  e.insert(e.end(), edges.begin(), edges.end());
  e.push_back(std::numeric_limits<double>::infinity());
  std::vector<BinRmse> bins;
  std::vector<double> sq(e.size() - 1, 0.0);
  for (std::size_t b = 0; b + 1 < e.size(); ++b) bins.push_back({e[b], e[b + 1], 0, 0.0});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = std::abs(si[i]);
    for (std::size_t b = 0; b < bins.size(); ++b)
      if (a >= bins[b].lo && a < bins[b].hi) {
        sq[b] += (pred[i] - real[i]) * (pred[i] - real[i]);
        ++bins[b].count;
        break;
      }
  }
  for (std::size_t b = 0; b < bins.size(); ++b)
    bins[b].rmse = bins[b].count ? std::sqrt(sq[b] / static_cast<double>(bins[b].count))
                                 : std::numeric_limits<double>::quiet_NaN();
  return bins;
}

std::vector<BinRmse> price_rmse_by_bin(const EpisodeResult& result, const std::vector<double>& edges) {
  std::vector<double> p, r, s;
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& q = result.records[i];
    if (i > 0 && q.qh != result.records[i - 1].qh + 1) throw MetricError("episode records are not aligned in time");
    p.push_back(q.predicted_price());
    r.push_back(q.qh_price);
    s.push_back(q.si_mean_mw);
  }
  return price_rmse_by_bin(p, r, s, edges);
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) throw MetricError("mean of an empty set");
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

std::string format_mean_std(const MeanStd& m, int precision) {
  char buf[96];
  if (m.n > 1)
    std::snprintf(buf, sizeof buf, "%.*f ± %.*f", precision, m.mean, precision, m.std);
  else
    std::snprintf(buf, sizeof buf, "%.*f", precision, m.mean);
  return buf;
}

}  // namespace imbal
