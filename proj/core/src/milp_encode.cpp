#include "imbal/milp_encode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "imbal/errors.hpp"

namespace imbal {

UnitBounds propagate_bounds(const XPathNetwork& net, double p_lo, double p_hi) {
  if (p_lo > p_hi) throw ContractError("propagate_bounds: empty input range");
  UnitBounds b;
  Eigen::RowVectorXd zlo, zhi;
  for (int i = 0; i < net.layers(); ++i) {
    const Eigen::RowVectorXd& wx = net.wx[static_cast<std::size_t>(i)];
    Eigen::RowVectorXd lo = net.c[static_cast<std::size_t>(i)] + wx.cwiseMax(0.0) * p_lo + wx.cwiseMin(0.0) * p_hi;
    Eigen::RowVectorXd hi = net.c[static_cast<std::size_t>(i)] + wx.cwiseMax(0.0) * p_hi + wx.cwiseMin(0.0) * p_lo;
    if (i > 0) {
      const Eigen::MatrixXd& w = net.wz[static_cast<std::size_t>(i - 1)];
      const Eigen::MatrixXd wp = w.cwiseMax(0.0), wn = w.cwiseMin(0.0);
      lo += zlo * wp + zhi * wn;
      hi += zhi * wp + zlo * wn;
    }
    b.lower.push_back(lo);
    b.upper.push_back(hi);
    zlo = lo.cwiseMax(0.0);
    zhi = hi.cwiseMax(0.0);
  }
  return b;
}

UnitBounds propagate_bounds(const IcnnParams& params, const Eigen::VectorXd& x_static, double p_lo_mw,
                            double p_hi_mw) {
  return propagate_bounds(x_path(params, x_static), p_lo_mw, p_hi_mw);
}

int MilpSystem::binary_count() const {
  return static_cast<int>(std::count_if(vars.begin(), vars.end(), [](const MilpVar& v) { return v.binary; }));
}

double MilpSystem::max_violation(const std::vector<double>& x) const {
  double worst = 0.0;
  for (std::size_t v = 0; v < vars.size(); ++v) {
    worst = std::max({worst, vars[v].lo - x[v], x[v] - vars[v].hi});
    if (vars[v].binary) worst = std::max(worst, std::min(std::abs(x[v]), std::abs(x[v] - 1.0)));
  }
  for (const MilpRow& r : rows) {
    double s = 0.0;
    for (const auto& [j, a] : r.terms) s += a * x[static_cast<std::size_t>(j)];
    worst = std::max({worst, r.lo - s, s - r.hi});
  }
  return worst;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_expr(std::ostringstream& os, const std::vector<std::pair<int, double>>& terms,
                const std::vector<MilpVar>& vars) {
  if (terms.empty()) {
    os << " 0 " << vars.front().name;
    return;
  }
  for (const auto& [j, a] : terms) os << (a < 0 ? " - " : " + ") << num(std::abs(a)) << ' ' << vars[static_cast<std::size_t>(j)].name;
}

}  // namespace

std::string MilpSystem::to_lp(const std::vector<std::pair<int, double>>& objective) const {
  std::ostringstream os;
  os << "\\ ICNN x-path encoding, direction " << direction << "\nMinimize\n obj:";
  write_expr(os, objective, vars);
  os << "\nSubject To\n";
  for (const MilpRow& r : rows) {
    if (r.lo == r.hi) {
      os << ' ' << r.name << ':';
      write_expr(os, r.terms, vars);
      os << " = " << num(r.lo) << '\n';
      continue;
    }
    if (std::isfinite(r.lo)) {
      os << ' ' << r.name << "_lo:";
      write_expr(os, r.terms, vars);
      os << " >= " << num(r.lo) << '\n';
    }
    if (std::isfinite(r.hi)) {
      os << ' ' << r.name << "_hi:";
      write_expr(os, r.terms, vars);
      os << " <= " << num(r.hi) << '\n';
    }
  }
  os << "Bounds\n";
  for (const MilpVar& v : vars)
    if (!v.binary) os << ' ' << num(v.lo) << " <= " << v.name << " <= " << num(v.hi) << '\n';
  os << "Binaries\n";
  for (const MilpVar& v : vars)
    if (v.binary) os << ' ' << v.name << '\n';
  os << "End\n";
  return os.str();
}

MilpSystem encode(const XPathNetwork& net, const UnitBounds& bounds, double p_lo, double p_hi, int direction) {
  if (static_cast<int>(bounds.lower.size()) != net.layers() || static_cast<int>(bounds.upper.size()) != net.layers())
    throw ShapeError("bounds do not match the network depth");
  constexpr double inf = std::numeric_limits<double>::infinity();
  MilpSystem m;
  m.direction = direction;
  m.vars.push_back({"p", p_lo, p_hi, false});
  m.input = 0;

  std::vector<int> prev;  // y variable per unit of the previous layer, -1 if dead
  for (int i = 0; i < net.layers(); ++i) {
    const auto li = static_cast<std::size_t>(i);
    const bool last = i + 1 == net.layers();
    const Eigen::Index n = net.wx[li].size();
    std::vector<int> cur(static_cast<std::size_t>(n), -1);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double L = bounds.lower[li](j), U = bounds.upper[li](j);
      if (!std::isfinite(L) || !std::isfinite(U))
        throw EncodingError("unbounded unit " + std::to_string(i) + "." + std::to_string(j));
      // a = c + wx p + sum wz y_prev; stored as terms of (-a) so rows read y - a.
      std::vector<std::pair<int, double>> neg_a;
      if (net.wx[li](j) != 0.0) neg_a.emplace_back(m.input, -net.wx[li](j));
      if (i > 0)
        for (std::size_t q = 0; q < prev.size(); ++q) {
          const double w = net.wz[li - 1](static_cast<Eigen::Index>(q), j);
          if (prev[q] >= 0 && w != 0.0) neg_a.emplace_back(prev[q], -w);
        }
      const double c = net.c[li](j);
      const std::string tag = std::to_string(i) + "_" + std::to_string(j);

      MilpSystem::Unit u;
      u.layer = i;
      u.index = static_cast<int>(j);
      u.lower = L;
      u.upper = U;
      if (last) {
        const int y = static_cast<int>(m.vars.size());
        m.vars.push_back({"lambda", L, U, false});
        auto terms = neg_a;
        terms.emplace_back(y, 1.0);
        m.rows.push_back({"out", terms, c, c});
        m.output = y;
        m.output_row = static_cast<int>(m.rows.size()) - 1;
        continue;
      }
      if (U <= 0.0) {
        u.kind = MilpSystem::UnitKind::dead;
        m.units.push_back(u);
        continue;
      }
      const int y = static_cast<int>(m.vars.size());
      m.vars.push_back({"y" + tag, std::max(0.0, L), U, false});
      u.y = y;
      cur[static_cast<std::size_t>(j)] = y;
      auto y_minus_a = neg_a;
      y_minus_a.emplace_back(y, 1.0);
      if (L >= 0.0) {
        u.kind = MilpSystem::UnitKind::active;
        u.rows.push_back(static_cast<int>(m.rows.size()));
        m.rows.push_back({"act" + tag, y_minus_a, c, c});
      } else {
        u.kind = MilpSystem::UnitKind::relu;
        const int d = static_cast<int>(m.vars.size());
        m.vars.push_back({"d" + tag, 0.0, 1.0, true});
        u.delta = d;
        const int r0 = static_cast<int>(m.rows.size());
        u.rows = {r0, r0 + 1, r0 + 2, r0 + 3};
        // y - a >= c
        m.rows.push_back({"ga" + tag, y_minus_a, c, inf});
        // y >= 0
        m.rows.push_back({"gz" + tag, {{y, 1.0}}, 0.0, inf});
        // y - a - L delta <= c - L
        auto t3 = y_minus_a;
        t3.emplace_back(d, -L);
        m.rows.push_back({"la" + tag, t3, -inf, c - L});
        // y - U delta <= 0
        m.rows.push_back({"lu" + tag, {{y, 1.0}, {d, -U}}, -inf, 0.0});
      }
      m.units.push_back(u);
    }
    prev = std::move(cur);
  }
  return m;
}

namespace {

double row_value_without(const MilpRow& r, const std::vector<double>& x, int skip_a, int skip_b, double& coef_a,
                         double& coef_b) {
  double s = 0.0;
  coef_a = coef_b = 0.0;
  for (const auto& [j, a] : r.terms) {
    if (j == skip_a)
      coef_a += a;
    else if (j == skip_b)
      coef_b += a;
    else
      s += a * x[static_cast<std::size_t>(j)];
  }
  return s;
}

}  // namespace

std::vector<double> solve_fixed_input(const MilpSystem& m, double p, double tol) {
  const MilpVar& in = m.vars[static_cast<std::size_t>(m.input)];
  if (p < in.lo - tol || p > in.hi + tol) throw EncodingError("input outside the encoded range");
  std::vector<double> x(m.vars.size(), 0.0);
  x[static_cast<std::size_t>(m.input)] = p;

  // Units are stored in topological order; each one is determined by its rows
  // once the preceding variables are fixed.
  for (const auto& u : m.units) {
    if (u.kind == MilpSystem::UnitKind::dead) continue;
    double cy = 0.0, cd = 0.0;
    if (u.kind == MilpSystem::UnitKind::active) {
      const MilpRow& r = m.rows[static_cast<std::size_t>(u.rows[0])];
      const double rest = row_value_without(r, x, u.y, -1, cy, cd);
      x[static_cast<std::size_t>(u.y)] = (r.lo - rest) / cy;
      continue;
    }
    bool found = false;
    for (double delta : {0.0, 1.0}) {
      x[static_cast<std::size_t>(u.delta)] = delta;
      double lo = m.vars[static_cast<std::size_t>(u.y)].lo, hi = m.vars[static_cast<std::size_t>(u.y)].hi;
      for (int ri : u.rows) {
        const MilpRow& r = m.rows[static_cast<std::size_t>(ri)];
        const double rest = row_value_without(r, x, u.y, u.delta, cy, cd) + cd * delta;
        // lo_r <= cy*y + rest <= hi_r with cy = 1 for every encoded row.
        lo = std::max(lo, r.lo - rest);
        hi = std::min(hi, r.hi - rest);
        (void)cy;
      }
      if (lo <= hi + tol) {
        x[static_cast<std::size_t>(u.y)] = std::min(std::max(lo, 0.0), std::max(hi, lo));
        found = true;
        break;
      }
    }
    if (!found) throw EncodingError("no feasible assignment for unit " + std::to_string(u.layer) + "." + std::to_string(u.index));
  }
  const MilpRow& out = m.rows[static_cast<std::size_t>(m.output_row)];
  double cy = 0.0, cd = 0.0;
  const double rest = row_value_without(out, x, m.output, -1, cy, cd);
  x[static_cast<std::size_t>(m.output)] = (out.lo - rest) / cy;
  if (m.max_violation(x) > tol * (1.0 + std::abs(x[static_cast<std::size_t>(m.output)])) * 1e3)
    throw EncodingError("fixed-input assignment violates the encoded rows");
  return x;
}

std::vector<double> relu_thresholds(const XPathNetwork& net, double p_lo, double p_hi) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> out;
  std::vector<double> knots{p_lo, p_hi};
  for (int i = 0; i + 1 < net.layers(); ++i) {
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    std::vector<Eigen::RowVectorXd> pre;
    pre.reserve(knots.size());
    for (double k : knots) pre.push_back(net.pre_activations(k)[static_cast<std::size_t>(i)]);
    std::vector<double> layer;
    for (Eigen::Index j = 0; j < net.wx[static_cast<std::size_t>(i)].size(); ++j) {
      double r = inf;
      if (pre.front()(j) > 0.0) {
        r = -inf;
      } else {
        // Pre-activation is affine between consecutive knots of earlier layers.
        for (std::size_t s = 1; s < knots.size(); ++s) {
          const double a0 = pre[s - 1](j), a1 = pre[s](j);
          if (a1 > 0.0) {
            r = a1 == a0 ? knots[s - 1] : knots[s - 1] + (0.0 - a0) * (knots[s] - knots[s - 1]) / (a1 - a0);
            r = std::clamp(r, knots[s - 1], knots[s]);
            break;
          }
        }
      }
      layer.push_back(r);
    }
    for (double r : layer) {
      out.push_back(r);
      if (std::isfinite(r)) knots.push_back(r);
    }
  }
  return out;
}

}  // namespace imbal
