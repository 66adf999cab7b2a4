#include "imbal/miqp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>

#include "imbal/errors.hpp"
#include "imbal/milp_encode.hpp"

namespace imbal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void HorizonProblem::validate() const {
  spec.validate();
  if (networks.empty()) throw ContractError("horizon must be at least 1");
  if (initial.soc < spec.soc_min - 1e-9 || initial.soc > spec.soc_max + 1e-9)
    throw FeasibilityError(initial.soc < spec.soc_min ? FeasibilityError::Bound::soc_min
                                                      : FeasibilityError::Bound::soc_max,
                           "initial state of charge outside its limits: " + std::to_string(initial.soc));
  for (const auto& step : networks)
    for (const auto& net : step)
      if (net.layers() == 0) throw ContractError("missing market model for a step");
  for (const auto& step : networks)
    for (const auto& net : step) {
      bool finite = true;
      for (const auto& v : net.wx) finite = finite && v.allFinite();
      for (const auto& v : net.c) finite = finite && v.allFinite();
      for (const auto& m : net.wz) finite = finite && m.allFinite();
      if (!finite) throw ContractError("market model has non-finite weights");
    }
}

double action_cost(const BatterySpec& spec, const std::array<XPathNetwork, 2>& nets, const Action& a) {
  double c = 0.0;
  if (a.charge_mw > 0.0) c += a.charge_mw * nets[0].evaluate(a.charge_mw);
  if (a.discharge_mw > 0.0) c += a.discharge_mw * nets[1].evaluate(a.discharge_mw);
  return c * spec.delta_t_h;
}

namespace {

double clock_s() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

double tie_weight(const SolverConfig& cfg, int t, int H) { return cfg.tie_epsilon * (1.0 + static_cast<double>(t) / H); }

/// Rows soc_min <= soc_0 + cumulative(coef * x) <= soc_max as A x >= b.
void add_soc_rows(const BatterySpec& spec, const BatteryState& s0, const std::vector<std::vector<std::pair<int, double>>>& step_terms,
                  Eigen::Index n, MatrixXd& A, VectorXd& b) {
  const auto H = static_cast<Eigen::Index>(step_terms.size());
  A = MatrixXd::Zero(2 * H, n);
  b.resize(2 * H);
  Eigen::RowVectorXd cum = Eigen::RowVectorXd::Zero(n);
  for (Eigen::Index t = 0; t < H; ++t) {
    for (const auto& [j, a] : step_terms[static_cast<std::size_t>(t)]) cum(j) += a;
    A.row(2 * t) = cum;
    b(2 * t) = spec.soc_min - s0.soc;
    A.row(2 * t + 1) = -cum;
    b(2 * t + 1) = s0.soc - spec.soc_max;
  }
}

void fill_prices(const HorizonProblem& pb, Solution& sol) {
  sol.prices.clear();
  for (int t = 0; t < pb.horizon(); ++t) {
    const auto& a = sol.actions[static_cast<std::size_t>(t)];
    sol.prices.push_back({pb.networks[static_cast<std::size_t>(t)][0].evaluate(a.charge_mw),
                          -pb.networks[static_cast<std::size_t>(t)][1].evaluate(a.discharge_mw)});
  }
}

Action make_action(double pc, double pd) {
  if (pc > 0.0) return Action::charge(pc);
  if (pd > 0.0) return Action::discharge(pd);
  return Action::idle();
}

}  // namespace

LeafSolution solve_qp(const LeafProblem& leaf) {
  const auto H = leaf.mode.size();
  if (leaf.quad.size() != H || leaf.lin.size() != H || leaf.p_lo.size() != H || leaf.p_hi.size() != H)
    throw ShapeError("leaf problem vectors differ in length");
  for (double q : leaf.quad)
    if (q < -1e-12) throw ContractError("leaf cost is not convex (quadratic coefficient " + std::to_string(q) + ")");
  const auto n = static_cast<Eigen::Index>(H);
  VectorXd lo(n), hi(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    lo(t) = leaf.p_lo[static_cast<std::size_t>(t)];
    hi(t) = leaf.p_hi[static_cast<std::size_t>(t)];
  }
  qp::Problem p = qp::Problem::box(lo, hi);
  std::vector<std::vector<std::pair<int, double>>> terms(H);
  const double ac = soc_per_mw_charge(leaf.spec), ad = soc_per_mw_discharge(leaf.spec);
  for (std::size_t t = 0; t < H; ++t) {
    p.hessian(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t)) = 2.0 * std::max(0.0, leaf.quad[t]);
    p.linear(static_cast<Eigen::Index>(t)) = leaf.lin[t];
    terms[t].emplace_back(static_cast<int>(t), leaf.mode[t] > 0 ? ac : -ad);
  }
  add_soc_rows(leaf.spec, leaf.initial, terms, n, p.ineq, p.ineq_rhs);
  LeafSolution out;
  out.qp = qp::solve(p);
  out.feasible = out.qp.status == qp::Status::optimal;
  if (out.feasible) {
    out.power.assign(out.qp.x.data(), out.qp.x.data() + n);
    out.objective = out.qp.objective;
  }
  return out;
}

Solution solve_modes(const BatterySpec& spec, const BatteryState& initial, const std::vector<StepCosts>& costs,
                     const SolverConfig& config) {
  const double start = clock_s();
  spec.validate();
  const int H = static_cast<int>(costs.size());
  if (H < 1) throw ContractError("horizon must be at least 1");
  if (H > 8) throw ContractError("mode enumeration refuses horizons above 8 (got " + std::to_string(H) + ")");
  const double ac = soc_per_mw_charge(spec), ad = soc_per_mw_discharge(spec);

  Solution best;
  double best_score = std::numeric_limits<double>::infinity();
  long solved = 0;
  for (unsigned mask = 0; mask < (1u << H); ++mask) {
    // Incremental segment variables: p_t = sum of w over the pieces of the
    // chosen direction's cost; convexity makes the pieces fill in order.
    std::vector<std::vector<int>> var_of(static_cast<std::size_t>(H));
    Eigen::Index n = 0;
    for (int t = 0; t < H; ++t) {
      const int d = (mask >> t) & 1u;
      for (std::size_t k = 0; k < costs[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)].pieces().size(); ++k)
        var_of[static_cast<std::size_t>(t)].push_back(static_cast<int>(n++));
    }
    qp::Problem p = qp::Problem::box(VectorXd::Zero(n), VectorXd::Zero(n));
    std::vector<std::vector<std::pair<int, double>>> terms(static_cast<std::size_t>(H));
    double constant = 0.0;
    for (int t = 0; t < H; ++t) {
      const int d = (mask >> t) & 1u;
      const auto& pieces = costs[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)].pieces();
      if (pieces.front().x0 != 0.0) throw ContractError("step cost must start at zero power");
      constant += pieces.front().value;
      for (std::size_t k = 0; k < pieces.size(); ++k) {
        const int j = var_of[static_cast<std::size_t>(t)][k];
        p.upper(j) = pieces[k].x1 - pieces[k].x0;
        p.hessian(j, j) = 2.0 * std::max(0.0, pieces[k].curv);
        p.linear(j) = pieces[k].slope + tie_weight(config, t, H);
        terms[static_cast<std::size_t>(t)].emplace_back(j, d == 0 ? ac : -ad);
      }
    }
    add_soc_rows(spec, initial, terms, n, p.ineq, p.ineq_rhs);
    const qp::Result r = qp::solve(p);
    ++solved;
    if (r.status != qp::Status::optimal) continue;
    const double score = r.objective + constant;
    if (best.actions.empty() || score < best_score - 1e-12 * (1.0 + std::abs(best_score))) {
      best_score = score;
      best.actions.clear();
      best.objective = 0.0;
      for (int t = 0; t < H; ++t) {
        const int d = (mask >> t) & 1u;
        double pw = 0.0;
        for (int j : var_of[static_cast<std::size_t>(t)]) pw += r.x(j);
        const auto& cost = costs[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        pw = std::clamp(pw, 0.0, cost.hi());
        if (pw <= 1e-12) pw = 0.0;
        best.actions.push_back(d == 0 ? make_action(pw, 0.0) : make_action(0.0, pw));
        best.objective += cost.evaluate(pw);
      }
    }
  }
  if (best.actions.empty()) throw FeasibilityError(FeasibilityError::Bound::soc_min, "no feasible mode assignment");
  best.nodes = solved;
  best.optimal = true;
  best.gap = 0.0;
  best.wall_time_s = clock_s() - start;
  return best;
}

Solution solve_sweep(const HorizonProblem& problem) {
  const double start = clock_s();
  problem.validate();
  if (problem.horizon() > 8)
    throw ContractError("sweep oracle refuses horizons above 8 (got " + std::to_string(problem.horizon()) + ")");
  std::vector<StepCosts> costs;
  const double P = problem.spec.power_max_mw;
  for (const auto& step : problem.networks)
    costs.push_back({ConvexCost::product_with_action(extract_pwl(step[0], +1, P), problem.spec.delta_t_h),
                     ConvexCost::product_with_action(extract_pwl(step[1], -1, P), problem.spec.delta_t_h)});
  Solution sol = solve_modes(problem.spec, problem.initial, costs, problem.config);
  sol.objective = 0.0;
  for (int t = 0; t < problem.horizon(); ++t)
    sol.objective += action_cost(problem.spec, problem.networks[static_cast<std::size_t>(t)],
                                 sol.actions[static_cast<std::size_t>(t)]);
  fill_prices(problem, sol);
  sol.wall_time_s = clock_s() - start;
  return sol;
}

namespace {

struct UnitRef {
  int layer = 0, index = 0;
  double threshold = 0.0;
};

struct Node {
  long id = 0;
  double bound = 0.0;
  std::vector<int> mode;                    // 0 free, +1 charge, -1 discharge
  std::vector<std::array<double, 2>> lo, hi;
  VectorXd x;                               // relaxation solution
  std::vector<std::array<int, 2>> epi;      // epigraph variable per (t, d), -1 when exact
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const { return a.bound > b.bound || (a.bound == b.bound && a.id > b.id); }
};

class BranchAndBound {
 public:
  explicit BranchAndBound(const HorizonProblem& pb) : pb_(pb), H_(pb.horizon()), P_(pb.spec.power_max_mw) {
    units_.resize(static_cast<std::size_t>(H_));
    for (int t = 0; t < H_; ++t)
      for (int d = 0; d < 2; ++d) {
        const XPathNetwork& net = pb.networks[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        const auto thr = relu_thresholds(net, 0.0, P_);
        std::size_t f = 0;
        for (int l = 0; l + 1 < net.layers(); ++l)
          for (Eigen::Index j = 0; j < net.wx[static_cast<std::size_t>(l)].size(); ++j, ++f)
            if (thr[f] > 0.0 && thr[f] < P_) units_[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)].push_back({l, static_cast<int>(j), thr[f]});
      }
  }

  Solution run() {
    const double start = clock_s();
    const SolverConfig& cfg = pb_.config;
    // Idle is always feasible and is the initial incumbent.
    incumbent_.assign(static_cast<std::size_t>(H_), Action::idle());
    inc_score_ = 0.0;

    Node root;
    root.mode.assign(static_cast<std::size_t>(H_), 0);
    root.lo.assign(static_cast<std::size_t>(H_), {0.0, 0.0});
    root.hi.assign(static_cast<std::size_t>(H_), {P_, P_});
    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    if (evaluate(root)) open.push(std::move(root));

    long processed = 0;
    bool limit_hit = false;
    while (!open.empty()) {
      if (open.top().bound >= inc_score_ - abs_tol()) break;
      if (processed >= cfg.node_limit) {
        limit_hit = true;
        break;
      }
      Node node = open.top();
      open.pop();
      ++processed;
      heuristic(node);
      if (node.bound >= inc_score_ - abs_tol()) continue;
      if (cfg.trace) {
        std::ostringstream os;
        os << "node=" << node.id << " bound=" << node.bound << " incumbent=" << inc_score_ << " open=" << open.size();
        cfg.trace(os.str());
      }
      for (Node& child : branch(node))
        if (evaluate(child) && child.bound < inc_score_ - abs_tol()) open.push(std::move(child));
    }

    Solution sol;
    sol.actions = incumbent_;
    sol.objective = 0.0;
    for (int t = 0; t < H_; ++t)
      sol.objective += action_cost(pb_.spec, pb_.networks[static_cast<std::size_t>(t)], incumbent_[static_cast<std::size_t>(t)]);
    const double best_bound = open.empty() ? inc_score_ : std::min(inc_score_, open.top().bound);
    sol.gap = std::max(0.0, (inc_score_ - best_bound) / std::max(std::abs(inc_score_), 1.0));
    sol.optimal = !limit_hit && sol.gap <= cfg.gap_tol;
    sol.nodes = processed;
    fill_prices(pb_, sol);
    sol.wall_time_s = clock_s() - start;
    return sol;
  }

 private:
  double abs_tol() const { return pb_.config.gap_tol * std::max(std::abs(inc_score_), 1.0); }

  int pvar(int t, int d) const { return 2 * t + d; }

  bool has_threshold_inside(int t, int d, double lo, double hi) const {
    for (const UnitRef& u : units_[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)])
      if (u.threshold > lo && u.threshold < hi) return true;
    return false;
  }

  const XPathNetwork& net(int t, int d) const { return pb_.networks[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)]; }

  /// Builds and solves the node relaxation; false when infeasible.
  bool evaluate(Node& node) {
    node.id = next_id_++;
    const double dt = pb_.spec.delta_t_h;
    const Eigen::Index np = 2 * H_;
    std::vector<std::vector<std::pair<double, double>>> lines;  // per epigraph variable: (intercept, slope) in p
    std::vector<int> line_owner;
    node.epi.assign(static_cast<std::size_t>(H_), {-1, -1});
    for (int t = 0; t < H_; ++t)
      for (int d = 0; d < 2; ++d) {
        const double lo = node.lo[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        const double hi = node.hi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        if (lo > hi) return false;
        const bool off = node.mode[static_cast<std::size_t>(t)] == (d == 0 ? -1 : +1);
        if (off || !has_threshold_inside(t, d, lo, hi)) continue;
        const XPathNetwork& f = net(t, d);
        const UnitBounds ub = propagate_bounds(f, lo, hi);
        const double Ll = ub.lower.back()(0), Ul = ub.upper.back()(0);
        const double flo = f.evaluate(lo), fhi = f.evaluate(hi);
        const double slo = f.slope(lo, true), shi = f.slope(hi, false);
        // Lower bounds on lambda(p) as lines (intercept, slope).
        const std::array<std::pair<double, double>, 3> lam{{{flo - slo * lo, slo}, {fhi - shi * hi, shi}, {Ll, 0.0}}};
        std::vector<std::pair<double, double>> ls;
        for (const auto& [X, Lam] : {std::pair{lo, Ll}, std::pair{hi, Ul}})
          for (const auto& [a, s] : lam)  // X * (a + s p) + Lam * p - X * Lam
            ls.emplace_back(X * a - X * Lam, X * s + Lam);
        node.epi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)] = static_cast<int>(np + static_cast<Eigen::Index>(lines.size()));
        lines.push_back(std::move(ls));
        line_owner.push_back(2 * t + d);
      }
    const Eigen::Index n = np + static_cast<Eigen::Index>(lines.size());
    qp::Problem p = qp::Problem::box(VectorXd::Zero(n), VectorXd::Zero(n));
    std::vector<std::vector<std::pair<int, double>>> soc_terms(static_cast<std::size_t>(H_));
    const double ac = soc_per_mw_charge(pb_.spec), ad = soc_per_mw_discharge(pb_.spec);
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    for (int t = 0; t < H_; ++t) {
      const int mode = node.mode[static_cast<std::size_t>(t)];
      for (int d = 0; d < 2; ++d) {
        const int j = pvar(t, d);
        const bool off = mode == (d == 0 ? -1 : +1);
        double lo = node.lo[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        double hi = node.hi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        if (off) {
          if (lo > 0.0) return false;
          lo = hi = 0.0;
        }
        p.lower(j) = lo;
        p.upper(j) = hi;
        p.linear(j) = tie_weight(pb_.config, t, H_);
        soc_terms[static_cast<std::size_t>(t)].emplace_back(j, d == 0 ? ac : -ad);
        if (off || node.epi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)] >= 0) continue;
        // Affine price on [lo, hi]: exact quadratic cost.
        const XPathNetwork& f = net(t, d);
        const double flo = f.evaluate(lo);
        const double k = hi > lo ? std::max(0.0, (f.evaluate(hi) - flo) / (hi - lo)) : 0.0;
        p.hessian(j, j) = 2.0 * dt * k;
        p.linear(j) += dt * (flo - k * lo);
      }
      if (mode == 0) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
        r(pvar(t, 0)) = -1.0;
        r(pvar(t, 1)) = -1.0;
        rows.push_back(r);
        rhs.push_back(-P_);
      }
    }
    for (std::size_t e = 0; e < lines.size(); ++e) {
      const Eigen::Index s = np + static_cast<Eigen::Index>(e);
      const int j = line_owner[e];
      double smin = std::numeric_limits<double>::infinity(), smax = -smin;
      for (const auto& [a, b] : lines[e]) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
        r(s) = 1.0;
        r(j) = -b;
        rows.push_back(r);
        rhs.push_back(a);
        for (double pp : {p.lower(j), p.upper(j)}) {
          smin = std::min(smin, a + b * pp);
          smax = std::max(smax, a + b * pp);
        }
      }
      p.lower(s) = smin;
      p.upper(s) = smax + 1.0 + std::abs(smax);
      p.linear(s) = dt;
    }
    MatrixXd A_soc;
    VectorXd b_soc;
    add_soc_rows(pb_.spec, pb_.initial, soc_terms, n, A_soc, b_soc);
    p.ineq.resize(A_soc.rows() + static_cast<Eigen::Index>(rows.size()), n);
    p.ineq_rhs.resize(p.ineq.rows());
    p.ineq.topRows(A_soc.rows()) = A_soc;
    p.ineq_rhs.head(A_soc.rows()) = b_soc;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      p.ineq.row(A_soc.rows() + static_cast<Eigen::Index>(r)) = rows[r];
      p.ineq_rhs(A_soc.rows() + static_cast<Eigen::Index>(r)) = rhs[r];
    }
    const qp::Result res = qp::solve(p);
    if (res.status == qp::Status::infeasible) return false;
    if (res.status != qp::Status::optimal) throw Error("node relaxation did not converge");
    node.x = res.x;
    node.bound = res.objective;
    return true;
  }

  double score(const std::vector<Action>& acts) const {
    double s = 0.0;
    for (int t = 0; t < H_; ++t) {
      const Action& a = acts[static_cast<std::size_t>(t)];
      s += action_cost(pb_.spec, pb_.networks[static_cast<std::size_t>(t)], a) +
           tie_weight(pb_.config, t, H_) * (a.charge_mw + a.discharge_mw);
    }
    return s;
  }

  void heuristic(const Node& node) {
    std::vector<Action> acts;
    BatteryState st = pb_.initial;
    for (int t = 0; t < H_; ++t) {
      double pc = node.x(pvar(t, 0)), pd = node.x(pvar(t, 1));
      if (pc < 1e-12) pc = 0.0;
      if (pd < 1e-12) pd = 0.0;
      Action a = pc >= pd ? make_action(pc, 0.0) : make_action(0.0, pd);
      a = clamp_feasible(pb_.spec, st, a);
      st = step_soc(pb_.spec, st, a);
      acts.push_back(a);
    }
    const double s = score(acts);
    if (s < inc_score_ - 1e-12 * (1.0 + std::abs(inc_score_))) {
      inc_score_ = s;
      incumbent_ = std::move(acts);
      if (pb_.config.trace) {
        std::ostringstream os;
        os << "incumbent node=" << node.id << " value=" << s;
        pb_.config.trace(os.str());
      }
    }
  }

  std::vector<Node> branch(const Node& node) {
    constexpr double ptol = 1e-9;
    for (int t = 0; t < H_; ++t) {
      if (node.mode[static_cast<std::size_t>(t)] != 0) continue;
      if (node.x(pvar(t, 0)) > ptol && node.x(pvar(t, 1)) > ptol) {
        Node c = node, d = node;
        c.mode[static_cast<std::size_t>(t)] = +1;
        d.mode[static_cast<std::size_t>(t)] = -1;
        return {std::move(c), std::move(d)};
      }
    }
    const double dt = pb_.spec.delta_t_h;
    double best = -1.0;
    int bt = -1, bd = -1;
    double br = 0.0;
    for (int t = 0; t < H_; ++t)
      for (int d = 0; d < 2; ++d) {
        const int e = node.epi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        if (e < 0) continue;
        const double pstar = node.x(pvar(t, d));
        const XPathNetwork& f = net(t, d);
        const double true_cost = dt * pstar * f.evaluate(pstar);
        if (true_cost - dt * node.x(e) <= 1e-12 * (1.0 + std::abs(true_cost))) continue;
        const double lo = node.lo[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        const double hi = node.hi[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)];
        const auto pre = f.pre_activations(pstar);
        const auto plo = f.pre_activations(lo);
        const auto phi = f.pre_activations(hi);
        for (const UnitRef& u : units_[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)]) {
          if (!(u.threshold > lo && u.threshold < hi)) continue;
          const auto l = static_cast<std::size_t>(u.layer);
          const double a = pre[l](u.index), L = plo[l](u.index), U = phi[l](u.index);
          double dlo = 0.0, dhi = 1.0;
          if (U > 0.0) dlo = std::max(0.0, a / U);
          if (L < 0.0) dhi = std::min(1.0, 1.0 - a / L);
          const double mid = 0.5 * (dlo + std::max(dlo, dhi));
          const double sc = std::min(mid, 1.0 - mid);
          if (sc > best) {
            best = sc;
            bt = t;
            bd = d;
            br = u.threshold;
          }
        }
      }
    if (bt < 0) return {};
    Node lo = node, hi = node;
    lo.hi[static_cast<std::size_t>(bt)][static_cast<std::size_t>(bd)] = br;  // binary 0: unit inactive
    hi.lo[static_cast<std::size_t>(bt)][static_cast<std::size_t>(bd)] = br;  // binary 1: unit active
    return {std::move(lo), std::move(hi)};
  }

  const HorizonProblem& pb_;
  int H_;
  double P_;
  std::vector<std::array<std::vector<UnitRef>, 2>> units_;
  std::vector<Action> incumbent_;
  double inc_score_ = 0.0;
  long next_id_ = 0;
};

}  // namespace

Solution solve_bnb(const HorizonProblem& problem) {
  problem.validate();
  return BranchAndBound(problem).run();
}

}  // namespace imbal
