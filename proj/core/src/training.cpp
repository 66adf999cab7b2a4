#include "imbal/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "imbal/errors.hpp"

namespace imbal {

std::vector<int> Dataset::samples_of(const std::vector<int>& ctx) const {
  std::vector<int> out;
  for (int c : ctx) {
    const auto [b, e] = context_samples.at(static_cast<std::size_t>(c));
    for (int i = b; i < e; ++i) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (context_qh.size() != contexts.size() || context_samples.size() != contexts.size())
    throw ShapeError("dataset context tables differ in length");
  for (const auto& s : samples)
    if (s.context < 0 || s.context >= static_cast<int>(contexts.size()) || s.action_mag_mw < 0.0 ||
        (s.dir_flag != 1 && s.dir_flag != -1))
      throw ContractError("invalid training sample");
}

namespace {

using ad::Matrix;
using ad::Var;

struct Graph {
  ad::Tape tape;
  bool track;
  Var p(ad::Parameter& x) { return track ? tape.param(x) : tape.constant(x.value); }
};

Var dense_chain(Graph& g, Var h, std::vector<ad::Parameter>& w, std::vector<ad::Parameter>& b, std::size_t from) {
  for (std::size_t i = from; i < w.size(); ++i) {
    h = ad::relu(h);
    h = ad::add_row(ad::matmul(h, g.p(w[i])), g.p(b[i]));
  }
  return h;
}

}  // namespace

double batch_loss(IcnnParams& params, const Dataset& data, const std::vector<int>& samples, GateGradient gate,
                  bool accumulate) {
  if (samples.empty()) throw ContractError("empty batch");
  const ModelConfig& cfg = params.config;
  Graph g{ad::Tape{}, accumulate};

  // Unique quarter hours, then unique (quarter hour, direction) pairs.
  std::vector<int> ctx;
  std::map<int, int> ctx_row;
  std::map<std::pair<int, int>, int> pair_row;
  std::vector<int> pair_ctx, pair_dir, sample_pair;
  for (int s : samples) {
    const TrainingSample& ts = data.samples.at(static_cast<std::size_t>(s));
    auto [it, fresh] = ctx_row.try_emplace(ts.context, static_cast<int>(ctx.size()));
    if (fresh) ctx.push_back(ts.context);
    auto [pit, pfresh] = pair_row.try_emplace({ts.context, ts.dir_flag}, static_cast<int>(pair_ctx.size()));
    if (pfresh) {
      pair_ctx.push_back(it->second);
      pair_dir.push_back(ts.dir_flag);
    }
    sample_pair.push_back(pit->second);
  }
  const auto Q = static_cast<Eigen::Index>(ctx.size());

  std::vector<int> qh(ctx.size());
  Matrix si(Q, 3);
  for (Eigen::Index q = 0; q < Q; ++q) {
    const QhContext& c = data.contexts[static_cast<std::size_t>(ctx[static_cast<std::size_t>(q)])];
    qh[static_cast<std::size_t>(q)] = c.qh_index;
    si.row(q) << c.si_forecast_mw / cfg.si_scale_mw, c.si_lag1_mw / cfg.si_scale_mw, c.si_lag2_mw / cfg.si_scale_mw;
  }

  std::vector<Var> parts;
  Var emb = ad::add_row(ad::gather_rows(g.p(params.embed_w[0]), qh), g.p(params.embed_b[0]));
  parts.push_back(dense_chain(g, emb, params.embed_w, params.embed_b, 1));

  const Var si_v = g.tape.constant(si);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
  for (int l = 0; l < kLadderCount; ++l) {
    const int k = cfg.top_k[static_cast<std::size_t>(l)];
    int L = 0;
    for (int c : ctx) L = std::max(L, data.contexts[static_cast<std::size_t>(c)].ladders[static_cast<std::size_t>(l)].size());
    if (L == 0) {
      parts.push_back(g.tape.constant(Matrix::Zero(Q, k * kBidFeatureDim)));
      continue;
    }
    Matrix feat = Matrix::Zero(Q * L, kBidFeatureDim);
    Matrix mask = Matrix::Zero(Q, L);
    for (Eigen::Index q = 0; q < Q; ++q) {
      const LadderFeatures& lf =
          data.contexts[static_cast<std::size_t>(ctx[static_cast<std::size_t>(q)])].ladders[static_cast<std::size_t>(l)];
      for (int i = 0; i < lf.size(); ++i) {
        auto r = feat.row(q * L + i);
        r(0) = lf.keys(i, 0) / cfg.price_scale;
        r(1) = lf.keys(i, 1) / cfg.price_scale;
        r(2) = lf.keys(i, 2) / cfg.volume_scale_mw;
        r(3) = lf.keys(i, 3) / cfg.volume_scale_mw;
        r(4) = lf.keys(i, 4) / cfg.volume_scale_mw;
        r(5) = lf.price(i) / cfg.price_scale;
        mask(q, i) = 1.0;
      }
    }
    const Var keys = g.tape.constant(feat.leftCols(kKeyDim));
    const Var query = ad::add_row(ad::matmul(si_v, g.p(params.attn_wq[l])), g.p(params.attn_bq[l]));
    const Var proj = ad::add_row(ad::matmul(keys, g.p(params.attn_wk[l])), g.p(params.attn_bk[l]));
    const Var w = ad::masked_softmax_rows(ad::block_row_dot(proj, query, L, inv_sqrt_d), mask);
    parts.push_back(ad::topk_gate(w, feat, mask, k, gate == GateGradient::straight_through));
  }
  parts.push_back(si_v);
  const Var base = ad::concat_cols(parts);

  Matrix dir(static_cast<Eigen::Index>(pair_dir.size()), 1);
  for (std::size_t i = 0; i < pair_dir.size(); ++i) dir(static_cast<Eigen::Index>(i), 0) = pair_dir[i];
  Var u = ad::concat_cols({ad::gather_rows(base, pair_ctx), g.tape.constant(dir)});

  const int depth = static_cast<int>(params.wz.size());
  std::vector<Var> c;
  for (int i = 0; i <= depth; ++i) {
    c.push_back(ad::gather_rows(ad::add_row(ad::matmul(u, g.p(params.wuz[i])), g.p(params.bz[i])), sample_pair));
    if (i < depth) u = ad::relu(ad::add_row(ad::matmul(u, g.p(params.wu[i])), g.p(params.bu[i])));
  }

  const auto B = static_cast<Eigen::Index>(samples.size());
  Matrix x(B, 1), target(B, 1);
  for (Eigen::Index i = 0; i < B; ++i) {
    const TrainingSample& ts = data.samples[static_cast<std::size_t>(samples[static_cast<std::size_t>(i)])];
    x(i, 0) = ts.action_mag_mw / cfg.action_scale_mw;
    target(i, 0) = ts.label / cfg.price_scale;
  }
  const Var xv = g.tape.constant(x);
  Var z = ad::relu(ad::add(ad::matmul(xv, g.p(params.wx[0])), c[0]));
  for (int i = 1; i <= depth; ++i) {
    Var a = ad::add(ad::add(ad::matmul(z, g.p(params.wz[i - 1])), ad::matmul(xv, g.p(params.wx[i]))), c[i]);
    z = i < depth ? ad::relu(a) : a;
  }
  const Var loss = ad::l1_mean(z, target);
  const double value = loss.value()(0, 0);
  if (accumulate && std::isfinite(value)) g.tape.backward(loss);
  return value;
}

double evaluate_l1(const IcnnParams& params, const Dataset& data, const std::vector<int>& contexts, int batch_size) {
  auto& p = const_cast<IcnnParams&>(params);  // read-only: no gradients are accumulated
  double total = 0.0;
  std::size_t n = 0;
  std::vector<int> batch;
  auto flush = [&] {
    if (batch.empty()) return;
    total += batch_loss(p, data, batch, GateGradient::detached, false) * static_cast<double>(batch.size());
    n += batch.size();
    batch.clear();
  };
  for (int c : contexts) {
    const auto [b, e] = data.context_samples.at(static_cast<std::size_t>(c));
    for (int i = b; i < e; ++i) batch.push_back(i);
    if (static_cast<int>(batch.size()) >= batch_size) flush();
  }
  flush();
  if (n == 0) throw MetricError("no samples to evaluate");
  return total / static_cast<double>(n) * params.config.price_scale;
}

std::vector<std::vector<int>> make_batches(const Dataset& data, const std::vector<int>& contexts, int batch_size,
                                           std::uint64_t seed) {
  std::vector<int> order(contexts);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  std::vector<int> cur;
  for (int c : order) {
    const auto [b, e] = data.context_samples.at(static_cast<std::size_t>(c));
    for (int i = b; i < e; ++i) cur.push_back(i);
    if (static_cast<int>(cur.size()) >= batch_size) batches.push_back(std::exchange(cur, {}));
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

namespace {

std::string norms_report(const IcnnParams& p) {
  std::ostringstream os;
  for (const ad::Parameter* x : p.all()) os << ' ' << x->name << '=' << x->value.norm();
  return os.str();
}

}  // namespace

TrainResult train(const Dataset& data, IcnnParams params, const TrainConfig& config, const EpochCallback& on_epoch) {
  data.validate();
  params.validate();
  if (data.train.empty() || data.validation.empty()) throw TrainingError("train and validation splits must be nonempty");
  if (config.epochs <= 0 || config.batch_size <= 0 || !(config.learning_rate > 0.0))
    throw TrainingError("invalid training hyperparameters");

  auto all = params.all();
  std::vector<Matrix> m, v;
  for (auto* p : all) {
    m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }

  TrainResult result;
  result.best_validation_l1 = std::numeric_limits<double>::infinity();
  long step = 0;
  std::mt19937_64 epoch_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(data, data.train, config.batch_size, epoch_rng());
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      for (auto* p : all) p->zero_grad();
      const double loss = batch_loss(params, data, batches[bi], config.gate, true);
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                            "; parameter norms:" + norms_report(params));
      sum += loss * static_cast<double>(batches[bi].size());
      count += batches[bi].size();

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < all.size(); ++i) {
        const Matrix& gr = all[i]->grad;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gr;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gr.cwiseAbs2();
        all[i]->value.array() -=
            config.learning_rate * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + config.epsilon);
      }
      params.project();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_l1 = sum / static_cast<double>(count) * params.config.price_scale;
    rec.validation_l1 = evaluate_l1(params, data, data.validation);
    if (!std::isfinite(rec.validation_l1))
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch) +
                          "; parameter norms:" + norms_report(params));
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation_l1 < result.best_validation_l1) {
      result.best_validation_l1 = rec.validation_l1;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  return train(data, IcnnParams::init(model, config.seed), config, on_epoch);
}

}  // namespace imbal
