#include <doctest.h>

#include <random>

#include "imbal/dataio.hpp"
#include "imbal/errors.hpp"
#include "imbal/training.hpp"

using namespace imbal;

namespace {

const Dataset& small_dataset() {
  static const Dataset d = [] {
    ScenarioConfig sc;
    sc.days = 2;
    sc.seed = 21;
    const Scenario s = generate_synthetic(sc);
    DatasetConfig dc;
    dc.perturbation_mw = {0.0, 5.0, 20.0};
    return build_training_set(s.si, s.orders, dc);
  }();
  return d;
}

ModelConfig tiny() {
  ModelConfig c = ModelConfig::desk();
  c.embed_hidden = {8, 8};
  c.static_hidden = {8, 4};
  c.top_k = {8, 8, 2, 2};
  return c;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("dataset cardinality and chronological split") {
    const Dataset& d = small_dataset();
    CHECK(d.contexts.size() == 192);
    // Zero yields one sample per direction; every nonzero magnitude two.
    CHECK(d.samples.size() == 192 * 6);
    CHECK(d.train.size() == 160);
    CHECK(d.validation.size() == 16);
    CHECK(d.test.size() == 16);
    CHECK(d.context_qh[static_cast<std::size_t>(d.train.back())] < d.context_qh[static_cast<std::size_t>(d.validation.front())]);
    CHECK(d.context_qh[static_cast<std::size_t>(d.validation.back())] < d.context_qh[static_cast<std::size_t>(d.test.front())]);
  }

  TEST_CASE("batches hold whole quarter hours") {
    const Dataset& d = small_dataset();
    const auto batches = make_batches(d, d.train, 40, 3);
    std::size_t total = 0;
    for (const auto& b : batches) {
      total += b.size();
      CHECK(b.size() % 6 == 0);
    }
    CHECK(total == d.samples_of(d.train).size());
    CHECK(make_batches(d, d.train, 40, 3) == batches);
  }

  TEST_CASE("autodiff gradient matches central differences") {
    const Dataset& d = small_dataset();
    IcnnParams p = IcnnParams::init(tiny(), 5);
    const auto batches = make_batches(d, d.train, 24, 1);
    const std::vector<int>& batch = batches.front();
    for (auto* q : p.all()) q->zero_grad();
    batch_loss(p, d, batch, GateGradient::straight_through, true);

    std::mt19937_64 rng(2);
    const double h = 1e-4 / 100.0;  // parameters act on inputs scaled by 1/100
    int checked = 0, skipped = 0;
    double worst = 0.0;
    for (auto* q : p.all()) {
      for (int draw = 0; draw < 6; ++draw) {
        const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(q->value.size()));
        const double keep = q->value.data()[i];
        auto eval = [&](double v) {
          q->value.data()[i] = v;
          return batch_loss(p, d, batch, GateGradient::straight_through, false);
        };
        const double f0 = eval(keep), fp = eval(keep + h), fm = eval(keep - h);
        q->value.data()[i] = keep;
        const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
        // A kink or a top-k swap inside [keep - h, keep + h] shows up as
        // disagreeing one-sided differences.
        if (std::abs(fwd - bwd) > 1e-6 * std::max(1.0, std::abs(fwd))) {
          ++skipped;
          continue;
        }
        const double fd = 0.5 * (fwd + bwd);
        const double g = q->grad.data()[i];
        worst = std::max(worst, std::abs(g - fd) / std::max(1e-3, std::abs(fd)));
        ++checked;
      }
    }
    CHECK(checked > 3 * skipped);
    CHECK(worst < 1e-4);
  }

  TEST_CASE("attention projections receive gradient") {
    const Dataset& d = small_dataset();
    IcnnParams p = IcnnParams::init(tiny(), 6);
    for (auto* q : p.all()) q->zero_grad();
    batch_loss(p, d, d.samples_of({0, 1, 2, 3}), GateGradient::straight_through, true);
    for (std::size_t l = 0; l < kLadderCount; ++l) {
      CHECK(p.attn_wq[l].grad.cwiseAbs().maxCoeff() > 0.0);
      CHECK(p.attn_wk[l].grad.cwiseAbs().maxCoeff() > 0.0);
    }
    for (auto* q : p.all()) q->zero_grad();
    batch_loss(p, d, d.samples_of({0, 1, 2, 3}), GateGradient::detached, true);
    for (std::size_t l = 0; l < kLadderCount; ++l) CHECK(p.attn_wk[l].grad.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("training projects, improves and is deterministic") {
    const Dataset& d = small_dataset();
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 9;
    tc.batch_size = 64;
    tc.learning_rate = 1e-3;
    std::vector<EpochRecord> curve;
    const TrainResult a = train(d, tiny(), tc, [&](const EpochRecord& r) { curve.push_back(r); });
    const TrainResult b = train(d, tiny(), tc);
    REQUIRE(curve.size() == 3);
    CHECK(curve.back().train_l1 < curve.front().train_l1);
    for (const auto& w : a.params.wz) CHECK(w.value.minCoeff() >= 0.0);
    for (const auto& w : a.params.wx) CHECK(w.value.minCoeff() >= 0.0);
    const auto pa = a.params.all();
    const auto pb = b.params.all();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
    CHECK(a.best_validation_l1 == evaluate_l1(a.params, d, d.validation));
  }

  TEST_CASE("non-finite loss aborts with parameter norms") {
    const Dataset& d = small_dataset();
    IcnnParams p = IcnnParams::init(tiny(), 7);
    p.bz.back().value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.epochs = 1;
    try {
      train(d, p, tc);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch") != std::string::npos);
      CHECK(msg.find("norm") != std::string::npos);
    }
  }
}
