#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "imbal/dataio.hpp"
#include "imbal/errors.hpp"

using namespace imbal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "imbal_dataio_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Minute CSV of `minutes` rows from 2023-01-01T00:00Z, skipping `skip` (or -1).
std::string minute_csv(int minutes, int skip = -1) {
  const std::int64_t start = parse_timestamp("2023-01-01T00:00:00Z");
  std::string s = "timestamp,si_mw\n";
  for (int m = 0; m < minutes; ++m) {
    if (m == skip) continue;
    s += format_timestamp(start + m) + "," + std::to_string(m % 7 - 3) + "\n";
  }
  return s;
}

/// Fraction of quarter hours with |mean SI| < 20 MW for an independent
/// simulation of the SI process: mean reversion toward a diurnal mean,
/// Gaussian increments and Gaussian jumps at a Bernoulli rate per minute.
double simulated_small_fraction(const ScenarioConfig& c, std::uint64_t seed, double* mean_out) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::bernoulli_distribution jump(c.si_jump_rate_per_min);
  double x = c.si_mean_mw, total = 0.0;
  long small = 0;
  const long n_qh = static_cast<long>(c.days) * kQhPerDay;
  for (long q = 0; q < n_qh; ++q) {
    double acc = 0.0;
    for (int m = 0; m < kMinutesPerQh; ++m) {
      const double minute_of_day = static_cast<double>((q * kMinutesPerQh + m) % 1440);
      const double mu = c.si_mean_mw + c.si_diurnal_amplitude_mw * std::sin(2.0 * std::numbers::pi * minute_of_day / 1440.0);
      x += c.si_reversion_per_min * (mu - x) + c.si_volatility_mw_sqrt_min * N(rng);
      if (jump(rng)) x += c.si_jump_std_mw * N(rng);
      x = std::clamp(x, -c.si_clip_mw, c.si_clip_mw);
      acc += x;
    }
    acc /= kMinutesPerQh;
    total += acc;
    small += std::abs(acc) < 20.0;
  }
  if (mean_out) *mean_out = total / static_cast<double>(n_qh);
  return static_cast<double>(small) / static_cast<double>(n_qh);
}

}  // namespace

TEST_SUITE("dataio") {
  TEST_CASE("one day of minutes gives 96 quarter hours") {
    const fs::path p = scratch("day.csv");
    write_text(p, minute_csv(96 * 15));
    const MinuteData d = load_minute_si(p);
    CHECK(d.traces.size() == 96);
    CHECK(d.start_minute == parse_timestamp("2023-01-01T00:00:00Z"));
    CHECK(d.traces[5].qh_index == 5);
    CHECK(d.traces[0].si_mw[4] == 1.0);
  }

  TEST_CASE("a 14-minute quarter hour is rejected by name") {
    const fs::path p = scratch("gap.csv");
    write_text(p, minute_csv(8 * 15, 5 * 15 + 7));
    try {
      load_minute_si(p);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("2023-01-01T01:15:00Z") != std::string::npos);
      CHECK(msg.find("14 minutes") != std::string::npos);
    }
  }

  TEST_CASE("minute loader reports malformed rows") {
    const fs::path p = scratch("bad.csv");
    write_text(p, "timestamp,si_mw\n2023-01-01T00:00:00Z,1\n2023-01-01T00:01:00Z,abc\n");
    try {
      load_minute_si(p);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.row() == 2);
    }
    write_text(p, "timestamp,si_mw\n2023-01-01T00:00:00Z,1\n2023-01-01T00:00:00Z,2\n");
    CHECK_THROWS_WITH_AS(load_minute_si(p), doctest::Contains("duplicate"), ParseError);
    write_text(p, "time,si\n");
    CHECK_THROWS_AS(load_minute_si(p), ParseError);
    // Quarter hours 00:00-00:45 present, 00:45 missing, 01:00 starts.
    write_text(p, minute_csv(15 * 3) + format_timestamp(parse_timestamp("2023-01-01T01:00:00Z")) + ",1\n");
    CHECK_THROWS_WITH_AS(load_minute_si(p), doctest::Contains("00:45:00Z is absent"), ParseError);
    CHECK_THROWS_AS(load_minute_si(scratch("does_not_exist.csv")), ParseError);
  }

  TEST_CASE("minute data round trip is the identity") {
    ScenarioConfig cfg;
    cfg.days = 2;
    cfg.seed = 9;
    const Scenario s = generate_synthetic(cfg);
    const fs::path p = scratch("rt.csv");
    write_minute_si(p, s.si);
    const MinuteData back = load_minute_si(p);
    REQUIRE(back.traces.size() == s.si.traces.size());
    CHECK(back.start_minute == s.si.start_minute);
    for (std::size_t q = 0; q < back.traces.size(); ++q) {
      CHECK(back.traces[q].qh_index == s.si.traces[q].qh_index);
      for (int m = 0; m < kMinutesPerQh; ++m) CHECK(back.traces[q].si_mw[m] == s.si.traces[q].si_mw[m]);
    }
    write_minute_si(scratch("rt2.csv"), back);
    CHECK(read_text(p) == read_text(scratch("rt2.csv")));
  }

  TEST_CASE("timestamps") {
    CHECK(parse_timestamp("1970-01-01T00:00:00Z") == 0);
    CHECK(parse_timestamp("2023-01-01T00:00:00Z") == 27875520);
    CHECK(format_timestamp(27875520 + 61) == "2023-01-01T01:01:00Z");
    CHECK_THROWS_AS(parse_timestamp("2023-02-30T00:00:00Z"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2023-01-01 00:00:00"), ParseError);
  }

  TEST_CASE("equal-price bids aggregate into one aFRR step") {
    const fs::path p = scratch("agg.csv");
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,aFRR,up,50,1\n0,aFRR,up,50,1\n");
    const auto orders = load_merit_orders(p);
    REQUIRE(orders.size() == 1);
    const auto& bids = orders[0].afrr_up.bids;
    REQUIRE(bids.size() == 1);
    CHECK(bids[0].price == 50.0);
    CHECK(bids[0].volume == 2.0);
    CHECK(bids[0].cum_volume == 2.0);
  }

  TEST_CASE("down ladders are sorted on load") {
    const fs::path p = scratch("sort.csv");
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,aFRR,down,10,2\n0,aFRR,down,40,2\n0,aFRR,down,25,2\n");
    const auto orders = load_merit_orders(p);
    const auto& bids = orders[0].afrr_down.bids;
    REQUIRE(bids.size() == 3);
    CHECK(bids[0].price == 40.0);
    CHECK(bids[1].price == 25.0);
    CHECK(bids[2].price == 10.0);
    CHECK(bids[2].cum_volume == 6.0);
  }

  TEST_CASE("150 MW of mFRR becomes a 100 MW step and a 50 MW remainder") {
    const fs::path p = scratch("mfrr.csv");
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,mFRR,up,120,150\n");
    const auto orders = load_merit_orders(p);
    const auto& bids = orders[0].mfrr_up.bids;
    REQUIRE(bids.size() == 2);
    CHECK(bids[0].volume == 100.0);
    CHECK(bids[1].volume == 50.0);
    CHECK(bids[1].cum_volume == 150.0);
    CHECK(bids[0].price == 120.0);
    CHECK(bids[1].price == 120.0);
  }

  TEST_CASE("each step takes the price of the marginal bid at its end") {
    // Bids 1 MW at 10, 1.5 MW at 20, 0.7 MW at 30: ends at 2, 3.2.
    const MeritOrder raw = MeritOrder::from_bids(Product::aFRR, Direction::up, {{10, 1.0}, {20, 1.5}, {30, 0.7}});
    const MeritOrder d = discretize(raw, 2.0);
    REQUIRE(d.bids.size() == 2);
    CHECK(d.bids[0].price == 20.0);
    CHECK(d.bids[0].cum_volume == 2.0);
    CHECK(d.bids[1].price == 30.0);
    CHECK(d.bids[1].cum_volume == doctest::Approx(3.2));
    CHECK(d.depth() == doctest::Approx(raw.depth()));
  }

  TEST_CASE("merit-order loader errors") {
    const fs::path p = scratch("mo_bad.csv");
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,FCR,up,1,1\n");
    CHECK_THROWS_AS(load_merit_orders(p), ParseError);
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,aFRR,sideways,1,1\n");
    CHECK_THROWS_AS(load_merit_orders(p), ParseError);
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,aFRR,up,1,0\n");
    CHECK_THROWS_AS(load_merit_orders(p), ParseError);
    write_text(p, "qh,product,direction,price_eur_mwh,volume_mw\n0,aFRR,up,1,1\n2,aFRR,up,1,1\n");
    CHECK_THROWS_WITH_AS(load_merit_orders(p), doctest::Contains("qh 1"), ParseError);
  }

  TEST_CASE("merit-order round trip") {
    ScenarioConfig cfg;
    cfg.days = 1;
    const Scenario s = generate_synthetic(cfg);
    const fs::path p = scratch("mo_rt.csv");
    write_merit_orders(p, s.orders);
    const auto back = load_merit_orders(p);
    REQUIRE(back.size() == s.orders.size());
    for (std::size_t q = 0; q < back.size(); ++q)
      for (Product pr : {Product::aFRR, Product::mFRR})
        for (Direction d : {Direction::up, Direction::down}) {
          const auto& a = back[q].ladder(pr, d).bids;
          const auto& b = s.orders[q].ladder(pr, d).bids;
          REQUIRE(a.size() == b.size());
          for (std::size_t k = 0; k < a.size(); ++k) {
            CHECK(a[k].price == b[k].price);
            CHECK(a[k].cum_volume == doctest::Approx(b[k].cum_volume).epsilon(1e-12));
          }
        }
  }

  TEST_CASE("generated ladders are discretized and valid") {
    ScenarioConfig cfg;
    cfg.days = 2;
    const Scenario s = generate_synthetic(cfg);
    for (const auto& q : s.orders)
      for (Product pr : {Product::aFRR, Product::mFRR})
        for (Direction d : {Direction::up, Direction::down}) {
          const MeritOrder& m = q.ladder(pr, d);
          m.validate();
          const double step = discretization_step(pr);
          for (std::size_t k = 0; k + 1 < m.bids.size(); ++k) CHECK(m.bids[k].volume == doctest::Approx(step));
          CHECK(m.bids.back().volume <= step + 1e-9);
        }
  }

  TEST_CASE("training set shape, labels and split") {
    ScenarioConfig cfg;
    cfg.days = 3;
    cfg.seed = 5;
    const Scenario s = generate_synthetic(cfg);
    DatasetConfig dc;
    dc.perturbation_mw = {0.0, 1.0, 10.0};
    const Dataset ds = build_training_set(s.si, s.orders, dc);
    const std::size_t n = s.si.traces.size();
    CHECK(ds.contexts.size() == n);
    CHECK(ds.samples.size() == n * 2 * dc.perturbation_mw.size());
    for (std::size_t t = 0; t < n; ++t) {
      const auto [b, e] = ds.context_samples[t];
      const PriceLadders ladders(s.orders[t]);
      const double idle = settle_qh(ladders, s.si.traces[t], Action::idle()).qh_price;
      for (int i = b; i < e; ++i) {
        const TrainingSample& smp = ds.samples[static_cast<std::size_t>(i)];
        CHECK(smp.context == static_cast<int>(t));
        if (smp.action_mag_mw == 0.0) CHECK(smp.label == (smp.dir_flag > 0 ? idle : -idle));
        const Action a = smp.dir_flag > 0 ? Action::charge(smp.action_mag_mw) : Action::discharge(smp.action_mag_mw);
        if (smp.action_mag_mw > 0.0)
          CHECK(smp.label == doctest::Approx(smp.dir_flag * settle_qh(ladders, s.si.traces[t], a).qh_price));
      }
    }
    CHECK(ds.train.size() == n * 10 / 12);
    CHECK(ds.validation.size() == n / 12);
    CHECK(ds.train.size() + ds.validation.size() + ds.test.size() == n);
    // Chronological: every train QH precedes every validation QH precedes every test QH.
    CHECK(ds.context_qh[static_cast<std::size_t>(ds.train.back())] < ds.context_qh[static_cast<std::size_t>(ds.validation.front())]);
    CHECK(ds.context_qh[static_cast<std::size_t>(ds.validation.back())] < ds.context_qh[static_cast<std::size_t>(ds.test.front())]);
    ds.validate();

    std::vector<QhMeritOrders> short_orders(s.orders.begin(), s.orders.end() - 1);
    CHECK_THROWS_AS(build_training_set(s.si, short_orders, dc), ContractError);
  }

  TEST_CASE("generator is deterministic per seed") {
    ScenarioConfig cfg;
    cfg.days = 2;
    cfg.seed = 77;
    const Scenario a = generate_synthetic(cfg), b = generate_synthetic(cfg);
    write_minute_si(scratch("a.csv"), a.si);
    write_minute_si(scratch("b.csv"), b.si);
    CHECK(read_text(scratch("a.csv")) == read_text(scratch("b.csv")));
    write_merit_orders(scratch("ao.csv"), a.orders);
    write_merit_orders(scratch("bo.csv"), b.orders);
    CHECK(read_text(scratch("ao.csv")) == read_text(scratch("bo.csv")));
    cfg.seed = 78;
    write_minute_si(scratch("c.csv"), generate_synthetic(cfg).si);
    CHECK(read_text(scratch("a.csv")) != read_text(scratch("c.csv")));
  }

  TEST_CASE("invalid scenario fields are named") {
    ScenarioConfig cfg;
    cfg.days = 0;
    CHECK_THROWS_WITH_AS(generate_synthetic(cfg), doctest::Contains("days"), ContractError);
    cfg.days = 1;
    cfg.afrr_depth_mw = -1.0;
    CHECK_THROWS_WITH_AS(generate_synthetic(cfg), doctest::Contains("afrr_depth_mw"), ContractError);
  }

  TEST_CASE("long-run SI mean and regime frequencies") {
    ScenarioConfig cfg;
    cfg.days = 120;
    cfg.seed = 31;
    const Scenario s = generate_synthetic(cfg);
    const auto means = s.si.qh_means();
    // Batch means over whole days remove the diurnal term and absorb the
    // short autocorrelation of the process.
    std::vector<double> daily;
    for (std::size_t d = 0; d < static_cast<std::size_t>(cfg.days); ++d) {
      double acc = 0.0;
      for (int q = 0; q < kQhPerDay; ++q) acc += means[d * kQhPerDay + static_cast<std::size_t>(q)];
      daily.push_back(acc / kQhPerDay);
    }
    double mu = 0.0, var = 0.0;
    for (double v : daily) mu += v;
    mu /= static_cast<double>(daily.size());
    for (double v : daily) var += (v - mu) * (v - mu);
    var /= static_cast<double>(daily.size() - 1);
    CHECK(std::abs(mu - cfg.si_mean_mw) <= 3.0 * std::sqrt(var / static_cast<double>(daily.size())));

    long small = 0;
    for (double m : means) small += std::abs(m) < 20.0;
    const double freq = static_cast<double>(small) / static_cast<double>(means.size());
    const double expected = simulated_small_fraction(cfg, 1234, nullptr);
    CHECK(std::abs(freq - expected) <= 0.05);
    CHECK(freq > 0.05);
    CHECK(freq < 0.95);
  }
}
