#include <benchmark/benchmark.h>

#include <vector>

#include "bench_common.hpp"
#include "imbal/clearing_approx.hpp"
#include "imbal/miqp.hpp"

namespace {

const char* kBatteries[] = {"1mw", "10mw", "50mw"};

std::vector<imbal::HorizonProblem> problems(const imbal::IcnnParams& p, const char* battery, int count) {
  const imbal::XPathBuilder build(p);
  std::vector<imbal::HorizonProblem> v;
  for (int i = 0; i < count; ++i) {
    imbal::HorizonProblem pb;
    pb.spec = imbal::BatterySpec::preset(battery);
    pb.initial.soc = 0.2 + 0.6 * (i % 7) / 6.0;
    for (int h = 0; h < 4; ++h) pb.networks.push_back(build(bench::context(static_cast<std::size_t>(5 * i + h))));
    v.push_back(std::move(pb));
  }
  return v;
}

void solver_bench(benchmark::State& state, bool sweep) {
  const imbal::IcnnParams p = bench::params(imbal::ModelConfig::desk(), 2);
  const auto pbs = problems(p, kBatteries[state.range(0)], 32);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& pb = pbs[i++ % pbs.size()];
    benchmark::DoNotOptimize(sweep ? imbal::solve_sweep(pb) : imbal::solve_bnb(pb));
  }
  state.SetLabel(kBatteries[state.range(0)]);
}

void BM_SolveBnb(benchmark::State& state) { solver_bench(state, false); }
void BM_SolveSweep(benchmark::State& state) { solver_bench(state, true); }
BENCHMARK(BM_SolveBnb)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SolveSweep)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

/// The clearing-approximation path of one MPC step: cost curves and the
/// mode enumeration over H = 4.
void BM_ClearingStep(benchmark::State& state) {
  const imbal::BatterySpec spec = imbal::BatterySpec::preset(kBatteries[state.range(0)]);
  const auto& s = bench::scenario();
  const auto means = s.si.qh_means();
  imbal::BatteryState st;
  st.soc = 0.5;
  std::size_t t = 0;
  for (auto _ : state) {
    std::vector<imbal::StepCosts> costs;
    for (std::size_t h = 0; h < 4; ++h) {
      const std::size_t q = (t + h) % means.size();
      const imbal::PriceLadders lad(s.orders[q]);
      costs.push_back(
          {imbal::ConvexCost::envelope_of_step_product(imbal::approx_cost_curve(lad, means[q], +1, spec.power_max_mw), spec.delta_t_h),
           imbal::ConvexCost::envelope_of_step_product(imbal::approx_cost_curve(lad, means[q], -1, spec.power_max_mw), spec.delta_t_h)});
    }
    benchmark::DoNotOptimize(imbal::solve_modes(spec, st, costs));
    t = (t + 1) % means.size();
  }
  state.SetLabel(kBatteries[state.range(0)]);
}
BENCHMARK(BM_ClearingStep)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

}  // namespace
