#include <benchmark/benchmark.h>

#include "bench_common.hpp"

namespace {

imbal::ModelConfig preset(int which) { return which == 0 ? imbal::ModelConfig::desk() : imbal::ModelConfig::full(); }

void BM_Forward(benchmark::State& state) {
  const imbal::IcnnParams p = bench::params(preset(static_cast<int>(state.range(0))), 1);
  const Eigen::VectorXd xs = imbal::static_input(bench::context(10), 1, p);
  double x = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(imbal::icnn_forward(x, xs, p));
    x = x < 1.0 ? x + 0.01 : 0.0;
  }
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->ArgName("full");

void BM_XPaths(benchmark::State& state) {
  const imbal::IcnnParams p = bench::params(preset(static_cast<int>(state.range(0))), 1);
  const imbal::XPathBuilder build(p);
  std::size_t q = 0;
  for (auto _ : state) benchmark::DoNotOptimize(build(bench::context(q++)));
}
BENCHMARK(BM_XPaths)->Arg(0)->Arg(1)->ArgName("full");

void BM_XPathEvaluate(benchmark::State& state) {
  const imbal::IcnnParams p = bench::params(preset(static_cast<int>(state.range(0))), 1);
  const imbal::XPathNetwork net = imbal::x_path(bench::context(10), 1, p);
  double x = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.evaluate(x));
    x = x < 50.0 ? x + 0.5 : 0.0;
  }
}
BENCHMARK(BM_XPathEvaluate)->Arg(0)->Arg(1)->ArgName("full");

}  // namespace
