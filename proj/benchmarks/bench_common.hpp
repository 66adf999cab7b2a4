#pragma once

#include <random>

#include "imbal/dataio.hpp"
#include "imbal/market_model.hpp"

namespace bench {

/// Two days of synthetic data shared by the benchmarks.
inline const imbal::Scenario& scenario() {
  static const imbal::Scenario s = [] {
    imbal::ScenarioConfig c;
    c.days = 2;
    c.seed = 31;
    return imbal::generate_synthetic(c);
  }();
  return s;
}

inline imbal::QhContext context(std::size_t q) {
  static const auto means = scenario().si.qh_means();
  q = 2 + q % (means.size() - 2);
  return imbal::make_context(scenario().orders[q], means[q], means[q - 1], means[q - 2],
                             scenario().si.traces[q].qh_index);
}

/// Untrained parameters with the x-path weights scaled so kinks fall inside
/// the action range, which is the harder case for the solvers.
inline imbal::IcnnParams params(const imbal::ModelConfig& cfg, std::uint64_t seed) {
  imbal::IcnnParams p = imbal::IcnnParams::init(cfg, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> N(0.0, 1.0);
  for (auto* group : {&p.wz, &p.wx})
    for (auto& w : *group)
      for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = std::abs(N(rng));
  for (auto& b : p.bz)
    for (Eigen::Index i = 0; i < b.value.size(); ++i) b.value.data()[i] = N(rng);
  p.project();
  return p;
}

}  // namespace bench
