#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "imbal/market_model.hpp"

namespace imbal {

struct TrainingSample {
  int context = 0;
  double action_mag_mw = 0.0;
  int dir_flag = +1;
  double label = 0.0;  // output convention, EUR/MWh
};

/// Samples grouped by quarter hour. Splits hold context indices.
struct Dataset {
  std::vector<QhContext> contexts;
  std::vector<long> context_qh;                 // global QH ordinal of each context
  std::vector<std::pair<int, int>> context_samples;  // [begin, end) into samples
  std::vector<TrainingSample> samples;
  std::vector<int> train, validation, test;

  std::vector<int> samples_of(const std::vector<int>& contexts) const;
  void validate() const;
};

enum class GateGradient { straight_through, detached };

struct TrainConfig {
  int epochs = 40;
  double learning_rate = 2e-4;
  int batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  GateGradient gate = GateGradient::straight_through;
};

struct EpochRecord {
  int epoch = 0;
  double train_l1 = 0.0;       // EUR/MWh
  double validation_l1 = 0.0;  // EUR/MWh
};

struct TrainResult {
  IcnnParams params;
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_validation_l1 = 0.0;
};

/// Mean L1 loss (normalized units) of `samples`. With `accumulate` the
/// parameter gradients of that loss are added to Parameter::grad.
double batch_loss(IcnnParams& params, const Dataset& data, const std::vector<int>& samples, GateGradient gate,
                  bool accumulate);

/// Mean absolute error in EUR/MWh over all samples of `contexts`.
double evaluate_l1(const IcnnParams& params, const Dataset& data, const std::vector<int>& contexts,
                   int batch_size = 1024);

/// Whole quarter hours per batch, about `batch_size` samples each, in an
/// order shuffled by `seed`.
std::vector<std::vector<int>> make_batches(const Dataset& data, const std::vector<int>& contexts, int batch_size,
                                           std::uint64_t seed);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam with L1 loss; projects wz, wx onto >= 0 after every step and returns
/// the parameters of the epoch with the lowest validation loss. Throws
/// TrainingError on a non-finite loss.
TrainResult train(const Dataset& data, IcnnParams init, const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace imbal
