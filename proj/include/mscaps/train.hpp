#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "mscaps/loss_metrics.hpp"
#include "mscaps/model.hpp"
#include "mscaps/optim.hpp"
#include "mscaps/patches.hpp"

namespace mscaps {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 64;
  AdamConfig adam{};
  MarginParams margin{};
  std::uint64_t seed = 42;
  /// Workers for per-sample gradients. Gradients are summed in sample order,
  /// so results do not depend on this.
  std::size_t threads = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean margin loss over the epoch
  double accuracy = 0.0;  // fraction of samples classified correctly during the epoch
};

struct TrainResult {
  ModelArtifact model;
  std::vector<EpochStats> trace;
};

/// Fresh parameters from the seed.
ModelArtifact init_model(const NetworkConfig& network, std::uint64_t seed);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam on the mean margin loss. Starts from `model` (its
/// parameters are overwritten in the result).
TrainResult train(const SampleSet& samples, ModelArtifact model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Per-sample loss and gradients, in parameter order.
struct SampleGradient {
  double loss = 0.0;
  int predicted = 0;
  std::vector<Tensor> grads;
};
SampleGradient sample_gradient(const ModelArtifact& model, const Sample& sample, const MarginParams& margin);

}  // namespace mscaps
