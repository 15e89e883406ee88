#include "mscaps/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mscaps/error.hpp"
#include "mscaps/parallel.hpp"

namespace mscaps {

ModelArtifact init_model(const NetworkConfig& network, std::uint64_t seed) {
  ModelArtifact m;
  m.network = network;
  m.network.afc.in_channels = network.in_channels();
  Rng rng(seed);
  m.params = init_network(m.network, rng);
  m.seed = seed;
  return m;
}

namespace {

// A tape with the parameters bound once; each sample rewinds to the mark.
class GradientWorker {
 public:
  explicit GradientWorker(const ModelArtifact& model)
      : model_(model), bound_(tape_, model.params, true), mark_(tape_.size()) {}

  SampleGradient run(const Sample& sample, const MarginParams& margin) {
    tape_.truncate(mark_);
    Var v = network_forward(model_.network, bound_, tape_.constant(sample.patch));
    Var loss = margin_loss(v, sample.label, margin);
    tape_.backward(loss);
    return {loss.value()[0], caps::predicted_class(v.value()), bound_.gradients()};
  }

 private:
  const ModelArtifact& model_;
  Tape tape_;
  Binding bound_;
  std::size_t mark_;
};

}  // namespace

SampleGradient sample_gradient(const ModelArtifact& model, const Sample& sample, const MarginParams& margin) {
  GradientWorker worker(model);
  return worker.run(sample, margin);
}

TrainResult train(const SampleSet& samples, ModelArtifact model, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  require(config.epochs == 0 || !samples.empty(), ErrorCode::kInvalidArgument, "training needs at least one sample");
  require(config.batch >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  model.network.validate();
  TrainResult result;
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle(config.seed ^ 0x6a09e667f3bcc908ULL);
  AdamState state;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.below(i))]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch, ++batch_index) {
      const std::size_t count = std::min(config.batch, n - start);
      std::vector<SampleGradient> per_sample(count);
      try {
        parallel_for(count, config.threads, [&](std::size_t b, std::size_t e) {
          GradientWorker worker(model);
          for (std::size_t i = b; i < e; ++i)
            per_sample[i] = worker.run(samples.samples[order[start + i]], config.margin);
        });
      } catch (const Error& err) {
        fail(err.code(), "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + err.what());
      }
      std::vector<Tensor> grads = std::move(per_sample[0].grads);
      for (std::size_t i = 1; i < count; ++i)
        for (std::size_t k = 0; k < grads.size(); ++k) {
          auto dst = grads[k].data();
          auto src = per_sample[i].grads[k].data();
          for (std::size_t q = 0; q < dst.size(); ++q) dst[q] += src[q];
        }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : grads)
        for (auto& v : g.data()) v *= inv;
      for (std::size_t i = 0; i < count; ++i) {
        loss_sum += per_sample[i].loss;
        if (per_sample[i].predicted == samples.samples[order[start + i]].label) ++correct;
      }
      require(std::isfinite(loss_sum), ErrorCode::kNonFinite,
              "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      try {
        adam_step(model.params, grads, state, config.adam);
      } catch (const Error& err) {
        fail(err.code(), "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + err.what());
      }
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace mscaps
