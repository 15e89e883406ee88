#pragma once

#include <cstdint>
#include <vector>

#include "mscaps/params.hpp"

namespace mscaps {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Moments are created on first use.
/// Throws ErrorCode::kNonFinite naming the parameter if a gradient is not finite.
void adam_step(Parameters& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace mscaps
