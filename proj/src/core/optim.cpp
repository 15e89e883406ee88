#include "mscaps/optim.hpp"

#include <cmath>

#include "mscaps/error.hpp"

namespace mscaps {

void adam_step(Parameters& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config) {
  require(grads.size() == params.size(), ErrorCode::kShapeMismatch,
          "adam_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
              " parameters");
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params.value(i).shape());
      state.v.emplace_back(params.value(i).shape());
    }
  }
  require(state.m.size() == params.size(), ErrorCode::kShapeMismatch, "adam_step: optimizer state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].shape() == params.value(i).shape() && state.m[i].shape() == params.value(i).shape(),
            ErrorCode::kShapeMismatch, "adam_step: shape mismatch for parameter '" + params.name(i) + "'");
    require(grads[i].all_finite(), ErrorCode::kNonFinite,
            "adam_step: non-finite gradient for parameter '" + params.name(i) + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.value(i).data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace mscaps
