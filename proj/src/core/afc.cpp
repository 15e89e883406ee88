#include "mscaps/afc.hpp"

#include <cmath>

#include "mscaps/error.hpp"

namespace mscaps::afc {

std::string conv_kernel_name(std::size_t i) { return "afc.conv" + std::to_string(i + 1) + ".kernel"; }
std::string conv_bias_name(std::size_t i) { return "afc.conv" + std::to_string(i + 1) + ".bias"; }
std::string attention_name(std::size_t i, const AfcConfig& config) {
  return config.shared_attention ? "afc.attention" : "afc.attention" + std::to_string(i + 1);
}
std::string match_kernel_name(std::size_t i) { return "afc.match" + std::to_string(i + 1) + ".kernel"; }
std::string match_bias_name(std::size_t i) { return "afc.match" + std::to_string(i + 1) + ".bias"; }

namespace {
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}
}  // namespace

void init_params(Parameters& params, const AfcConfig& config, Rng& rng) {
  require(config.attention_kernel % 2 == 1, ErrorCode::kInvalidArgument, "attention kernel length must be odd");
  const double att_bound = 1.0 / std::sqrt(static_cast<double>(config.attention_kernel));
  for (std::size_t i = 0; i < kBranches; ++i) {
    params.add(conv_kernel_name(i),
               he_normal({3, 3, config.in_channels, config.branch_channels}, 9 * config.in_channels, rng));
    params.add(conv_bias_name(i), Tensor(Shape{config.branch_channels}));
    if (!config.shared_attention || i == 0) {
      Tensor att(Shape{config.attention_kernel});
      for (auto& v : att.data()) v = rng.uniform(-att_bound, att_bound);
      params.add(attention_name(i, config), std::move(att));
    }
    params.add(match_kernel_name(i),
               he_normal({config.branch_channels, config.fuse_channels}, config.branch_channels, rng));
    params.add(match_bias_name(i), Tensor(Shape{config.fuse_channels}));
  }
}

Var channel_attention(Var features, Var kernel) {
  Var pooled = ops::global_avg_pool(features);
  Var weights = ops::sigmoid(ops::conv1d_channels(pooled, kernel));
  return ops::channel_broadcast_mul(features, weights);
}

Var branch(Var patch, const Binding& bound, const AfcConfig& config, std::size_t i) {
  require(i < kBranches, ErrorCode::kInvalidArgument, "AFC branch index out of range");
  const Shape s = patch.shape();
  require(s.size() == 3 && s[0] >= kMinPatch && s[1] >= kMinPatch, ErrorCode::kShapeMismatch,
          "AFC needs a patch of at least " + std::to_string(kMinPatch) + "x" + std::to_string(kMinPatch) +
              ", got " + shape_str(s));
  Var conv = ops::relu(ops::conv2d(patch, bound[conv_kernel_name(i)], bound[conv_bias_name(i)], kDilations[i],
                                   Padding::kSame));
  Var attended = channel_attention(conv, bound[attention_name(i, config)]);
  return ops::conv1x1(attended, bound[match_kernel_name(i)], bound[match_bias_name(i)]);
}

Var forward(Var patch, const Binding& bound, const AfcConfig& config) {
  Var fused = branch(patch, bound, config, 0);
  for (std::size_t i = 1; i < kBranches; ++i) fused = ops::add(fused, branch(patch, bound, config, i));
  return fused;
}

}  // namespace mscaps::afc
