#pragma once

#include <cstddef>
#include <string>

#include "mscaps/autodiff.hpp"
#include "mscaps/params.hpp"
#include "mscaps/rng.hpp"

namespace mscaps::afc {

inline constexpr std::size_t kBranches = 3;
/// Dilation rate of branch i is i + 1.
inline constexpr std::size_t kDilations[kBranches] = {1, 2, 3};
/// Smallest patch for which every dilated 3x3 tap lands inside the patch.
inline constexpr std::size_t kMinPatch = 5;

struct AfcConfig {
  std::size_t in_channels = 1;
  std::size_t branch_channels = 32;
  std::size_t fuse_channels = 32;
  std::size_t attention_kernel = 3;
  bool shared_attention = false;

  bool operator==(const AfcConfig&) const = default;
};

/// Adds afc.* parameters: dilated kernels He-normal, biases zero, attention
/// kernels uniform in +-1/sqrt(k), matching kernels He-normal.
void init_params(Parameters& params, const AfcConfig& config, Rng& rng);

/// F_out = sigmoid(conv1d_channels(GAP(F_in))) * F_in, channel-wise.
Var channel_attention(Var features, Var kernel);

/// D_i(attention_i(relu(dilated_conv_i(patch)))) for branch i in [0, 3).
Var branch(Var patch, const Binding& bound, const AfcConfig& config, std::size_t i);

/// Sum of the three matched branches; output [r, r, fuse_channels].
Var forward(Var patch, const Binding& bound, const AfcConfig& config);

std::string conv_kernel_name(std::size_t i);
std::string conv_bias_name(std::size_t i);
std::string attention_name(std::size_t i, const AfcConfig& config);
std::string match_kernel_name(std::size_t i);
std::string match_bias_name(std::size_t i);

}  // namespace mscaps::afc
