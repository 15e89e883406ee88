#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mscaps/afc.hpp"
#include "mscaps/capsules.hpp"
#include "mscaps/params.hpp"
#include "mscaps/rng.hpp"

namespace mscaps {

/// Architecture variants of the ablation study.
enum class Variant { kCapsNet, kNoAfc, kNoMultiscale, kFull };

inline constexpr Variant kAllVariants[] = {Variant::kCapsNet, Variant::kNoAfc, Variant::kNoMultiscale,
                                           Variant::kFull};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Patch channels: the difference image alone, or the two dates.
enum class InputMode { kDi, kPair };

std::string_view input_mode_name(InputMode m);
InputMode parse_input_mode(std::string_view name);

struct NetworkConfig {
  Variant variant = Variant::kFull;
  InputMode input = InputMode::kDi;
  std::size_t patch = 9;
  afc::AfcConfig afc{};
  std::size_t primary_channels = 32;
  std::size_t capsule_dim = 8;
  std::size_t conv_caps_kernel = 3;
  std::size_t conv_caps_types = 4;
  std::size_t conv_caps_dim = 8;
  std::size_t classes = 2;
  std::size_t class_dim = 16;
  std::size_t routing_iterations = 3;
  caps::RouteGrad route_grad = caps::RouteGrad::kFinalOnly;
  bool shared_capsule_weights = false;
  double transform_init = 0.05;

  std::size_t in_channels() const { return input == InputMode::kDi ? 1 : 2; }
  bool uses_afc() const { return variant == Variant::kFull || variant == Variant::kNoMultiscale; }
  std::vector<std::size_t> scales() const;
  /// Conv-capsule window for a scale, shrunk to fit small capsule grids.
  std::size_t conv_caps_window(std::size_t scale) const;
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

Parameters init_network(const NetworkConfig& config, Rng& rng);

/// Class activity vectors [classes, class_dim] for one patch [r, r, c].
Var network_forward(const NetworkConfig& config, const Binding& bound, Var patch);

/// Inference convenience on plain values.
Tensor predict_vectors(const NetworkConfig& config, const Parameters& params, const Tensor& patch);

}  // namespace mscaps
