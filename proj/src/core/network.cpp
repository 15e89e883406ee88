#include "mscaps/network.hpp"

#include <cmath>

#include "mscaps/error.hpp"

namespace mscaps {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kCapsNet: return "capsnet";
    case Variant::kNoAfc: return "no_afc";
    case Variant::kNoMultiscale: return "no_multiscale";
    case Variant::kFull: return "full";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (variant_name(v) == name) return v;
  fail(ErrorCode::kInvalidArgument,
       "unknown variant '" + std::string(name) + "' (expected full, no_afc, no_multiscale or capsnet)");
}

std::string_view input_mode_name(InputMode m) { return m == InputMode::kDi ? "di" : "pair"; }

InputMode parse_input_mode(std::string_view name) {
  if (name == "di") return InputMode::kDi;
  if (name == "pair") return InputMode::kPair;
  fail(ErrorCode::kInvalidArgument, "unknown input mode '" + std::string(name) + "' (expected di or pair)");
}

std::vector<std::size_t> NetworkConfig::scales() const {
  if (variant == Variant::kFull || variant == Variant::kNoAfc) return {3, 5};
  return {3};
}

std::size_t NetworkConfig::conv_caps_window(std::size_t scale) const {
  const std::size_t grid = patch - scale + 1;
  return std::min(conv_caps_kernel, grid);
}

void NetworkConfig::validate() const {
  require(patch % 2 == 1, ErrorCode::kInvalidArgument, "patch size must be odd, got " + std::to_string(patch));
  require(patch >= afc::kMinPatch, ErrorCode::kInvalidArgument,
          "patch size must be >= " + std::to_string(afc::kMinPatch));
  require(capsule_dim > 0 && primary_channels % capsule_dim == 0, ErrorCode::kInvalidArgument,
          "primary channels must be divisible by the capsule dimension");
  require(conv_caps_kernel >= 1 && conv_caps_types >= 1 && conv_caps_dim >= 1 && class_dim >= 1,
          ErrorCode::kInvalidArgument, "capsule sizes must be positive");
  require(classes == 2, ErrorCode::kInvalidArgument, "exactly two classes are supported");
  require(routing_iterations >= 1, ErrorCode::kInvalidArgument, "routing iterations must be >= 1");
  require(afc.attention_kernel % 2 == 1, ErrorCode::kInvalidArgument, "attention kernel length must be odd");
  require(transform_init > 0.0, ErrorCode::kInvalidArgument, "transform_init must be > 0");
}

namespace {

std::string scale_tag(const NetworkConfig& c, std::size_t scale) {
  return c.shared_capsule_weights ? "" : ".k" + std::to_string(scale);
}

std::string primary_kernel(std::size_t s) { return "primary.k" + std::to_string(s) + ".kernel"; }
std::string primary_bias(std::size_t s) { return "primary.k" + std::to_string(s) + ".bias"; }
std::string conv_caps_weights(const NetworkConfig& c, std::size_t s) { return "convcaps" + scale_tag(c, s) + ".weights"; }
std::string class_caps_weights(const NetworkConfig& c, std::size_t s) { return "classcaps" + scale_tag(c, s) + ".weights"; }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Parameters init_network(const NetworkConfig& config, Rng& rng) {
  config.validate();
  Parameters params;
  std::size_t features = config.in_channels();
  if (config.uses_afc()) {
    afc::AfcConfig afc_config = config.afc;
    afc_config.in_channels = config.in_channels();
    afc::init_params(params, afc_config, rng);
    features = config.afc.fuse_channels;
  }
  const std::size_t n_types = config.primary_channels / config.capsule_dim;
  bool shared_done = false;
  for (auto s : config.scales()) {
    Tensor k(Shape{s, s, features, config.primary_channels});
    const double stddev = std::sqrt(2.0 / static_cast<double>(s * s * features));
    for (auto& v : k.data()) v = rng.normal(0.0, stddev);
    params.add(primary_kernel(s), std::move(k));
    params.add(primary_bias(s), Tensor(Shape{config.primary_channels}));
    if (config.shared_capsule_weights && shared_done) continue;
    params.add(conv_caps_weights(config, s),
               uniform_tensor({n_types, config.conv_caps_types, config.conv_caps_dim, config.capsule_dim},
                              config.transform_init, rng));
    params.add(class_caps_weights(config, s),
               uniform_tensor({config.conv_caps_types, config.classes, config.class_dim, config.conv_caps_dim},
                              config.transform_init, rng));
    shared_done = true;
  }
  return params;
}

Var network_forward(const NetworkConfig& config, const Binding& bound, Var patch) {
  const Shape ps = patch.shape();
  require(ps.size() == 3 && ps[0] == config.patch && ps[1] == config.patch && ps[2] == config.in_channels(),
          ErrorCode::kShapeMismatch,
          "network expects a [" + std::to_string(config.patch) + "," + std::to_string(config.patch) + "," +
              std::to_string(config.in_channels()) + "] patch, got " + shape_str(ps));
  Var features = config.uses_afc() ? afc::forward(patch, bound, config.afc) : patch;
  Var fused{};
  bool first = true;
  for (auto s : config.scales()) {
    Var primary = caps::primary_capsules(features, bound[primary_kernel(s)], bound[primary_bias(s)], config.capsule_dim);
    Var conv = caps::conv_capsule(primary, bound[conv_caps_weights(config, s)], config.conv_caps_window(s),
                                  config.routing_iterations, config.route_grad);
    Var cls = caps::class_capsules(conv, bound[class_caps_weights(config, s)], config.routing_iterations,
                                   config.route_grad);
    fused = first ? cls : caps::fuse_class_vectors(fused, cls);
    first = false;
  }
  return fused;
}

Tensor predict_vectors(const NetworkConfig& config, const Parameters& params, const Tensor& patch) {
  Tape tape;
  Binding bound(tape, params, false);
  return network_forward(config, bound, tape.constant(patch)).value();
}

}  // namespace mscaps
