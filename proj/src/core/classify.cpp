#include "mscaps/classify.hpp"

#include <algorithm>

#include "mscaps/error.hpp"
#include "mscaps/parallel.hpp"
#include "mscaps/patches.hpp"

namespace mscaps {

Tensor network_input(const NetworkConfig& network, const ScenePair& scene, const DifferenceImage& di,
                     double intensity_scale) {
  const std::size_t h = di.values.dim(0), w = di.values.dim(1);
  if (network.input == InputMode::kDi) return di.values.reshaped(Shape{h, w, 1});
  require(intensity_scale > 0.0, ErrorCode::kInvalidArgument, "intensity scale must be > 0");
  require(scene.t1.shape() == di.values.shape(), ErrorCode::kShapeMismatch, "scene and DI sizes differ");
  Tensor out(Shape{h, w, 2});
  for (std::size_t i = 0; i < h * w; ++i) {
    out[2 * i] = scene.t1[i] / intensity_scale;
    out[2 * i + 1] = scene.t2[i] / intensity_scale;
  }
  return out;
}

ChangeMap classify_image(const ModelArtifact& model, const Tensor& input, std::size_t threads) {
  require(input.rank() == 3 && input.dim(2) == model.network.in_channels(), ErrorCode::kShapeMismatch,
          "classifier input " + shape_str(input.shape()) + " does not match the model's " +
              std::to_string(model.network.in_channels()) + " input channel(s)");
  const std::size_t h = input.dim(0), w = input.dim(1);
  ChangeMap map(h, w);
  parallel_for(h * w, threads, [&](std::size_t begin, std::size_t end) {
    Tape tape;
    Binding bound(tape, model.params, false);
    const std::size_t mark = tape.size();
    for (std::size_t idx = begin; idx < end; ++idx) {
      tape.truncate(mark);
      Tensor patch = extract_patch(input, idx / w, idx % w, model.network.patch);
      Var v = network_forward(model.network, bound, tape.constant(std::move(patch)));
      map.labels[idx] = static_cast<std::uint8_t>(caps::predicted_class(v.value()));
    }
  });
  return map;
}

ChangeMap predict_scene(const ModelArtifact& model, const ScenePair& scene, std::size_t threads) {
  const DifferenceImage di = log_ratio_di(scene, model.eps, model.di_lo, model.di_hi);
  return classify_image(model, network_input(model.network, scene, di, model.intensity_scale), threads);
}

}  // namespace mscaps
