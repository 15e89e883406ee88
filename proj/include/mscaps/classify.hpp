#pragma once

#include <cstddef>

#include "mscaps/loss_metrics.hpp"
#include "mscaps/model.hpp"
#include "mscaps/scene.hpp"

namespace mscaps {

/// Network input image [h, w, c] for the model's input mode.
Tensor network_input(const NetworkConfig& network, const ScenePair& scene, const DifferenceImage& di,
                     double intensity_scale);

/// Classifies every pixel from its patch. Pixels are split over `threads`
/// workers; the map does not depend on the split.
ChangeMap classify_image(const ModelArtifact& model, const Tensor& input, std::size_t threads = 1);

/// DI with the model's stored range, then classify_image.
ChangeMap predict_scene(const ModelArtifact& model, const ScenePair& scene, std::size_t threads = 1);

}  // namespace mscaps
