#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "mscaps/loss_metrics.hpp"
#include "mscaps/tensor.hpp"

namespace mscaps {

/// Two co-registered intensity images [h, w] and an optional change mask.
struct ScenePair {
  Tensor t1;
  Tensor t2;
  std::optional<ChangeMap> gt;

  std::size_t height() const { return t1.dim(0); }
  std::size_t width() const { return t1.dim(1); }
  void validate() const;
};

ScenePair load_scene(const std::string& t1_path, const std::string& t2_path, const std::string& gt_path = "");
/// Writes t1.pgm, t2.pgm and (when present) gt.pgm into dir.
void save_scene(const ScenePair& scene, const std::string& dir);

inline constexpr double kLogRatioEps = 1.0;

/// Log-ratio magnitude scaled to [0, 1] by the range [lo, hi] of the raw values.
struct DifferenceImage {
  Tensor values;  // [h, w]
  double lo = 0.0;
  double hi = 1.0;

  /// Undoes the scaling.
  Tensor raw() const;
};

/// |log((t2 + eps) / (t1 + eps))| min-max scaled over the image. A constant
/// raw image maps to all zeros.
DifferenceImage log_ratio_di(const ScenePair& scene, double eps = kLogRatioEps);
/// Same, scaled with a fixed range and clamped to [0, 1].
DifferenceImage log_ratio_di(const ScenePair& scene, double eps, double lo, double hi);

struct SynthParams {
  std::size_t size = 128;
  std::size_t regions = 4;
  double looks = 4.0;
  double contrast = 3.0;
  std::uint64_t seed = 42;
};

/// Piecewise-constant reflectivity (Voronoi parcels) with elliptical and
/// rectangular change regions whose reflectivity is multiplied by contrast.
/// Each date gets independent unit-mean Gamma(looks) speckle; intensities
/// are quantized to 8 bits. gt marks the changed pixels (all zero when
/// contrast == 1).
ScenePair synth_scene(const SynthParams& params);

}  // namespace mscaps
