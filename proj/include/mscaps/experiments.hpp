#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mscaps/classify.hpp"
#include "mscaps/train.hpp"

namespace mscaps {

/// One full DI -> samples -> train -> classify run.
struct RunConfig {
  NetworkConfig network{};
  TrainConfig train{};
  std::size_t samples = 1000;
  bool balanced = true;
  double eps = kLogRatioEps;
};

struct RunOutcome {
  ModelArtifact model;
  std::vector<EpochStats> trace;
  ChangeMap map;
  std::optional<MetricsReport> metrics;  // when the scene has ground truth
};

/// Requires scene.gt for sampling.
SampleSet training_samples(const ScenePair& scene, const DifferenceImage& di, const RunConfig& config);
RunOutcome run_scene(const ScenePair& scene, const RunConfig& config, const EpochCallback& on_epoch = {});

struct AblationRow {
  std::uint64_t seed = 0;
  Variant variant = Variant::kFull;
  MetricsReport metrics;
};

/// Every variant for every seed, variants in table order.
std::vector<AblationRow> run_ablation(const ScenePair& scene, const RunConfig& base,
                                      const std::vector<std::uint64_t>& seeds);
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Mean PCC per variant, e.g. "capsnet=97.1 no_afc=... ", for reporting.
std::string ablation_summary(const std::vector<AblationRow>& rows);

struct PatchStudyRow {
  std::size_t patch = 0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

std::vector<PatchStudyRow> run_patch_study(const ScenePair& scene, const RunConfig& base,
                                           const std::vector<std::size_t>& patches,
                                           const std::vector<std::uint64_t>& seeds);
std::string patch_study_csv(const std::vector<PatchStudyRow>& rows);
/// True when mean PCC never drops by more than `slack` points from its
/// running maximum, i.e. rises then levels off.
bool monotone_plateau(const std::vector<PatchStudyRow>& rows, double slack);

}  // namespace mscaps
