#include "mscaps/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "mscaps/error.hpp"

namespace mscaps {

namespace {
constexpr std::uint64_t kSamplingStream = 0xbb67ae8584caa73bULL;

double max_intensity(const ScenePair& scene) {
  double mx = 0.0;
  for (double v : scene.t1.data()) mx = std::max(mx, v);
  for (double v : scene.t2.data()) mx = std::max(mx, v);
  return mx > 0.0 ? mx : 1.0;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
}  // namespace

SampleSet training_samples(const ScenePair& scene, const DifferenceImage& di, const RunConfig& config) {
  require(scene.gt.has_value(), ErrorCode::kInvalidArgument, "training needs a ground-truth change mask");
  const Tensor input = network_input(config.network, scene, di, max_intensity(scene));
  Rng rng(config.train.seed ^ kSamplingStream);
  return select_samples(input, *scene.gt, config.samples, config.network.patch, config.balanced, rng);
}

RunOutcome run_scene(const ScenePair& scene, const RunConfig& config, const EpochCallback& on_epoch) {
  scene.validate();
  const DifferenceImage di = log_ratio_di(scene, config.eps);
  ModelArtifact model = init_model(config.network, config.train.seed);
  model.di_lo = di.lo;
  model.di_hi = di.hi;
  model.eps = config.eps;
  model.intensity_scale = max_intensity(scene);
  const SampleSet samples = training_samples(scene, di, config);
  TrainResult trained = train(samples, std::move(model), config.train, on_epoch);
  RunOutcome out;
  out.model = std::move(trained.model);
  out.trace = std::move(trained.trace);
  const Tensor input = network_input(out.model.network, scene, di, out.model.intensity_scale);
  out.map = classify_image(out.model, input, config.train.threads);
  if (scene.gt) out.metrics = evaluate(out.map, *scene.gt);
  return out;
}

std::vector<AblationRow> run_ablation(const ScenePair& scene, const RunConfig& base,
                                      const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), ErrorCode::kInvalidArgument, "ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (auto seed : seeds)
    for (auto v : kAllVariants) {
      RunConfig cfg = base;
      cfg.network.variant = v;
      cfg.train.seed = seed;
      RunOutcome out = run_scene(scene, cfg);
      rows.push_back({seed, v, *out.metrics});
    }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "seed,variant,pcc,kc,fp,fn,oe\n";
  for (const auto& r : rows)
    os << r.seed << ',' << variant_name(r.variant) << ',' << pct(r.metrics.pcc) << ',' << pct(r.metrics.kc) << ','
       << r.metrics.fp << ',' << r.metrics.fn << ',' << r.metrics.oe << '\n';
  return os.str();
}

std::string ablation_summary(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  bool first = true;
  for (auto v : kAllVariants) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.variant == v) {
        sum += r.metrics.pcc;
        ++n;
      }
    if (!n) continue;
    os << (first ? "" : " ") << variant_name(v) << '=' << pct(sum / static_cast<double>(n));
    first = false;
  }
  return os.str();
}

std::vector<PatchStudyRow> run_patch_study(const ScenePair& scene, const RunConfig& base,
                                           const std::vector<std::size_t>& patches,
                                           const std::vector<std::uint64_t>& seeds) {
  require(!patches.empty() && !seeds.empty(), ErrorCode::kInvalidArgument, "patch study needs patches and seeds");
  std::vector<PatchStudyRow> rows;
  for (auto p : patches)
    for (auto seed : seeds) {
      RunConfig cfg = base;
      cfg.network.patch = p;
      cfg.train.seed = seed;
      RunOutcome out = run_scene(scene, cfg);
      rows.push_back({p, seed, *out.metrics});
    }
  return rows;
}

std::string patch_study_csv(const std::vector<PatchStudyRow>& rows) {
  std::ostringstream os;
  os << "patch,seed,pcc,kc,oe\n";
  for (const auto& r : rows)
    os << r.patch << ',' << r.seed << ',' << pct(r.metrics.pcc) << ',' << pct(r.metrics.kc) << ',' << r.metrics.oe << '\n';
  return os.str();
}

bool monotone_plateau(const std::vector<PatchStudyRow>& rows, double slack) {
  std::map<std::size_t, std::pair<double, std::size_t>> by_patch;
  for (const auto& r : rows) {
    auto& acc = by_patch[r.patch];
    acc.first += r.metrics.pcc;
    acc.second += 1;
  }
  double best = -1.0;
  for (const auto& [patch, acc] : by_patch) {
    const double mean = acc.first / static_cast<double>(acc.second);
    if (mean < best - slack) return false;
    best = std::max(best, mean);
  }
  return true;
}

}  // namespace mscaps
