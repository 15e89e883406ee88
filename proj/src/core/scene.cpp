#include "mscaps/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mscaps/error.hpp"
#include "mscaps/pgm.hpp"
#include "mscaps/rng.hpp"

namespace mscaps {

void ScenePair::validate() const {
  require(t1.rank() == 2 && t2.rank() == 2, ErrorCode::kShapeMismatch, "scene images must be [h, w]");
  require(t1.shape() == t2.shape(), ErrorCode::kShapeMismatch,
          "scene images differ in size: " + shape_str(t1.shape()) + " vs " + shape_str(t2.shape()));
  for (const Tensor* t : {&t1, &t2})
    for (double v : t->data()) require(v >= 0.0, ErrorCode::kInvalidArgument, "scene intensities must be >= 0");
  if (gt)
    require(gt->height == height() && gt->width == width(), ErrorCode::kShapeMismatch,
            "ground truth size does not match the images");
}

ScenePair load_scene(const std::string& t1_path, const std::string& t2_path, const std::string& gt_path) {
  ScenePair s;
  s.t1 = to_tensor(read_pgm(t1_path));
  s.t2 = to_tensor(read_pgm(t2_path));
  if (!gt_path.empty()) s.gt = to_change_map(read_pgm(gt_path));
  s.validate();
  return s;
}

void save_scene(const ScenePair& scene, const std::string& dir) {
  scene.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create directory " + dir + ": " + ec.message());
  const std::filesystem::path base(dir);
  write_pgm((base / "t1.pgm").string(), from_intensity(scene.t1));
  write_pgm((base / "t2.pgm").string(), from_intensity(scene.t2));
  if (scene.gt) write_pgm((base / "gt.pgm").string(), from_change_map(*scene.gt));
}

Tensor DifferenceImage::raw() const {
  Tensor out(values.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lo + values[i] * (hi - lo);
  return out;
}

namespace {
Tensor raw_log_ratio(const ScenePair& scene, double eps) {
  scene.validate();
  require(eps >= 0.0, ErrorCode::kInvalidArgument, "log-ratio eps must be >= 0");
  Tensor raw(scene.t1.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::abs(std::log((scene.t2[i] + eps) / (scene.t1[i] + eps)));
    require(std::isfinite(v), ErrorCode::kNonFinite, "log ratio is undefined at a zero pixel; use eps > 0");
    raw[i] = v;
  }
  return raw;
}

DifferenceImage scale(Tensor raw, double lo, double hi) {
  DifferenceImage di;
  di.lo = lo;
  di.hi = hi;
  di.values = Tensor(raw.shape());
  const double span = hi - lo;
  if (span > 0.0)
    for (std::size_t i = 0; i < raw.size(); ++i) di.values[i] = std::clamp((raw[i] - lo) / span, 0.0, 1.0);
  return di;
}
}  // namespace

DifferenceImage log_ratio_di(const ScenePair& scene, double eps) {
  Tensor raw = raw_log_ratio(scene, eps);
  const auto [mn, mx] = std::minmax_element(raw.data().begin(), raw.data().end());
  const double lo = *mn, hi = *mx;
  return scale(std::move(raw), lo, hi);
}

DifferenceImage log_ratio_di(const ScenePair& scene, double eps, double lo, double hi) {
  require(hi >= lo, ErrorCode::kInvalidArgument, "DI range must satisfy lo <= hi");
  return scale(raw_log_ratio(scene, eps), lo, hi);
}

ScenePair synth_scene(const SynthParams& p) {
  require(p.size >= 32, ErrorCode::kInvalidArgument, "synthetic scene size must be >= 32");
  require(p.looks >= 1.0, ErrorCode::kInvalidArgument, "looks must be >= 1");
  require(p.contrast > 0.0 && std::isfinite(p.contrast), ErrorCode::kInvalidArgument, "contrast must be > 0");
  require(p.regions <= 64, ErrorCode::kInvalidArgument, "at most 64 change regions are supported");
  const std::size_t n = p.size;
  const double nd = static_cast<double>(n);
  Rng rng(p.seed);

  // Voronoi parcels with reflectivity levels in [30, 75].
  const std::size_t parcels = 6 + n / 64;
  std::vector<double> py(parcels), px(parcels), level(parcels);
  for (std::size_t k = 0; k < parcels; ++k) {
    py[k] = rng.uniform(0.0, nd);
    px[k] = rng.uniform(0.0, nd);
    level[k] = rng.uniform(30.0, 75.0);
  }
  Tensor reflect(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < parcels; ++k) {
        const double dy = static_cast<double>(r) - py[k], dx = static_cast<double>(c) - px[k];
        const double d = dy * dy + dx * dx;
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      reflect.at(r, c) = level[best];
    }

  // Change regions: semi-axes / half-sides in [n/12, n/5], fully inside the image.
  ChangeMap gt(n, n);
  const double smin = nd / 12.0, smax = nd / 5.0;
  require(2.0 * smax + 2.0 < nd, ErrorCode::kInvalidArgument, "change regions do not fit the image");
  for (std::size_t k = 0; k < p.regions; ++k) {
    const bool ellipse = rng.uniform() < 0.5;
    const double ay = rng.uniform(smin, smax), ax = rng.uniform(smin, smax);
    const double cy = rng.uniform(ay + 1.0, nd - ay - 1.0), cx = rng.uniform(ax + 1.0, nd - ax - 1.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double dy = (static_cast<double>(r) - cy) / ay, dx = (static_cast<double>(c) - cx) / ax;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) gt.at(r, c) = 1;
      }
  }
  if (p.contrast == 1.0) std::fill(gt.labels.begin(), gt.labels.end(), 0);

  ScenePair s;
  s.t1 = Tensor(Shape{n, n});
  s.t2 = Tensor(Shape{n, n});
  const double scale = 1.0 / p.looks;
  for (std::size_t i = 0; i < n * n; ++i) {
    const double r1 = reflect[i];
    const double r2 = gt.labels[i] ? r1 * p.contrast : r1;
    s.t1[i] = std::clamp(std::round(r1 * rng.gamma(p.looks, scale)), 0.0, 255.0);
    s.t2[i] = std::clamp(std::round(r2 * rng.gamma(p.looks, scale)), 0.0, 255.0);
  }
  s.gt = std::move(gt);
  return s;
}

}  // namespace mscaps
