#include "mscaps/patches.hpp"

#include <numeric>

#include "mscaps/error.hpp"

namespace mscaps {

std::size_t mirror_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

Tensor extract_patch(const Tensor& image, std::size_t row, std::size_t col, std::size_t r) {
  require(r % 2 == 1, ErrorCode::kInvalidArgument, "patch size must be odd, got " + std::to_string(r));
  require(image.rank() == 2 || image.rank() == 3, ErrorCode::kShapeMismatch, "patch source must be [h,w] or [h,w,c]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.rank() == 3 ? image.dim(2) : 1;
  require(row < h && col < w, ErrorCode::kInvalidArgument, "patch centre outside the image");
  Tensor out(Shape{r, r, c});
  const long half = static_cast<long>(r / 2);
  for (std::size_t y = 0; y < r; ++y) {
    const std::size_t sy = mirror_index(static_cast<long>(row) + static_cast<long>(y) - half, h);
    for (std::size_t x = 0; x < r; ++x) {
      const std::size_t sx = mirror_index(static_cast<long>(col) + static_cast<long>(x) - half, w);
      for (std::size_t ch = 0; ch < c; ++ch) out[(y * r + x) * c + ch] = image[(sy * w + sx) * c + ch];
    }
  }
  return out;
}

namespace {
// First k entries of a Fisher-Yates shuffle.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}
}  // namespace

SampleSet select_samples(const Tensor& image, const ChangeMap& gt, std::size_t count, std::size_t patch,
                         bool balanced, Rng& rng) {
  require(image.dim(0) == gt.height && image.dim(1) == gt.width, ErrorCode::kShapeMismatch,
          "ground truth size does not match the image");
  require(count <= gt.labels.size(), ErrorCode::kInvalidArgument,
          "requested " + std::to_string(count) + " samples from " + std::to_string(gt.labels.size()) + " pixels");
  require(patch % 2 == 1, ErrorCode::kInvalidArgument, "patch size must be odd");
  std::vector<std::size_t> picked;
  if (balanced) {
    std::vector<std::size_t> changed, unchanged;
    for (std::size_t i = 0; i < gt.labels.size(); ++i) (gt.labels[i] ? changed : unchanged).push_back(i);
    const std::size_t want_changed = count / 2, want_unchanged = count - count / 2;
    require(want_changed <= changed.size(), ErrorCode::kInvalidArgument,
            "requested " + std::to_string(want_changed) + " changed samples but only " +
                std::to_string(changed.size()) + " changed pixels exist");
    require(want_unchanged <= unchanged.size(), ErrorCode::kInvalidArgument,
            "requested " + std::to_string(want_unchanged) + " unchanged samples but only " +
                std::to_string(unchanged.size()) + " unchanged pixels exist");
    picked = draw(std::move(changed), want_changed, rng);
    auto u = draw(std::move(unchanged), want_unchanged, rng);
    picked.insert(picked.end(), u.begin(), u.end());
  } else {
    std::vector<std::size_t> all(gt.labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    picked = draw(std::move(all), count, rng);
  }
  SampleSet set;
  set.samples.reserve(picked.size());
  for (auto idx : picked) {
    Sample s;
    s.row = idx / gt.width;
    s.col = idx % gt.width;
    s.label = gt.labels[idx];
    s.patch = extract_patch(image, s.row, s.col, patch);
    (s.label ? set.changed : set.unchanged)++;
    set.samples.push_back(std::move(s));
  }
  return set;
}

}  // namespace mscaps
