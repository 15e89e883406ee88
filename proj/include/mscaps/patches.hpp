#pragma once

#include <cstddef>
#include <vector>

#include "mscaps/loss_metrics.hpp"
#include "mscaps/rng.hpp"
#include "mscaps/tensor.hpp"

namespace mscaps {

/// Half-sample symmetric reflection of i into [0, n): -1 -> 0, n -> n-1.
std::size_t mirror_index(long i, std::size_t n);

/// r x r window centred at (row, col) of an [h, w] or [h, w, c] image,
/// mirror padded at the borders. Returns [r, r, c].
Tensor extract_patch(const Tensor& image, std::size_t row, std::size_t col, std::size_t r);

struct Sample {
  std::size_t row = 0;
  std::size_t col = 0;
  int label = 0;
  Tensor patch;
};

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t changed = 0;
  std::size_t unchanged = 0;
  bool empty() const noexcept { return samples.empty(); }
  std::size_t size() const noexcept { return samples.size(); }
};

/// Random pixels without replacement, labels from gt. With balanced=true
/// the set holds count/2 changed and count - count/2 unchanged pixels.
SampleSet select_samples(const Tensor& image, const ChangeMap& gt, std::size_t count, std::size_t patch,
                         bool balanced, Rng& rng);

}  // namespace mscaps
