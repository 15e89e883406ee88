#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mscaps/loss_metrics.hpp"
#include "mscaps/tensor.hpp"

namespace mscaps {

/// Single-channel binary PGM (P5). maxval <= 255 is stored as 8-bit
/// samples, larger maxval as 16-bit big-endian.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 255;
  std::vector<std::uint16_t> pixels;
};

GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

/// [h, w] intensities.
Tensor to_tensor(const GrayImage& image);
/// Rounds and clamps to the 8-bit range when every value fits, else 16-bit.
GrayImage from_intensity(const Tensor& image);

/// Accepts only the values 0 and maxval.
ChangeMap to_change_map(const GrayImage& image);
/// Writes {0, 255}.
GrayImage from_change_map(const ChangeMap& map);

}  // namespace mscaps
