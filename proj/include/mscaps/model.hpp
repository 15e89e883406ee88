#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mscaps/network.hpp"
#include "mscaps/params.hpp"

namespace mscaps {

/// Everything needed to classify a new scene pair.
struct ModelArtifact {
  NetworkConfig network;
  Parameters params;
  double di_lo = 0.0;
  double di_hi = 1.0;
  double eps = 1.0;
  double intensity_scale = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const ModelArtifact& other) const;
};

inline constexpr char kModelMagic[6] = {'M', 'S', 'C', 'A', 'P', 'S'};
inline constexpr std::uint8_t kModelVersion = 1;

/// Little-endian layout: magic, version byte, u32 tensor count, then per
/// tensor {u16 name length, name, u8 rank, u32 dims, f64 payload}, then a
/// u32-length-prefixed key=value hyperparameter block.
std::vector<std::uint8_t> serialize_model(const ModelArtifact& model);
ModelArtifact deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelArtifact& model, const std::string& path);
ModelArtifact load_model(const std::string& path);

}  // namespace mscaps
