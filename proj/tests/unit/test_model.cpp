#include <doctest.h>

#include <filesystem>

#include "mscaps/error.hpp"
#include "mscaps/model.hpp"
#include "mscaps/train.hpp"

using namespace mscaps;

namespace {

bool has_prefix(const Parameters& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).rfind(prefix, 0) == 0) return true;
  return false;
}

ErrorCode code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_model(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

}  // namespace

TEST_CASE("variants select their branches") {
  for (auto v : kAllVariants) {
    NetworkConfig net;
    net.variant = v;
    const ModelArtifact m = init_model(net, 3);
    CHECK(has_prefix(m.params, "afc.") == net.uses_afc());
    CHECK(m.params.contains("primary.k3.kernel"));
    CHECK(m.params.contains("primary.k5.kernel") == (net.scales().size() == 2));
    Rng rng(4);
    Tensor patch({9, 9, 1});
    for (auto& x : patch.data()) x = rng.uniform();
    const Tensor out = predict_vectors(m.network, m.params, patch);
    CHECK(out.shape() == Shape{2, 16});
    for (double len : caps::class_lengths(out).data()) CHECK(len < 1.0);
    CHECK(parse_variant(variant_name(v)) == v);
  }
  NetworkConfig capsnet;
  capsnet.variant = Variant::kCapsNet;
  CHECK(capsnet.scales() == std::vector<std::size_t>{3});
  CHECK(!capsnet.uses_afc());
  CHECK_THROWS_AS(parse_variant("resnet"), Error);
}

TEST_CASE("network config validation") {
  NetworkConfig net;
  net.patch = 8;
  CHECK_THROWS_AS(net.validate(), Error);
  net.patch = 3;
  CHECK_THROWS_AS(net.validate(), Error);
  net.patch = 5;
  CHECK_NOTHROW(net.validate());
  CHECK(net.conv_caps_window(5) == 1);
  net.patch = 9;
  CHECK(net.conv_caps_window(3) == 3);
  CHECK(net.conv_caps_window(5) == 3);
}

TEST_CASE("every variant survives a serialization round trip bit for bit") {
  for (auto v : kAllVariants)
    for (auto input : {InputMode::kDi, InputMode::kPair}) {
      NetworkConfig net;
      net.variant = v;
      net.input = input;
      net.patch = 11;
      net.route_grad = caps::RouteGrad::kFull;
      ModelArtifact m = init_model(net, 17);
      m.di_lo = 0.125;
      m.di_hi = 3.0 / 7.0;
      m.intensity_scale = 251.0;
      const auto bytes = serialize_model(m);
      const ModelArtifact back = deserialize_model(bytes);
      CHECK(back == m);
      CHECK(serialize_model(back) == bytes);
    }
  NetworkConfig shared;
  shared.shared_capsule_weights = true;
  shared.afc.shared_attention = true;
  const ModelArtifact m = init_model(shared, 1);
  CHECK(deserialize_model(serialize_model(m)) == m);
}

TEST_CASE("model file layout starts with magic and version") {
  const auto bytes = serialize_model(init_model(NetworkConfig{}, 1));
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "MSCAPS");
  CHECK(bytes[6] == 1);
  const std::uint32_t count = bytes[7] | bytes[8] << 8 | bytes[9] << 16 | static_cast<std::uint32_t>(bytes[10]) << 24;
  CHECK(count == init_model(NetworkConfig{}, 1).params.size());
}

TEST_CASE("damaged model files give structured errors") {
  const auto bytes = serialize_model(init_model(NetworkConfig{}, 2));
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{11}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 9, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(len));
    INFO("length " << len);
    CHECK(code_of(cut) == ErrorCode::kCorrupt);
  }
  auto magic = bytes;
  magic[0] ^= 0x20;
  CHECK(code_of(magic) == ErrorCode::kVersionMismatch);
  auto version = bytes;
  version[6] = 2;
  CHECK(code_of(version) == ErrorCode::kVersionMismatch);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of(trailing) == ErrorCode::kCorrupt);
}

TEST_CASE("model save and load through a file") {
  const auto dir = std::filesystem::temp_directory_path() / "mscaps_unit_model";
  std::filesystem::create_directories(dir);
  const ModelArtifact m = init_model(NetworkConfig{}, 9);
  save_model(m, (dir / "m.bin").string());
  CHECK(load_model((dir / "m.bin").string()) == m);
  try {
    load_model((dir / "nope.bin").string());
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}
