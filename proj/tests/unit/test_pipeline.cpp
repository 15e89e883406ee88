#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mscaps/classify.hpp"
#include "mscaps/error.hpp"
#include "mscaps/experiments.hpp"
#include "mscaps/patches.hpp"
#include "mscaps/pgm.hpp"
#include "mscaps/scene.hpp"
#include "mscaps/train.hpp"

using namespace mscaps;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mscaps_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ScenePair small_pair(const Tensor& t1, const Tensor& t2) {
  ScenePair s;
  s.t1 = t1;
  s.t2 = t2;
  return s;
}

Tensor ramp(std::size_t h, std::size_t w) {
  Tensor t({h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) t.at(r, c) = 10.0 * static_cast<double>(r) + static_cast<double>(c);
  return t;
}

}  // namespace

TEST_CASE("log-ratio difference image") {
  Rng rng(1);
  Tensor a({6, 7}), b({6, 7});
  for (auto& v : a.data()) v = std::floor(rng.uniform(0.0, 255.0));
  for (auto& v : b.data()) v = std::floor(rng.uniform(0.0, 255.0));
  CHECK(log_ratio_di(small_pair(a, a)).values == Tensor({6, 7}, 0.0));
  const DifferenceImage ab = log_ratio_di(small_pair(a, b)), ba = log_ratio_di(small_pair(b, a));
  for (std::size_t i = 0; i < ab.values.size(); ++i) CHECK(std::abs(ab.values[i] - ba.values[i]) < 1e-15);
  double lo = 1e9, hi = -1e9;
  for (double v : ab.values.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-15));
  const DifferenceImage e = log_ratio_di(small_pair(Tensor({1, 1}, 1.0), Tensor({1, 1}, std::exp(1.0))), 0.0);
  CHECK(e.raw()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(e.values[0] == 0.0);
  CHECK_THROWS_AS(log_ratio_di(small_pair(Tensor({1, 1}, 0.0), Tensor({1, 1}, 1.0)), 0.0), Error);
}

TEST_CASE("difference image with a fixed range clamps") {
  const ScenePair s = small_pair(Tensor({1, 3}, std::vector<double>{9, 9, 9}), Tensor({1, 3}, std::vector<double>{9, 29, 99}));
  const DifferenceImage di = log_ratio_di(s, 1.0, 0.0, std::log(3.0));
  CHECK(di.values[0] == 0.0);
  CHECK(di.values[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(di.values[2] == 1.0);
}

TEST_CASE("mirror padding") {
  CHECK(mirror_index(-1, 5) == 0);
  CHECK(mirror_index(-2, 5) == 1);
  CHECK(mirror_index(5, 5) == 4);
  CHECK(mirror_index(6, 5) == 3);
  CHECK(mirror_index(-3, 1) == 0);
  CHECK(mirror_index(17, 2) == 1);
  CHECK(mirror_index(-4, 2) == 0);
  const Tensor img = ramp(5, 5);
  const Tensor corner = extract_patch(img, 0, 0, 3);
  const double expected[9] = {0, 0, 1, 0, 0, 1, 10, 10, 11};
  REQUIRE(corner.shape() == Shape{3, 3, 1});
  for (std::size_t i = 0; i < 9; ++i) CHECK(corner[i] == expected[i]);
  const Tensor interior = extract_patch(img, 2, 2, 5);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(interior.at(r, c, 0) == img.at(r, c));
  const Tensor flat({4, 6}, 3.5);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(extract_patch(flat, r, c, 9) == Tensor({9, 9, 1}, 3.5));
  const Tensor tiny = extract_patch(Tensor({1, 1}, 2.0), 0, 0, 7);
  CHECK(tiny == Tensor({7, 7, 1}, 2.0));
  CHECK_THROWS_AS(extract_patch(img, 0, 0, 4), Error);
  CHECK_THROWS_AS(extract_patch(img, 5, 0, 3), Error);
}

TEST_CASE("multi-channel patches keep channel order") {
  Tensor img({3, 3, 2});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const Tensor p = extract_patch(img, 1, 1, 3);
  CHECK(p == img);
}

TEST_CASE("sample selection") {
  ChangeMap gt(20, 20);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c) gt.at(r, c) = r < 8;
  const Tensor img = ramp(20, 20);
  Rng rng_a(7), rng_b(7);
  const SampleSet a = select_samples(img, gt, 200, 5, true, rng_a);
  const SampleSet b = select_samples(img, gt, 200, 5, true, rng_b);
  CHECK(a.changed == 100);
  CHECK(a.unchanged == 100);
  REQUIRE(a.size() == b.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].row == b.samples[i].row);
    CHECK(a.samples[i].col == b.samples[i].col);
    CHECK(a.samples[i].patch == b.samples[i].patch);
    CHECK(a.samples[i].label == gt.at(a.samples[i].row, a.samples[i].col));
    seen.insert({a.samples[i].row, a.samples[i].col});
  }
  CHECK(seen.size() == a.size());

  Rng rng_all(8);
  const SampleSet all = select_samples(img, gt, 400, 3, false, rng_all);
  std::set<std::pair<std::size_t, std::size_t>> every;
  for (const auto& s : all.samples) every.insert({s.row, s.col});
  CHECK(every.size() == 400);
  CHECK(all.changed == 160);

  Rng rng_bad(9);
  CHECK_THROWS_AS(select_samples(img, gt, 401, 3, false, rng_bad), Error);
  CHECK_THROWS_AS(select_samples(img, gt, 340, 3, true, rng_bad), Error);
}

TEST_CASE("synthetic scenes") {
  SynthParams p;
  p.size = 64;
  const ScenePair a = synth_scene(p), b = synth_scene(p);
  CHECK(a.t1 == b.t1);
  CHECK(a.t2 == b.t2);
  CHECK(*a.gt == *b.gt);
  CHECK(a.height() == 64);
  std::size_t changed = 0;
  for (auto v : a.gt->labels) changed += v;
  CHECK(changed > 0);
  CHECK(changed < 64 * 64 / 2);
  for (double v : a.t1.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
    CHECK(v == std::round(v));
  }
  p.seed = 43;
  CHECK(synth_scene(p).t1 != a.t1);

  SynthParams flat = p;
  flat.contrast = 1.0;
  const ScenePair none = synth_scene(flat);
  CHECK(none.gt->labels == std::vector<std::uint8_t>(64 * 64, 0));

  SynthParams bad = p;
  bad.size = 16;
  CHECK_THROWS_AS(synth_scene(bad), Error);
}

TEST_CASE("with many looks the DI inside changes approaches |log contrast|") {
  SynthParams p;
  p.size = 128;
  p.looks = 512.0;
  p.contrast = 3.0;
  const ScenePair s = synth_scene(p);
  const DifferenceImage di = log_ratio_di(s, kLogRatioEps);
  const Tensor raw = di.raw();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (s.gt->labels[i]) {
      sum += raw[i];
      ++n;
    }
  REQUIRE(n > 0);
  CHECK(std::abs(sum / static_cast<double>(n) - std::log(3.0)) < 0.05 * std::log(3.0));
}

TEST_CASE("PGM round trips and errors") {
  const fs::path dir = scratch_dir("pgm");
  GrayImage g;
  g.width = 3;
  g.height = 2;
  g.maxval = 255;
  g.pixels = {0, 1, 2, 128, 254, 255};
  write_pgm((dir / "a.pgm").string(), g);
  const GrayImage r = read_pgm((dir / "a.pgm").string());
  CHECK(r.pixels == g.pixels);
  CHECK(r.width == 3);
  CHECK(r.height == 2);

  g.maxval = 4095;
  g.pixels = {0, 4095, 300, 1, 2, 3};
  write_pgm((dir / "b.pgm").string(), g);
  CHECK(read_pgm((dir / "b.pgm").string()).pixels == g.pixels);

  {
    std::ofstream f(dir / "c.pgm", std::ios::binary);
    f << "P5\n# comment line\n2 1\n# another\n255\n" << '\x07' << '\x09';
  }
  CHECK(read_pgm((dir / "c.pgm").string()).pixels == std::vector<std::uint16_t>{7, 9});
  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n" << "abc";
  }
  try {
    read_pgm((dir / "short.pgm").string());
    FAIL("expected a corrupt-file error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorrupt);
  }
  {
    std::ofstream f(dir / "p2.pgm", std::ios::binary);
    f << "P2\n1 1\n255\n7\n";
  }
  CHECK_THROWS_AS(read_pgm((dir / "p2.pgm").string()), Error);
  try {
    read_pgm((dir / "missing.pgm").string());
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }

  ChangeMap m(2, 2);
  m.labels = {0, 1, 1, 0};
  CHECK(to_change_map(from_change_map(m)) == m);
  GrayImage not_binary = from_change_map(m);
  not_binary.pixels[0] = 17;
  CHECK_THROWS_AS(to_change_map(not_binary), Error);
}

TEST_CASE("scene save and load") {
  SynthParams p;
  p.size = 32;
  p.regions = 2;
  const ScenePair s = synth_scene(p);
  const fs::path dir = scratch_dir("scene");
  save_scene(s, dir.string());
  const ScenePair back =
      load_scene((dir / "t1.pgm").string(), (dir / "t2.pgm").string(), (dir / "gt.pgm").string());
  CHECK(back.t1 == s.t1);
  CHECK(back.t2 == s.t2);
  CHECK(*back.gt == *s.gt);

  SynthParams q = p;
  q.size = 40;
  save_scene(synth_scene(q), (dir / "other").string());
  try {
    load_scene((dir / "t1.pgm").string(), (dir / "other" / "t2.pgm").string());
    FAIL("expected a size mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("zero epochs returns the initialization and initial loss is bounded") {
  SynthParams p;
  p.size = 48;
  const ScenePair scene = synth_scene(p);
  RunConfig cfg;
  cfg.samples = 64;
  cfg.train.epochs = 0;
  const DifferenceImage di = log_ratio_di(scene);
  const SampleSet samples = training_samples(scene, di, cfg);
  const ModelArtifact init = init_model(cfg.network, cfg.train.seed);
  const TrainResult zero = train(samples, init, cfg.train);
  CHECK(zero.model == init);
  CHECK(zero.trace.empty());

  double loss = 0.0;
  for (const auto& s : samples.samples) loss += sample_gradient(init, s, cfg.train.margin).loss;
  loss /= static_cast<double>(samples.size());
  CHECK(loss > 0.0);
  CHECK(loss < 2.0 * (0.81 + 0.5 * 0.81));
}

TEST_CASE("training is independent of the worker count") {
  SynthParams p;
  p.size = 40;
  const ScenePair scene = synth_scene(p);
  RunConfig cfg;
  cfg.network.variant = Variant::kCapsNet;
  cfg.network.patch = 5;
  cfg.samples = 24;
  cfg.train.epochs = 2;
  cfg.train.batch = 8;
  const DifferenceImage di = log_ratio_di(scene);
  const SampleSet samples = training_samples(scene, di, cfg);
  const ModelArtifact init = init_model(cfg.network, cfg.train.seed);
  const TrainResult one = train(samples, init, cfg.train);
  cfg.train.threads = 3;
  const TrainResult three = train(samples, init, cfg.train);
  CHECK(one.model == three.model);
  REQUIRE(one.trace.size() == 2);
  CHECK(one.trace[1].loss == three.trace[1].loss);
}

TEST_CASE("classification is pure and matches single-patch inference") {
  SynthParams p;
  p.size = 32;
  const ScenePair scene = synth_scene(p);
  NetworkConfig net;
  net.patch = 7;
  ModelArtifact model = init_model(net, 5);
  const DifferenceImage di = log_ratio_di(scene);
  const Tensor input = network_input(net, scene, di, 255.0);
  const ChangeMap a = classify_image(model, input, 1);
  const ChangeMap b = classify_image(model, input, 3);
  CHECK(a == b);
  CHECK(a.height == 32);
  CHECK(a.width == 32);
  for (std::size_t r : {0u, 13u, 31u})
    for (std::size_t c : {0u, 7u, 31u}) {
      const Tensor v = predict_vectors(model.network, model.params, extract_patch(input, r, c, 7));
      CHECK(a.at(r, c) == caps::predicted_class(v));
    }
}

TEST_CASE("a constant input yields a constant map") {
  NetworkConfig net;
  net.variant = Variant::kNoAfc;
  const ModelArtifact model = init_model(net, 11);
  const ChangeMap m = classify_image(model, Tensor({12, 9, 1}, 0.0), 2);
  CHECK(m.height == 12);
  CHECK(m.width == 9);
  const Tensor v = predict_vectors(net, model.params, Tensor({9, 9, 1}, 0.0));
  for (auto l : m.labels) CHECK(l == caps::predicted_class(v));
}

TEST_CASE("pair input mode stacks both dates") {
  const ScenePair s = small_pair(Tensor({2, 2}, std::vector<double>{0, 51, 102, 255}), Tensor({2, 2}, 255.0));
  NetworkConfig net;
  net.input = InputMode::kPair;
  const Tensor in = network_input(net, s, log_ratio_di(s), 255.0);
  REQUIRE(in.shape() == Shape{2, 2, 2});
  CHECK(in.at(0, 1, 0) == doctest::Approx(0.2));
  CHECK(in.at(0, 1, 1) == 1.0);
}
