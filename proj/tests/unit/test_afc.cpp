#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "mscaps/afc.hpp"
#include "mscaps/rng.hpp"

using namespace mscaps;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor forward_value(const Parameters& p, const afc::AfcConfig& cfg, const Tensor& patch) {
  Tape tape;
  Binding bound(tape, p, false);
  return afc::forward(tape.constant(patch), bound, cfg).value();
}

void zero(Parameters& p, const std::string& name) {
  for (auto& v : p.get(name).data()) v = 0.0;
}

// One branch evaluated with plain loops: conv, relu, GAP, 1-D channel conv,
// sigmoid, channel scaling, 1x1 matching.
std::vector<double> branch_oracle(const Parameters& p, const afc::AfcConfig& cfg, const Tensor& patch, std::size_t i) {
  const std::size_t r = patch.dim(0), ci = patch.dim(2), cb = cfg.branch_channels, cf = cfg.fuse_channels;
  const std::size_t d = i + 1;
  std::size_t oh = 0, ow = 0;
  auto f = oracle::conv2d(patch.values(), r, r, ci, p.get(afc::conv_kernel_name(i)).values(), 3, cb,
                          p.get(afc::conv_bias_name(i)).values(), d, static_cast<long>(d), oh, ow);
  for (auto& v : f) v = std::max(v, 0.0);
  std::vector<double> mean(cb, 0.0);
  for (std::size_t q = 0; q < r * r; ++q)
    for (std::size_t c = 0; c < cb; ++c) mean[c] += f[q * cb + c] / static_cast<double>(r * r);
  const auto& k = p.get(afc::attention_name(i, cfg)).values();
  const long half = static_cast<long>(k.size() / 2);
  std::vector<double> gate(cb, 0.0);
  for (long c = 0; c < static_cast<long>(cb); ++c) {
    double s = 0.0;
    for (long t = 0; t < static_cast<long>(k.size()); ++t) {
      const long src = c + t - half;
      if (src >= 0 && src < static_cast<long>(cb)) s += k[static_cast<std::size_t>(t)] * mean[static_cast<std::size_t>(src)];
    }
    gate[static_cast<std::size_t>(c)] = 1.0 / (1.0 + std::exp(-s));
  }
  const auto& mk = p.get(afc::match_kernel_name(i)).values();
  const auto& mb = p.get(afc::match_bias_name(i)).values();
  std::vector<double> out(r * r * cf, 0.0);
  for (std::size_t q = 0; q < r * r; ++q)
    for (std::size_t o = 0; o < cf; ++o) {
      double s = mb[o];
      for (std::size_t c = 0; c < cb; ++c) s += f[q * cb + c] * gate[c] * mk[c * cf + o];
      out[q * cf + o] = s;
    }
  return out;
}

}  // namespace

TEST_CASE("attention with a zero kernel halves every channel") {
  Rng rng(1);
  const Tensor f = random_tensor({5, 5, 4}, rng);
  Tape tape;
  const Tensor out = afc::channel_attention(tape.constant(f), tape.constant(Tensor({3}, 0.0))).value();
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == 0.5 * f[i]);
}

TEST_CASE("attention on a single constant channel is input times sigmoid(w*mean)") {
  Tape tape;
  const double w = 0.8, v = 1.7;
  const Tensor out = afc::channel_attention(tape.constant(Tensor({4, 4, 1}, v)), tape.constant(Tensor({1}, w))).value();
  const double ref = v / (1.0 + std::exp(-w * v));
  for (double x : out.data()) CHECK(x == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("attention never increases magnitudes") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = random_tensor({5, 5, 6}, rng);
    Tape tape;
    const Tensor out = afc::channel_attention(tape.constant(f), tape.constant(random_tensor({3}, rng))).value();
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(out[i]) <= std::abs(f[i]));
  }
}

TEST_CASE("zero matching kernels and biases give a zero output") {
  afc::AfcConfig cfg;
  Rng rng(3);
  Parameters p;
  afc::init_params(p, cfg, rng);
  for (std::size_t i = 0; i < afc::kBranches; ++i) {
    zero(p, afc::match_kernel_name(i));
    zero(p, afc::match_bias_name(i));
  }
  const Tensor out = forward_value(p, cfg, random_tensor({9, 9, 1}, rng));
  CHECK(out == Tensor({9, 9, cfg.fuse_channels}, 0.0));
}

TEST_CASE("fusion is additive over branches") {
  afc::AfcConfig cfg;
  Rng rng(4);
  Parameters p;
  afc::init_params(p, cfg, rng);
  for (auto& v : p.get(afc::match_bias_name(2)).data()) v = rng.uniform(-0.2, 0.2);
  Parameters only_third = p;
  for (std::size_t i = 0; i < 2; ++i) {
    zero(only_third, afc::conv_kernel_name(i));
    zero(only_third, afc::conv_bias_name(i));
  }
  const Tensor patch = random_tensor({9, 9, 1}, rng);
  const Tensor out = forward_value(only_third, cfg, patch);
  // Zeroed branches still contribute their matching biases (zero at init).
  Tape tape;
  Binding bound(tape, only_third, false);
  const Tensor third = afc::branch(tape.constant(patch), bound, cfg, 2).value();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(third[i]).epsilon(1e-13));
}

TEST_CASE("AFC forward equals the sum of independently computed branches") {
  for (bool shared : {false, true}) {
    afc::AfcConfig cfg;
    cfg.shared_attention = shared;
    Rng rng(5);
    Parameters p;
    afc::init_params(p, cfg, rng);
    for (std::size_t i = 0; i < afc::kBranches; ++i) {
      for (auto& v : p.get(afc::conv_bias_name(i)).data()) v = rng.uniform(-0.1, 0.1);
      for (auto& v : p.get(afc::match_bias_name(i)).data()) v = rng.uniform(-0.1, 0.1);
    }
    const Tensor patch = random_tensor({9, 9, 1}, rng);
    const Tensor out = forward_value(p, cfg, patch);
    std::vector<double> ref(out.size(), 0.0);
    for (std::size_t i = 0; i < afc::kBranches; ++i) {
      const auto b = branch_oracle(p, cfg, patch, i);
      for (std::size_t q = 0; q < ref.size(); ++q) ref[q] += b[q];
    }
    for (std::size_t q = 0; q < ref.size(); ++q) CHECK(std::abs(out[q] - ref[q]) < 1e-12);
  }
}

TEST_CASE("AFC output keeps the patch size and rejects tiny patches") {
  afc::AfcConfig cfg;
  cfg.in_channels = 2;
  Rng rng(6);
  Parameters p;
  afc::init_params(p, cfg, rng);
  CHECK(forward_value(p, cfg, random_tensor({11, 11, 2}, rng)).shape() == Shape{11, 11, 32});
  CHECK_THROWS(forward_value(p, cfg, random_tensor({3, 3, 2}, rng)));
}

TEST_CASE("shared attention stores one kernel") {
  afc::AfcConfig cfg;
  Rng rng(7);
  Parameters a, b;
  afc::init_params(a, cfg, rng);
  cfg.shared_attention = true;
  afc::init_params(b, cfg, rng);
  CHECK(a.contains("afc.attention1"));
  CHECK(a.contains("afc.attention3"));
  CHECK(b.contains("afc.attention"));
  CHECK(!b.contains("afc.attention2"));
  CHECK(a.size() == b.size() + 2);
}
