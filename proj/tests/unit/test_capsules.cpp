#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/oracles.hpp"
#include "mscaps/capsules.hpp"
#include "mscaps/rng.hpp"

using namespace mscaps;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

// Dynamic routing written out with explicit loops for a single position.
struct RouteTrace {
  std::vector<std::vector<double>> c;  // per iteration, [I*J]
  std::vector<std::vector<double>> v;  // per iteration, [J*D]
};

RouteTrace route_oracle(const Tensor& u, std::size_t iterations) {
  const std::size_t I = u.dim(0), J = u.dim(1), D = u.dim(2);
  std::vector<double> b(I * J, 0.0);
  RouteTrace trace;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> c(I * J);
    for (std::size_t i = 0; i < I; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < J; ++j) z += std::exp(b[i * J + j]);
      for (std::size_t j = 0; j < J; ++j) c[i * J + j] = std::exp(b[i * J + j]) / z;
    }
    std::vector<double> v(J * D);
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<double> s(D, 0.0);
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t d = 0; d < D; ++d) s[d] += c[i * J + j] * u[(i * J + j) * D + d];
      const auto sq = oracle::squash(s);
      std::copy(sq.begin(), sq.end(), v.begin() + static_cast<long>(j * D));
    }
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += u[(i * J + j) * D + d] * v[j * D + d];
        b[i * J + j] += dot;
      }
    trace.c.push_back(c);
    trace.v.push_back(v);
  }
  return trace;
}

// u[i = (y*W + x)*n + t, j] = W[t, j] v[y, x, t]
Tensor flattened_predictions(const Tensor& caps, const Tensor& w) {
  const std::size_t H = caps.dim(0), Wd = caps.dim(1), n = caps.dim(2), d = caps.dim(3);
  const std::size_t J = w.dim(1), Do = w.dim(2);
  Tensor u(Shape{H * Wd * n, J, Do});
  for (std::size_t p = 0; p < H * Wd; ++p)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t o = 0; o < Do; ++o) {
          double s = 0.0;
          for (std::size_t q = 0; q < d; ++q) s += w[((t * J + j) * Do + o) * d + q] * caps[(p * n + t) * d + q];
          u[((p * n + t) * J + j) * Do + o] = s;
        }
  return u;
}

Tensor value_of(Var v) { return v.value(); }

}  // namespace

TEST_CASE("squash fixtures") {
  CHECK(caps::squash(Tensor({3}, 0.0)) == Tensor({3}, 0.0));
  const Tensor unit = caps::squash(Tensor({2}, std::vector<double>{0.6, 0.8}));
  CHECK(std::hypot(unit[0], unit[1]) == doctest::Approx(0.5).epsilon(1e-9));
  const Tensor v = caps::squash(Tensor({2}, std::vector<double>{3.0, 4.0}));
  CHECK(v[0] == doctest::Approx(15.0 / 26.0).epsilon(1e-9));
  CHECK(v[1] == doctest::Approx(20.0 / 26.0).epsilon(1e-9));
}

TEST_CASE("squash bounds, direction and monotonicity") {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t d = 1 + rng.below(16);
    Tensor s = random_tensor({d}, rng, std::pow(10.0, rng.uniform(-3.0, 2.0)));
    const Tensor v = caps::squash(s);
    const double ns = oracle::norm(s.values()), nv = oracle::norm(v.values());
    CHECK(nv < 1.0);
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += s[i] * v[i];
    CHECK(dot / (ns * nv) == doctest::Approx(1.0).epsilon(1e-12));
    Tensor s2 = s;
    for (auto& x : s2.data()) x *= 1.5;
    CHECK(oracle::norm(caps::squash(s2).values()) > nv);
  }
}

TEST_CASE("primary capsules") {
  Rng rng(2);
  Tape tape;
  Var patch = tape.constant(random_tensor({9, 9, 32}, rng));
  Var k3 = tape.constant(random_tensor({3, 3, 32, 32}, rng, 0.2));
  Var k5 = tape.constant(random_tensor({5, 5, 32, 32}, rng, 0.2));
  Var bias = tape.constant(random_tensor({32}, rng, 0.1));
  const Tensor p3 = caps::primary_capsules(patch, k3, bias, 8).value();
  const Tensor p5 = caps::primary_capsules(patch, k5, bias, 8).value();
  CHECK(p3.shape() == Shape{7, 7, 4, 8});
  CHECK(p5.shape() == Shape{5, 5, 4, 8});
  for (std::size_t q = 0; q < p3.size() / 8; ++q)
    CHECK(oracle::norm({p3.data().begin() + static_cast<long>(q * 8), p3.data().begin() + static_cast<long>(q * 8 + 8)}) < 1.0);
  Var zk = tape.constant(Tensor({3, 3, 32, 32}, 0.0));
  Var zb = tape.constant(Tensor({32}, 0.0));
  CHECK(caps::primary_capsules(patch, zk, zb, 8).value() == Tensor({7, 7, 4, 8}, 0.0));
  CHECK_THROWS(caps::primary_capsules(patch, k3, bias, 5));
}

TEST_CASE("single-input routing is squash(u) for any iteration count") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor u = random_tensor({1, 1, 8}, rng, 2.0);
    const Tensor sq = caps::squash(u.reshaped({8}));
    for (std::size_t it : {1u, 2u, 3u, 7u}) {
      const auto r = caps::route(u, it);
      CHECK(r.state.c[0] == 1.0);
      for (std::size_t d = 0; d < 8; ++d) CHECK(r.v[d] == sq[d]);
    }
  }
}

TEST_CASE("identical predictions keep couplings uniform") {
  Rng rng(4);
  Tensor u({2, 2, 4});
  const Tensor row = random_tensor({2, 4}, rng);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t q = 0; q < 8; ++q) u[i * 8 + q] = row[q];
  for (std::size_t it = 1; it <= 4; ++it) {
    const auto r = caps::route(u, it);
    CHECK(r.state.c[0] == r.state.c[2]);
    CHECK(r.state.c[1] == r.state.c[3]);
  }
  Tensor same({2, 2, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t d = 0; d < 4; ++d) same[(i * 2 + j) * 4 + d] = row[d];
  for (std::size_t it = 1; it <= 4; ++it) {
    const auto r = caps::route(same, it);
    for (double c : r.state.c.data()) CHECK(c == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("two inputs, one output: routing matches the straight-line recurrence") {
  const Tensor u({2, 1, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  // c is 1 for the single output at every iteration, so each iteration
  // produces squash(u1 + u2) = squash((1, 1)).
  const double n2 = 2.0, n = std::sqrt(2.0);
  const double expected = n2 / (1.0 + n2) / (n + 1e-9);
  for (std::size_t it = 1; it <= 3; ++it) {
    const auto r = caps::route(u, it);
    CHECK(r.state.c[0] == 1.0);
    CHECK(r.state.c[1] == 1.0);
    CHECK(std::abs(r.v[0] - expected) < 1e-12);
    CHECK(std::abs(r.v[1] - expected) < 1e-12);
  }
}

TEST_CASE("routing matches the loop oracle on random predictions") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor u = random_tensor({5, 3, 4}, rng, 1.5);
    const auto trace = route_oracle(u, 3);
    const auto r = caps::route(u, 3);
    for (std::size_t q = 0; q < 15; ++q) CHECK(std::abs(r.state.c[q] - trace.c.back()[q]) < 1e-12);
    for (std::size_t q = 0; q < 12; ++q) CHECK(std::abs(r.v[q] - trace.v.back()[q]) < 1e-12);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(std::abs(r.state.c[i * 3] + r.state.c[i * 3 + 1] + r.state.c[i * 3 + 2] - 1.0) < 1e-12);
  }
}

TEST_CASE("routing is equivariant to permuting inputs") {
  Rng rng(6);
  const Tensor u = random_tensor({4, 2, 3}, rng);
  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor p(u.shape());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t q = 0; q < 6; ++q) p[i * 6 + q] = u[perm[i] * 6 + q];
  const auto a = caps::route(u, 3), b = caps::route(p, 3);
  for (std::size_t q = 0; q < a.v.size(); ++q) CHECK(a.v[q] == doctest::Approx(b.v[q]).epsilon(1e-13));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(b.state.c[i * 2 + j] == doctest::Approx(a.state.c[perm[i] * 2 + j]).epsilon(1e-13));
}

TEST_CASE("conv capsules") {
  Rng rng(7);
  Tape tape;
  const Tensor grid = caps::squash(random_tensor({5, 5, 4, 8}, rng));
  Var g = tape.constant(grid);
  Var w = tape.constant(random_tensor({4, 4, 8, 8}, rng, 0.3));
  caps::RoutingState st;
  const Tensor out = caps::conv_capsule(g, w, 3, 3, caps::RouteGrad::kFinalOnly, &st).value();
  CHECK(out.shape() == Shape{3, 3, 4, 8});
  CHECK(st.c.shape() == Shape{9, 36, 4});
  for (std::size_t r = 0; r < 9 * 36; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += st.c[r * 4 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Var zw = tape.constant(Tensor({4, 4, 8, 8}, 0.0));
  CHECK(caps::conv_capsule(g, zw, 3, 3, caps::RouteGrad::kFinalOnly).value() == Tensor({3, 3, 4, 8}, 0.0));
}

TEST_CASE("single-position conv capsule equals routing on flattened inputs") {
  Rng rng(8);
  const Tensor grid = caps::squash(random_tensor({3, 3, 4, 8}, rng));
  const Tensor w = random_tensor({4, 4, 8, 8}, rng, 0.3);
  Tape tape;
  const Tensor out =
      caps::conv_capsule(tape.constant(grid), tape.constant(w), 3, 3, caps::RouteGrad::kFinalOnly).value();
  const auto ref = caps::route(flattened_predictions(grid, w), 3);
  REQUIRE(out.size() == ref.v.size());
  for (std::size_t q = 0; q < out.size(); ++q) CHECK(std::abs(out[q] - ref.v[q]) < 1e-12);
}

TEST_CASE("class capsules") {
  Rng rng(9);
  const Tensor grid = caps::squash(random_tensor({3, 3, 4, 8}, rng));
  const Tensor w = random_tensor({4, 2, 16, 8}, rng, 0.3);
  Tape tape;
  const Tensor out = caps::class_capsules(tape.constant(grid), tape.constant(w), 3, caps::RouteGrad::kFull).value();
  CHECK(out.shape() == Shape{2, 16});
  const auto ref = caps::route(flattened_predictions(grid, w), 3);
  for (std::size_t q = 0; q < out.size(); ++q) CHECK(std::abs(out[q] - ref.v[q]) < 1e-12);
  const Tensor zero =
      caps::class_capsules(tape.constant(grid), tape.constant(Tensor({4, 2, 16, 8}, 0.0)), 3, caps::RouteGrad::kFull)
          .value();
  CHECK(zero == Tensor({2, 16}, 0.0));
  const Tensor single = caps::class_capsules(tape.constant(caps::squash(random_tensor({1, 1, 4, 8}, rng))),
                                             tape.constant(w), 3, caps::RouteGrad::kFinalOnly)
                            .value();
  CHECK(single.shape() == Shape{2, 16});
}

TEST_CASE("fusion and class scores") {
  Rng rng(10);
  Tape tape;
  const Tensor a = caps::squash(random_tensor({2, 16}, rng));
  const Tensor b = caps::squash(random_tensor({2, 16}, rng));
  const Tensor ab = caps::fuse_class_vectors(tape.constant(a), tape.constant(b)).value();
  CHECK(ab == caps::fuse_class_vectors(tape.constant(b), tape.constant(a)).value());
  CHECK(caps::fuse_class_vectors(tape.constant(a), tape.constant(Tensor({2, 16}, 0.0))).value() == a);
  const Tensor la = caps::class_lengths(a), lb = caps::class_lengths(b), lab = caps::class_lengths(ab);
  for (std::size_t r = 0; r < 2; ++r) CHECK(lab[r] <= la[r] + lb[r] + 1e-15);

  Tensor rows({2, 16}, 0.0);
  rows[16] = 1.0;
  const Tensor len = caps::class_lengths(rows);
  CHECK(len[0] == 0.0);
  CHECK(len[1] == 1.0);
  CHECK(caps::predicted_class(rows) == 1);
  Tensor pyth({1, 16}, 0.0);
  pyth[0] = 3.0;
  pyth[1] = 4.0;
  CHECK(caps::class_lengths(pyth)[0] == 5.0);
  for (double s : {0.01, 3.0, 250.0}) {
    Tensor scaled = ab;
    for (auto& x : scaled.data()) x *= s;
    CHECK(caps::predicted_class(scaled) == caps::predicted_class(ab));
  }
  CHECK(caps::predicted_class(Tensor({2, 16}, 0.0)) == 0);
}
