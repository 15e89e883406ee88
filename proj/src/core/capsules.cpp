#include "mscaps/capsules.hpp"

#include <cmath>

#include "mscaps/error.hpp"

namespace mscaps::caps {

Var route(Var u, std::size_t iterations, RouteGrad mode, RoutingState* state) {
  require(iterations >= 1, ErrorCode::kInvalidArgument, "routing needs at least one iteration");
  const Shape s = u.shape();
  require(s.size() == 4, ErrorCode::kShapeMismatch, "route: predictions must be [P,in,out,d], got " + shape_str(s));
  require(u.value().all_finite(), ErrorCode::kNonFinite, "route: non-finite predictions");
  Tape& tape = *u.tape;
  Var u_iter = mode == RouteGrad::kFinalOnly ? ops::detach(u) : u;
  Var b = tape.constant(Tensor(Shape{s[0], s[1], s[2]}));
  Var v{};
  for (std::size_t it = 0; it < iterations; ++it) {
    const bool last = it + 1 == iterations;
    Var c = ops::softmax_last(b);
    v = ops::squash(ops::weighted_sum(c, last ? u : u_iter));
    if (last) {
      if (state) {
        state->b = b.value();
        state->c = c.value();
        state->iterations = iterations;
      }
    } else {
      b = ops::add(b, ops::agreement(u_iter, v));
    }
  }
  return v;
}

RouteResult route(const Tensor& u, std::size_t iterations) {
  require(u.rank() == 3, ErrorCode::kShapeMismatch, "route: predictions must be [in,out,d], got " + shape_str(u.shape()));
  Tape tape;
  Var uv = tape.constant(u.reshaped(Shape{1, u.dim(0), u.dim(1), u.dim(2)}));
  RouteResult r;
  Var v = route(uv, iterations, RouteGrad::kFull, &r.state);
  r.v = v.value().reshaped(Shape{u.dim(1), u.dim(2)});
  r.state.b = r.state.b.reshaped(Shape{u.dim(0), u.dim(1)});
  r.state.c = r.state.c.reshaped(Shape{u.dim(0), u.dim(1)});
  return r;
}

Tensor squash(const Tensor& s) {
  Tape tape;
  return ops::squash(tape.constant(s)).value();
}

Var primary_capsules(Var features, Var kernel, Var bias, std::size_t capsule_dim) {
  const Shape ks = kernel.shape();
  require(ks.size() == 4, ErrorCode::kShapeMismatch, "primary_capsules: kernel must be [k,k,c_in,c]");
  const std::size_t c = ks[3];
  require(capsule_dim > 0 && c % capsule_dim == 0, ErrorCode::kShapeMismatch,
          "primary_capsules: " + std::to_string(c) + " channels not divisible by capsule dim " +
              std::to_string(capsule_dim));
  Var conv = ops::conv2d(features, kernel, bias, 1, Padding::kValid);
  const Shape os = conv.shape();
  Var grid = ops::reshape(conv, Shape{os[0], os[1], c / capsule_dim, capsule_dim});
  return ops::squash(grid);
}

Var conv_capsule(Var caps, Var weights, std::size_t k, std::size_t iterations, RouteGrad mode,
                 RoutingState* state) {
  const Shape s = caps.shape();
  require(s.size() == 4, ErrorCode::kShapeMismatch, "conv_capsule: capsules must be [H,W,n,d]");
  require(k >= 1 && k <= s[0] && k <= s[1], ErrorCode::kShapeMismatch,
          "conv_capsule: window " + std::to_string(k) + " exceeds capsule grid " + shape_str(s));
  Var predictions = ops::window_gather(ops::caps_transform(caps, weights), k);
  Var v = route(predictions, iterations, mode, state);
  const Shape ws = weights.shape();
  return ops::reshape(v, Shape{s[0] - k + 1, s[1] - k + 1, ws[1], ws[2]});
}

Var class_capsules(Var caps, Var weights, std::size_t iterations, RouteGrad mode, RoutingState* state) {
  const Shape s = caps.shape();
  require(s.size() == 4, ErrorCode::kShapeMismatch, "class_capsules: capsules must be [H,W,n,d]");
  const Shape ws = weights.shape();
  Var t = ops::caps_transform(caps, weights);
  Var predictions = ops::reshape(t, Shape{1, s[0] * s[1] * s[2], ws[1], ws[2]});
  Var v = route(predictions, iterations, mode, state);
  return ops::reshape(v, Shape{ws[1], ws[2]});
}

Var fuse_class_vectors(Var a, Var b) { return ops::add(a, b); }

Tensor class_lengths(const Tensor& class_vectors) {
  require(class_vectors.rank() == 2, ErrorCode::kShapeMismatch, "class_lengths: expected [classes, dim]");
  const std::size_t rows = class_vectors.dim(0), d = class_vectors.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += class_vectors[r * d + i] * class_vectors[r * d + i];
    out[r] = std::sqrt(sq);
  }
  return out;
}

int predicted_class(const Tensor& class_vectors) {
  const Tensor len = class_lengths(class_vectors);
  int best = 0;
  for (std::size_t r = 1; r < len.size(); ++r)
    if (len[r] > len[static_cast<std::size_t>(best)]) best = static_cast<int>(r);
  return best;
}

}  // namespace mscaps::caps
