#pragma once

#include <cstddef>

#include "mscaps/autodiff.hpp"

namespace mscaps::caps {

/// How gradients flow through dynamic routing. kFinalOnly detaches the
/// predictions everywhere except the last weighted sum; kFull differentiates
/// through every iteration.
enum class RouteGrad { kFinalOnly, kFull };

/// Logits and couplings that produced the returned output, shaped like the
/// routing batch: [P, num_in, num_out].
struct RoutingState {
  Tensor b;
  Tensor c;
  std::size_t iterations = 0;
};

/// Batched dynamic routing. u [P, num_in, num_out, d] -> v [P, num_out, d].
/// b starts at zero; each iteration takes c = softmax(b) over outputs,
/// v = squash(sum_i c u), and, except after the last one, b += u.v.
Var route(Var u, std::size_t iterations, RouteGrad mode, RoutingState* state = nullptr);

struct RouteResult {
  Tensor v;           // [num_out, d]
  RoutingState state; // b, c as [num_in, num_out]
};

/// Unbatched routing on plain values, u [num_in, num_out, d].
RouteResult route(const Tensor& u, std::size_t iterations);

Tensor squash(const Tensor& s);

/// Valid conv, reshape [w1,w1,c] -> [w1,w1,c/d,d], squash each d-vector.
Var primary_capsules(Var features, Var kernel, Var bias, std::size_t capsule_dim);

/// Locally connected capsules with one transform per (input type, output
/// type) shared over the grid and the window. caps [H,W,n,d], weights
/// [n,J,Do,d] -> [H-k+1, W-k+1, J, Do].
Var conv_capsule(Var caps, Var weights, std::size_t k, std::size_t iterations, RouteGrad mode,
                 RoutingState* state = nullptr);

/// Fully connected class capsules: every grid capsule is an input.
/// caps [H,W,n,d], weights [n,J,Do,d] -> [J, Do].
Var class_capsules(Var caps, Var weights, std::size_t iterations, RouteGrad mode,
                   RoutingState* state = nullptr);

/// Multiscale fusion by summation.
Var fuse_class_vectors(Var a, Var b);

/// Norm of each class row.
Tensor class_lengths(const Tensor& class_vectors);
/// argmax of class_lengths; ties go to class 0.
int predicted_class(const Tensor& class_vectors);

}  // namespace mscaps::caps
