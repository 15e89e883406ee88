#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mscaps/tensor.hpp"

namespace mscaps {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in forward order and replayed in
/// reverse by backward(). A node only stores a backward rule when at least
/// one of its parents needs a gradient, so inference on constant inputs
/// records no closures.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is collected by backward().
  Var parameter(Tensor value);

  /// Records an op result. The output must be finite.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward,
             const char* op_name);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(const std::vector<std::size_t>& ids) const;

  /// Gradient accumulator for a node; zero-initialized on first access.
  Tensor& grad_mut(std::size_t id);
  /// Gradient of a node after backward(); zeros if the node was unreachable.
  Tensor grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. The loss must hold a single
  /// element. A second call without reset() is an error.
  void backward(Var loss);
  void reset_gradients();
  /// Drops every node recorded after the first `size` nodes and clears all
  /// gradients, so a tape holding bound parameters can be reused per sample.
  void truncate(std::size_t size);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

enum class Padding { kValid, kSame };

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, double k);
Var sigmoid(Var a);
Var relu(Var a);
Var sum(Var a);
Var reshape(Var a, Shape shape);
/// Cuts the gradient path; value is copied unchanged.
Var detach(Var a);

/// input [h,w,c_in], kernel [k,k,c_in,c_out], bias [c_out]. Zero padding for kSame.
Var conv2d(Var input, Var kernel, Var bias, std::size_t dilation, Padding padding);
/// input [h,w,c_in], kernel [c_in,c_out], bias [c_out].
Var conv1x1(Var input, Var kernel, Var bias);
/// [h,w,c] -> [1,1,c]
Var global_avg_pool(Var input);
/// [1,1,c] convolved along channels with an odd-length kernel, zero padded.
Var conv1d_channels(Var input, Var kernel);
/// F [h,w,c] scaled per channel by M [1,1,c].
Var channel_broadcast_mul(Var features, Var weights);

/// Squash along the last axis: v = |s|^2/(1+|s|^2) * s/(|s|+kSquashEps).
Var squash(Var s);
/// Softmax along the last axis.
Var softmax_last(Var logits);
/// c [P,I,J], u [P,I,J,D] -> s [P,J,D] with s[p,j] = sum_i c[p,i,j] u[p,i,j].
Var weighted_sum(Var c, Var u);
/// u [P,I,J,D], v [P,J,D] -> [P,I,J] dot products u[p,i,j].v[p,j].
Var agreement(Var u, Var v);
/// v [H,W,n,d], W [n,J,Do,d] -> [H,W,n,J,Do], prediction W[t,j] v[y,x,t].
Var caps_transform(Var v, Var weights);
/// t [H,W,n,J,Do] -> [P,k*k*n,J,Do], P = (H-k+1)(W-k+1), valid windows
/// ordered row-major; inputs inside a window ordered (ky, kx, type).
Var window_gather(Var t, std::size_t k);
/// Euclidean norm of each row of a rank-2 tensor -> [rows].
Var row_norms(Var v);

}  // namespace ops

inline constexpr double kSquashEps = 1e-9;

}  // namespace mscaps
