#include "mscaps/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mscaps/error.hpp"

namespace mscaps {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  require(value.all_finite(), ErrorCode::kNonFinite, "constant contains non-finite values");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  require(value.all_finite(), ErrorCode::kNonFinite, "parameter contains non-finite values");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

bool Tape::requires_grad(const std::vector<std::size_t>& ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](std::size_t i) { return nodes_.at(i).requires_grad; });
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward,
                 const char* op_name) {
  require(value.all_finite(), ErrorCode::kNonFinite,
          std::string(op_name) + " produced non-finite values");
  Node n;
  n.value = std::move(value);
  if (requires_grad(parents)) {
    n.requires_grad = true;
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, ErrorCode::kInvalidArgument, "loss belongs to a different tape");
  require(!backward_done_, ErrorCode::kState,
          "backward() already ran on this tape; call reset_gradients() first");
  require(value(loss.id).size() == 1, ErrorCode::kShapeMismatch,
          "backward() needs a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    for (auto p : n.parents)
      require(p < id, ErrorCode::kState, "graph cycle detected at node " + std::to_string(id));
    n.backward(*this, id);
  }
}

void Tape::reset_gradients() {
  for (auto& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

void Tape::truncate(std::size_t size) {
  require(size <= nodes_.size(), ErrorCode::kInvalidArgument, "truncate beyond tape end");
  nodes_.resize(size);
  reset_gradients();
}

namespace ops {

namespace {

void require_same_tape(Var a, Var b) {
  require(a.tape == b.tape && a.tape != nullptr, ErrorCode::kInvalidArgument,
          "operands recorded on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void accumulate(Tape& t, std::size_t id, const Tensor& g, double scale = 1.0) {
  if (!t.requires_grad(id)) return;
  auto dst = t.grad_mut(id).data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  }, "add");
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g, -1.0);
  }, "sub");
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& gx = t.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      auto& gy = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
    }
  }, "mul");
}

Var scalar_mul(Var a, double k) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x[i];
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, k](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_mut(self), k);
  }, "scalar_mul");
}

Var sigmoid(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& y = t.value(self);
    auto& gx = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  }, "sigmoid");
}

Var relu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(ia);
    auto& gx = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) gx[i] += g[i];
  }, "relu");
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const double g = t.grad_mut(self)[0];
    for (auto& v : t.grad_mut(ia).data()) v += g;
  }, "sum");
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& gx = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var conv2d(Var input, Var kernel, Var bias, std::size_t dilation, Padding padding) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  require(x.rank() == 3, ErrorCode::kShapeMismatch, "conv2d: input must be [h,w,c], got " + shape_str(x.shape()));
  require(w.rank() == 4 && w.dim(0) == w.dim(1), ErrorCode::kShapeMismatch,
          "conv2d: kernel must be [k,k,c_in,c_out], got " + shape_str(w.shape()));
  const std::size_t k = w.dim(0);
  require(k % 2 == 1, ErrorCode::kInvalidArgument, "conv2d: kernel size must be odd");
  require(dilation >= 1, ErrorCode::kInvalidArgument, "conv2d: dilation must be >= 1");
  const std::size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(3);
  require(w.dim(2) == ci, ErrorCode::kShapeMismatch,
          "conv2d: input has " + std::to_string(ci) + " channels, kernel expects " + std::to_string(w.dim(2)));
  require(b.rank() == 1 && b.dim(0) == co, ErrorCode::kShapeMismatch, "conv2d: bias must be [c_out]");
  const std::size_t extent = (k - 1) * dilation + 1;
  std::size_t oh, ow;
  long pad;
  if (padding == Padding::kSame) {
    oh = h;
    ow = wd;
    pad = static_cast<long>((extent - 1) / 2);
  } else {
    require(extent <= h && extent <= wd, ErrorCode::kShapeMismatch,
            "conv2d: effective kernel extent " + std::to_string(extent) + " exceeds input " + shape_str(x.shape()));
    oh = h - extent + 1;
    ow = wd - extent + 1;
    pad = 0;
  }
  Tensor out(Shape{oh, ow, co});
  const long dil = static_cast<long>(dilation);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t xo = 0; xo < ow; ++xo) {
      double* o = &out[(y * ow + xo) * co];
      for (std::size_t c = 0; c < co; ++c) o[c] = b[c];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(y) + static_cast<long>(ky) * dil - pad;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(xo) + static_cast<long>(kx) * dil - pad;
          if (ix < 0 || ix >= static_cast<long>(wd)) continue;
          const double* in = &x[(static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * ci];
          const double* wk = &w[(ky * k + kx) * ci * co];
          for (std::size_t c = 0; c < ci; ++c) {
            const double v = in[c];
            const double* wr = wk + c * co;
            for (std::size_t oc = 0; oc < co; ++oc) o[oc] += v * wr[oc];
          }
        }
      }
    }
  }
  auto bw = [ix_ = input.id, iw = kernel.id, ib = bias.id, dil, pad, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(ix_);
    const Tensor& w = t.value(iw);
    const std::size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(3);
    const std::size_t oh = g.dim(0), ow = g.dim(1);
    const bool need_x = t.requires_grad(ix_), need_w = t.requires_grad(iw);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t p = 0; p < oh * ow; ++p)
        for (std::size_t c = 0; c < co; ++c) gb[c] += g[p * co + c];
    }
    if (!need_x && !need_w) return;
    Tensor* gx = need_x ? &t.grad_mut(ix_) : nullptr;
    Tensor* gw = need_w ? &t.grad_mut(iw) : nullptr;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const double* go = &g[(y * ow + xo) * co];
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long iy = static_cast<long>(y) + static_cast<long>(ky) * dil - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long ixx = static_cast<long>(xo) + static_cast<long>(kx) * dil - pad;
            if (ixx < 0 || ixx >= static_cast<long>(wd)) continue;
            const std::size_t in_off = (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ixx)) * ci;
            const std::size_t w_off = (ky * k + kx) * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const double* wr = &w[w_off + c * co];
              if (gx) {
                double acc = 0.0;
                for (std::size_t oc = 0; oc < co; ++oc) acc += go[oc] * wr[oc];
                (*gx)[in_off + c] += acc;
              }
              if (gw) {
                const double v = x[in_off + c];
                double* gwr = &(*gw)[w_off + c * co];
                for (std::size_t oc = 0; oc < co; ++oc) gwr[oc] += v * go[oc];
              }
            }
          }
        }
      }
    }
  };
  return input.tape->record(std::move(out), {input.id, kernel.id, bias.id}, bw, "conv2d");
}

Var conv1x1(Var input, Var kernel, Var bias) {
  const Tensor& w = kernel.value();
  require(w.rank() == 2, ErrorCode::kShapeMismatch, "conv1x1: kernel must be [c_in,c_out], got " + shape_str(w.shape()));
  const Tensor& x = input.value();
  require(x.rank() == 3 && x.dim(2) == w.dim(0), ErrorCode::kShapeMismatch,
          "conv1x1: channel mismatch between input " + shape_str(x.shape()) + " and kernel " + shape_str(w.shape()));
  Var k4 = reshape(kernel, Shape{1, 1, w.dim(0), w.dim(1)});
  return conv2d(input, k4, bias, 1, Padding::kValid);
}

Var global_avg_pool(Var input) {
  const Tensor& x = input.value();
  require(x.rank() == 3, ErrorCode::kShapeMismatch, "global_avg_pool: input must be [h,w,c]");
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  Tensor out(Shape{1, 1, c});
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += x[p * c + ch];
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] /= static_cast<double>(hw);
  return input.tape->record(std::move(out), {input.id}, [ix = input.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& gx = t.grad_mut(ix);
    const std::size_t c = g.size();
    const std::size_t hw = gx.size() / c;
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += g[ch] * inv;
  }, "global_avg_pool");
}

Var conv1d_channels(Var input, Var kernel) {
  require_same_tape(input, kernel);
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require(x.rank() == 3 && x.dim(0) == 1 && x.dim(1) == 1, ErrorCode::kShapeMismatch,
          "conv1d_channels: input must be [1,1,c], got " + shape_str(x.shape()));
  require(w.rank() == 1, ErrorCode::kShapeMismatch, "conv1d_channels: kernel must be 1-D");
  require(w.dim(0) % 2 == 1, ErrorCode::kInvalidArgument, "conv1d_channels: kernel length must be odd");
  const long c = static_cast<long>(x.dim(2));
  const long kk = static_cast<long>(w.dim(0));
  const long half = kk / 2;
  Tensor out(x.shape());
  for (long i = 0; i < c; ++i) {
    double acc = 0.0;
    for (long j = 0; j < kk; ++j) {
      const long src = i + j - half;
      if (src >= 0 && src < c) acc += w[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(src)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return input.tape->record(std::move(out), {input.id, kernel.id}, [ix = input.id, iw = kernel.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(ix);
    const Tensor& w = t.value(iw);
    const long c = static_cast<long>(x.size());
    const long kk = static_cast<long>(w.size());
    const long half = kk / 2;
    Tensor* gx = t.requires_grad(ix) ? &t.grad_mut(ix) : nullptr;
    Tensor* gw = t.requires_grad(iw) ? &t.grad_mut(iw) : nullptr;
    for (long i = 0; i < c; ++i) {
      for (long j = 0; j < kk; ++j) {
        const long src = i + j - half;
        if (src < 0 || src >= c) continue;
        const auto si = static_cast<std::size_t>(src), ji = static_cast<std::size_t>(j);
        if (gx) (*gx)[si] += g[static_cast<std::size_t>(i)] * w[ji];
        if (gw) (*gw)[ji] += g[static_cast<std::size_t>(i)] * x[si];
      }
    }
  }, "conv1d_channels");
}

Var channel_broadcast_mul(Var features, Var weights) {
  require_same_tape(features, weights);
  const Tensor& f = features.value();
  const Tensor& m = weights.value();
  require(f.rank() == 3, ErrorCode::kShapeMismatch, "channel_broadcast_mul: features must be [h,w,c]");
  require(m.rank() == 3 && m.dim(0) == 1 && m.dim(1) == 1 && m.dim(2) == f.dim(2), ErrorCode::kShapeMismatch,
          "channel_broadcast_mul: weights " + shape_str(m.shape()) + " do not match features " + shape_str(f.shape()));
  const std::size_t c = f.dim(2), hw = f.dim(0) * f.dim(1);
  Tensor out(f.shape());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = f[p * c + ch] * m[ch];
  return features.tape->record(std::move(out), {features.id, weights.id}, [iff = features.id, im = weights.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& f = t.value(iff);
    const Tensor& m = t.value(im);
    const std::size_t c = m.size(), hw = f.size() / c;
    Tensor* gf = t.requires_grad(iff) ? &t.grad_mut(iff) : nullptr;
    Tensor* gm = t.requires_grad(im) ? &t.grad_mut(im) : nullptr;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = p * c + ch;
        if (gf) (*gf)[i] += g[i] * m[ch];
        if (gm) (*gm)[ch] += g[i] * f[i];
      }
  }, "channel_broadcast_mul");
}

Var squash(Var s) {
  const Tensor& x = s.value();
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &x[r * d];
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += in[i] * in[i];
    const double n = std::sqrt(sq);
    const double a = sq / ((1.0 + sq) * (n + kSquashEps));
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = a * in[i];
  }
  return s.tape->record(std::move(out), {s.id}, [is = s.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(is);
    auto& gx = t.grad_mut(is);
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = &x[r * d];
      const double* go = &g[r * d];
      double sq = 0.0, dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        sq += in[i] * in[i];
        dot += in[i] * go[i];
      }
      const double n = std::sqrt(sq);
      const double den = (1.0 + sq) * (n + kSquashEps);
      const double a = sq / den;
      // a'(n)/n, with a(n) = n^2 / ((1+n^2)(n+eps))
      double coef = 0.0;
      if (n > 0.0) {
        const double dden = 2.0 * n * (n + kSquashEps) + (1.0 + sq);
        const double da = (2.0 * n * den - sq * dden) / (den * den);
        coef = da / n;
      }
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += a * go[i] + coef * dot * in[i];
    }
  }, "squash");
}

Var softmax_last(Var logits) {
  const Tensor& x = logits.value();
  const std::size_t j = x.shape().back();
  const std::size_t rows = x.size() / j;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &x[r * j];
    const double mx = *std::max_element(in, in + j);
    double z = 0.0;
    for (std::size_t i = 0; i < j; ++i) z += (out[r * j + i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < j; ++i) out[r * j + i] /= z;
  }
  return logits.tape->record(std::move(out), {logits.id}, [il = logits.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& y = t.value(self);
    auto& gx = t.grad_mut(il);
    const std::size_t j = y.shape().back();
    const std::size_t rows = y.size() / j;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < j; ++i) dot += g[r * j + i] * y[r * j + i];
      for (std::size_t i = 0; i < j; ++i) gx[r * j + i] += y[r * j + i] * (g[r * j + i] - dot);
    }
  }, "softmax_last");
}

Var weighted_sum(Var c, Var u) {
  require_same_tape(c, u);
  const Tensor& cv = c.value();
  const Tensor& uv = u.value();
  require(uv.rank() == 4 && cv.rank() == 3 && cv.dim(0) == uv.dim(0) && cv.dim(1) == uv.dim(1) &&
              cv.dim(2) == uv.dim(2),
          ErrorCode::kShapeMismatch,
          "weighted_sum: c " + shape_str(cv.shape()) + " incompatible with u " + shape_str(uv.shape()));
  const std::size_t P = uv.dim(0), I = uv.dim(1), J = uv.dim(2), D = uv.dim(3);
  Tensor out(Shape{P, J, D});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const double w = cv[(p * I + i) * J + j];
        const double* ur = &uv[((p * I + i) * J + j) * D];
        double* o = &out[(p * J + j) * D];
        for (std::size_t d = 0; d < D; ++d) o[d] += w * ur[d];
      }
  return c.tape->record(std::move(out), {c.id, u.id}, [ic = c.id, iu = u.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& cv = t.value(ic);
    const Tensor& uv = t.value(iu);
    const std::size_t P = uv.dim(0), I = uv.dim(1), J = uv.dim(2), D = uv.dim(3);
    Tensor* gc = t.requires_grad(ic) ? &t.grad_mut(ic) : nullptr;
    Tensor* gu = t.requires_grad(iu) ? &t.grad_mut(iu) : nullptr;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j) {
          const std::size_t cij = (p * I + i) * J + j;
          const double* go = &g[(p * J + j) * D];
          const double* ur = &uv[cij * D];
          if (gc) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += go[d] * ur[d];
            (*gc)[cij] += acc;
          }
          if (gu) {
            const double w = cv[cij];
            double* gur = &(*gu)[cij * D];
            for (std::size_t d = 0; d < D; ++d) gur[d] += w * go[d];
          }
        }
  }, "weighted_sum");
}

Var agreement(Var u, Var v) {
  require_same_tape(u, v);
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  require(uv.rank() == 4 && vv.rank() == 3 && vv.dim(0) == uv.dim(0) && vv.dim(1) == uv.dim(2) &&
              vv.dim(2) == uv.dim(3),
          ErrorCode::kShapeMismatch,
          "agreement: u " + shape_str(uv.shape()) + " incompatible with v " + shape_str(vv.shape()));
  const std::size_t P = uv.dim(0), I = uv.dim(1), J = uv.dim(2), D = uv.dim(3);
  Tensor out(Shape{P, I, J});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const double* ur = &uv[((p * I + i) * J + j) * D];
        const double* vr = &vv[(p * J + j) * D];
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += ur[d] * vr[d];
        out[(p * I + i) * J + j] = acc;
      }
  return u.tape->record(std::move(out), {u.id, v.id}, [iu = u.id, iv = v.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& uv = t.value(iu);
    const Tensor& vv = t.value(iv);
    const std::size_t P = uv.dim(0), I = uv.dim(1), J = uv.dim(2), D = uv.dim(3);
    Tensor* gu = t.requires_grad(iu) ? &t.grad_mut(iu) : nullptr;
    Tensor* gv = t.requires_grad(iv) ? &t.grad_mut(iv) : nullptr;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j) {
          const std::size_t a = (p * I + i) * J + j;
          const double ga = g[a];
          const std::size_t uo = a * D, vo = (p * J + j) * D;
          for (std::size_t d = 0; d < D; ++d) {
            if (gu) (*gu)[uo + d] += ga * vv[vo + d];
            if (gv) (*gv)[vo + d] += ga * uv[uo + d];
          }
        }
  }, "agreement");
}

Var caps_transform(Var v, Var weights) {
  require_same_tape(v, weights);
  const Tensor& x = v.value();
  const Tensor& w = weights.value();
  require(x.rank() == 4, ErrorCode::kShapeMismatch, "caps_transform: capsules must be [H,W,n,d], got " + shape_str(x.shape()));
  require(w.rank() == 4 && w.dim(0) == x.dim(2) && w.dim(3) == x.dim(3), ErrorCode::kShapeMismatch,
          "caps_transform: weights " + shape_str(w.shape()) + " incompatible with capsules " + shape_str(x.shape()));
  const std::size_t cells = x.dim(0) * x.dim(1), n = x.dim(2), d = x.dim(3);
  const std::size_t J = w.dim(1), Do = w.dim(2);
  Tensor out(Shape{x.dim(0), x.dim(1), n, J, Do});
  for (std::size_t cell = 0; cell < cells; ++cell)
    for (std::size_t ty = 0; ty < n; ++ty) {
      const double* in = &x[(cell * n + ty) * d];
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t o = 0; o < Do; ++o) {
          const double* wr = &w[((ty * J + j) * Do + o) * d];
          double acc = 0.0;
          for (std::size_t q = 0; q < d; ++q) acc += wr[q] * in[q];
          out[((cell * n + ty) * J + j) * Do + o] = acc;
        }
    }
  return v.tape->record(std::move(out), {v.id, weights.id}, [iv = v.id, iw = weights.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& x = t.value(iv);
    const Tensor& w = t.value(iw);
    const std::size_t cells = x.dim(0) * x.dim(1), n = x.dim(2), d = x.dim(3);
    const std::size_t J = w.dim(1), Do = w.dim(2);
    Tensor* gx = t.requires_grad(iv) ? &t.grad_mut(iv) : nullptr;
    Tensor* gw = t.requires_grad(iw) ? &t.grad_mut(iw) : nullptr;
    for (std::size_t cell = 0; cell < cells; ++cell)
      for (std::size_t ty = 0; ty < n; ++ty) {
        const std::size_t xo = (cell * n + ty) * d;
        for (std::size_t j = 0; j < J; ++j)
          for (std::size_t o = 0; o < Do; ++o) {
            const double go = g[((cell * n + ty) * J + j) * Do + o];
            const std::size_t wo = ((ty * J + j) * Do + o) * d;
            for (std::size_t q = 0; q < d; ++q) {
              if (gx) (*gx)[xo + q] += go * w[wo + q];
              if (gw) (*gw)[wo + q] += go * x[xo + q];
            }
          }
      }
  }, "caps_transform");
}

Var window_gather(Var t_in, std::size_t k) {
  const Tensor& x = t_in.value();
  require(x.rank() == 5, ErrorCode::kShapeMismatch, "window_gather: input must be [H,W,n,J,Do]");
  const std::size_t H = x.dim(0), W = x.dim(1), n = x.dim(2), J = x.dim(3), Do = x.dim(4);
  require(k >= 1 && k <= H && k <= W, ErrorCode::kShapeMismatch,
          "window_gather: window " + std::to_string(k) + " exceeds grid " + std::to_string(H) + "x" + std::to_string(W));
  const std::size_t oh = H - k + 1, ow = W - k + 1;
  const std::size_t block = n * J * Do;
  Tensor out(Shape{oh * ow, k * k * n, J, Do});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xo = 0; xo < ow; ++xo)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double* src = &x[((y + ky) * W + (xo + kx)) * block];
          double* dst = &out[((y * ow + xo) * k * k + ky * k + kx) * block];
          std::copy(src, src + block, dst);
        }
  return t_in.tape->record(std::move(out), {t_in.id}, [ix = t_in.id, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& gx = t.grad_mut(ix);
    const std::size_t H = gx.dim(0), W = gx.dim(1);
    const std::size_t block = gx.dim(2) * gx.dim(3) * gx.dim(4);
    const std::size_t oh = H - k + 1, ow = W - k + 1;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double* src = &g[((y * ow + xo) * k * k + ky * k + kx) * block];
            double* dst = &gx[((y + ky) * W + (xo + kx)) * block];
            for (std::size_t q = 0; q < block; ++q) dst[q] += src[q];
          }
  }, "window_gather");
}

Var row_norms(Var v) {
  const Tensor& x = v.value();
  require(x.rank() == 2, ErrorCode::kShapeMismatch, "row_norms: input must be rank 2");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += x[r * d + i] * x[r * d + i];
    out[r] = std::sqrt(sq);
  }
  return v.tape->record(std::move(out), {v.id}, [iv = v.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& n = t.value(self);
    const Tensor& x = t.value(iv);
    auto& gx = t.grad_mut(iv);
    const std::size_t rows = x.dim(0), d = x.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      if (n[r] == 0.0) continue;  // subgradient 0 at the origin
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += g[r] * x[r * d + i] / n[r];
    }
  }, "row_norms");
}

}  // namespace ops
}  // namespace mscaps
