#include "mscaps/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mscaps/afc.hpp"
#include "mscaps/autodiff.hpp"
#include "mscaps/capsules.hpp"
#include "mscaps/loss_metrics.hpp"
#include "mscaps/network.hpp"
#include "mscaps/rng.hpp"

namespace mscaps {

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

namespace {

constexpr double kStep = 1e-5;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinks at the origin.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

/// Checks d(sum(w * f(inputs)))/d(inputs) against central differences.
/// max_entries > 0 samples that many coordinates per input.
GradCheckResult check(const std::string& name, const Builder& build, const std::vector<Tensor>& inputs, Rng& rng,
                      double tolerance, std::size_t max_entries = 0) {
  Tensor weights;
  {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(t.constant(x));
    weights = random_tensor(build(t, vs).shape(), rng, 0.5, 1.5);
  }
  auto objective = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    const Tensor& out = build(t, vs).value();
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += weights[i] * out[i];
    return acc;
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  Var out = build(tape, vars);
  Var loss = ops::sum(ops::mul(out, tape.constant(weights)));
  tape.backward(loss);

  std::vector<double> analytic, numeric;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(vars[k]);
    std::vector<std::size_t> entries(inputs[k].size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (max_entries && entries.size() > max_entries) {
      for (std::size_t i = 0; i < max_entries; ++i)
        std::swap(entries[i], entries[i + static_cast<std::size_t>(rng.below(entries.size() - i))]);
      entries.resize(max_entries);
    }
    for (auto i : entries) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + kStep;
      const double up = objective(probe);
      probe[k][i] = x0 - kStep;
      const double down = objective(probe);
      probe[k][i] = x0;
      analytic.push_back(g[i]);
      numeric.push_back((up - down) / (2.0 * kStep));
    }
  }
  const double err = relative_error(Tensor(Shape{analytic.size()}, analytic), Tensor(Shape{numeric.size()}, numeric));
  return {name, err, tolerance, err < tolerance};
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol, double composite_tol) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, const Builder& b, const std::vector<Tensor>& in, double t = -1.0,
                 std::size_t max_entries = 0) {
    out.push_back(check(name, b, in, rng, t < 0 ? tol : t, max_entries));
  };

  run("add", [](Tape&, const std::vector<Var>& v) { return ops::add(v[0], v[1]); },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run("sub", [](Tape&, const std::vector<Var>& v) { return ops::sub(v[0], v[1]); },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run("mul", [](Tape&, const std::vector<Var>& v) { return ops::mul(v[0], v[1]); },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run("scalar_mul", [](Tape&, const std::vector<Var>& v) { return ops::scalar_mul(v[0], -1.7); },
      {random_tensor({5}, rng)});
  run("sigmoid", [](Tape&, const std::vector<Var>& v) { return ops::sigmoid(v[0]); },
      {random_tensor({2, 3}, rng, -3.0, 3.0)});
  run("relu", [](Tape&, const std::vector<Var>& v) { return ops::relu(v[0]); }, {away_from_zero({4, 3}, rng)});
  run("sum", [](Tape&, const std::vector<Var>& v) { return ops::sum(v[0]); }, {random_tensor({2, 2, 3}, rng)});
  run("reshape", [](Tape&, const std::vector<Var>& v) { return ops::reshape(v[0], Shape{3, 4}); },
      {random_tensor({2, 6}, rng)});
  for (std::size_t dil : {1, 2, 3}) {
    run("conv2d_same_d" + std::to_string(dil),
        [dil](Tape&, const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], dil, Padding::kSame); },
        {random_tensor({7, 6, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)});
  }
  run("conv2d_valid_k5",
      [](Tape&, const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], 1, Padding::kValid); },
      {random_tensor({7, 7, 2}, rng), random_tensor({5, 5, 2, 2}, rng), random_tensor({2}, rng)});
  run("conv2d_valid_d2",
      [](Tape&, const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], 2, Padding::kValid); },
      {random_tensor({6, 7, 1}, rng), random_tensor({3, 3, 1, 2}, rng), random_tensor({2}, rng)});
  run("conv1x1", [](Tape&, const std::vector<Var>& v) { return ops::conv1x1(v[0], v[1], v[2]); },
      {random_tensor({4, 4, 3}, rng), random_tensor({3, 2}, rng), random_tensor({2}, rng)});
  run("global_avg_pool", [](Tape&, const std::vector<Var>& v) { return ops::global_avg_pool(v[0]); },
      {random_tensor({3, 5, 2}, rng)});
  run("conv1d_channels", [](Tape&, const std::vector<Var>& v) { return ops::conv1d_channels(v[0], v[1]); },
      {random_tensor({1, 1, 5}, rng), random_tensor({3}, rng)});
  run("channel_broadcast_mul",
      [](Tape&, const std::vector<Var>& v) { return ops::channel_broadcast_mul(v[0], v[1]); },
      {random_tensor({3, 3, 2}, rng), random_tensor({1, 1, 2}, rng)});
  run("squash", [](Tape&, const std::vector<Var>& v) { return ops::squash(v[0]); }, {random_tensor({5, 8}, rng)});
  run("softmax_last", [](Tape&, const std::vector<Var>& v) { return ops::softmax_last(v[0]); },
      {random_tensor({2, 3, 4}, rng, -2.0, 2.0)});
  run("weighted_sum", [](Tape&, const std::vector<Var>& v) { return ops::weighted_sum(v[0], v[1]); },
      {random_tensor({2, 3, 2}, rng, 0.0, 1.0), random_tensor({2, 3, 2, 4}, rng)});
  run("agreement", [](Tape&, const std::vector<Var>& v) { return ops::agreement(v[0], v[1]); },
      {random_tensor({2, 3, 2, 4}, rng), random_tensor({2, 2, 4}, rng)});
  run("caps_transform", [](Tape&, const std::vector<Var>& v) { return ops::caps_transform(v[0], v[1]); },
      {random_tensor({3, 3, 2, 4}, rng), random_tensor({2, 3, 5, 4}, rng)});
  run("window_gather", [](Tape&, const std::vector<Var>& v) { return ops::window_gather(v[0], 2); },
      {random_tensor({3, 4, 2, 2, 3}, rng)});
  run("row_norms", [](Tape&, const std::vector<Var>& v) { return ops::row_norms(v[0]); },
      {random_tensor({3, 6}, rng)});
  {
    // Rows scaled so both hinges are active: true-class norm 0.5, other 0.4.
    Tensor v = random_tensor({2, 16}, rng);
    for (std::size_t r = 0; r < 2; ++r) {
      double n = 0.0;
      for (std::size_t i = 0; i < 16; ++i) n += v.at(r, i) * v.at(r, i);
      n = std::sqrt(n);
      for (std::size_t i = 0; i < 16; ++i) v.at(r, i) *= (r == 1 ? 0.5 : 0.4) / n;
    }
    run("margin_loss", [](Tape&, const std::vector<Var>& x) { return margin_loss(x[0], 1); }, {v});
  }
  run("channel_attention", [](Tape&, const std::vector<Var>& v) { return afc::channel_attention(v[0], v[1]); },
      {random_tensor({4, 4, 5}, rng), random_tensor({3}, rng)});
  {
    afc::AfcConfig cfg;
    cfg.in_channels = 1;
    cfg.branch_channels = 4;
    cfg.fuse_channels = 3;
    Parameters p;
    afc::init_params(p, cfg, rng);
    std::vector<Tensor> in{random_tensor({5, 5, 1}, rng, 0.0, 1.0)};
    for (std::size_t i = 0; i < p.size(); ++i) in.push_back(p.value(i));
    // Biases away from zero keep ReLU inputs off the kink.
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p.value(i).rank() == 1 && p.name(i).find("conv") != std::string::npos) in[i + 1] = away_from_zero(p.value(i).shape(), rng);
    run("afc_forward",
        [p, cfg](Tape& t, const std::vector<Var>& v) {
          const Binding bound = Binding::over(t, p, std::vector<Var>(v.begin() + 1, v.end()));
          return afc::forward(v[0], bound, cfg);
        },
        in);
  }
  run("route_full",
      [](Tape&, const std::vector<Var>& v) { return caps::route(v[0], 3, caps::RouteGrad::kFull); },
      {random_tensor({2, 3, 2, 4}, rng)});
  run("primary_capsules",
      [](Tape&, const std::vector<Var>& v) { return caps::primary_capsules(v[0], v[1], v[2], 4); },
      {random_tensor({5, 5, 2}, rng), random_tensor({3, 3, 2, 8}, rng, -0.5, 0.5), random_tensor({8}, rng)});
  run("conv_capsule",
      [](Tape&, const std::vector<Var>& v) {
        return caps::conv_capsule(v[0], v[1], 2, 3, caps::RouteGrad::kFull);
      },
      {random_tensor({3, 3, 2, 4}, rng, -0.4, 0.4), random_tensor({2, 3, 4, 4}, rng)});
  run("class_capsules",
      [](Tape&, const std::vector<Var>& v) { return caps::class_capsules(v[0], v[1], 3, caps::RouteGrad::kFull); },
      {random_tensor({2, 2, 3, 4}, rng, -0.4, 0.4), random_tensor({3, 2, 6, 4}, rng)});

  // Full network composite on a 9x9 patch with full-gradient routing.
  {
    NetworkConfig cfg;
    cfg.route_grad = caps::RouteGrad::kFull;
    Parameters p = init_network(cfg, rng);
    std::vector<Tensor> in{random_tensor({cfg.patch, cfg.patch, 1}, rng, 0.0, 1.0)};
    for (std::size_t i = 0; i < p.size(); ++i) in.push_back(p.value(i));
    const int label = static_cast<int>(rng.below(2));
    run("network_margin_loss",
        [p, cfg, label](Tape& t, const std::vector<Var>& v) {
          const Binding bound = Binding::over(t, p, std::vector<Var>(v.begin() + 1, v.end()));
          return margin_loss(network_forward(cfg, bound, v[0]), label);
        },
        in, composite_tol, 12);
  }
  return out;
}

}  // namespace mscaps
