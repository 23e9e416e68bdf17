#pragma once

#include <string>
#include <vector>

#include "quadnet/loss.hpp"
#include "quadnet/nn.hpp"
#include "quadnet/rng.hpp"
#include "quadnet/tensor.hpp"

namespace quadnet {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

// Central-difference verification of every differentiable op, every
// layer, and every loss variant, in double precision at kink-avoiding
// probes. Elementwise ops must reach 1e-5, layers 1e-4, losses and the
// composite graph 1e-3.
inline std::vector<GradCheckCase> gradcheck_suite() {
  std::vector<GradCheckCase> cases;

  auto rand_t = [](Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
    return t;
  };
  auto run = [&cases](const std::string& name, double threshold, auto&& builder,
                      std::vector<Tensor<double>> inputs) {
    GradCheckCase c;
    c.name = name;
    c.threshold = threshold;
    c.max_rel_error = grad_check<double>(builder, std::move(inputs));
    c.passed = c.max_rel_error < threshold;
    cases.push_back(c);
  };

  Rng rng(20240817);
  const auto proj = rand_t(rng, {4, 6}, 0.2, 1.0);
  const auto a = rand_t(rng, {4, 6}, -1.0, 1.0);
  auto b = a.clone();
  for (int i = 0; i < b.size(); ++i) {
    Rng r2(1000 + static_cast<uint64_t>(i));
    b.at(i) += (i % 2 ? 1.0 : -1.0) * r2.uniform(0.1, 0.6);
  }
  const auto pos = rand_t(rng, {4, 6}, 0.5, 1.5);

  using In = const std::vector<Tensor<double>>&;
  run("add", 1e-5, [&](In in) { return sum(mul(add(in[0], in[1]), proj)); }, {a, b});
  run("add_scalar", 1e-5, [&](In in) { return sum(mul(add(in[0], 0.7), proj)); }, {a});
  run("sub", 1e-5, [&](In in) { return sum(mul(sub(in[0], in[1]), proj)); }, {a, b});
  run("rsub_scalar", 1e-5, [&](In in) { return sum(mul(sub(1.3, in[0]), proj)); }, {a});
  run("mul", 1e-5, [&](In in) { return sum(mul(mul(in[0], in[1]), proj)); }, {a, b});
  run("scale", 1e-5, [&](In in) { return sum(mul(scale(in[0], -2.2), proj)); }, {a});
  run("div", 1e-5, [&](In in) { return sum(mul(div(in[0], in[1]), proj)); }, {a, pos});
  run("sqrt", 1e-5, [&](In in) { return sum(mul(sqrt_elem(in[0]), proj)); }, {pos});
  run("maximum", 1e-5, [&](In in) { return sum(mul(maximum(in[0], in[1]), proj)); }, {a, b});
  run("maximum_scalar", 1e-5, [&](In in) { return sum(mul(maximum(in[0], 0.31), proj)); }, {a});
  run("sum", 1e-5, [&](In in) { return sum(in[0]); }, {a});
  run("reshape", 1e-5, [&](In in) { return sum(mul(reshape(in[0], {4, 6}), proj)); },
      {rand_t(rng, {24}, -1, 1)});

  const auto proj_c = rand_t(rng, {3}, 0.2, 1.0);
  run("channel_mean", 1e-5,
      [&](In in) { return sum(mul(channel_mean(in[0]), proj_c)); }, {rand_t(rng, {3, 4, 5}, -1, 1)});
  const auto proj_cs = rand_t(rng, {3, 2, 2}, 0.2, 1.0);
  run("expand_spatial", 1e-5,
      [&](In in) { return sum(mul(expand_spatial(in[0], 2, 2), proj_cs)); },
      {rand_t(rng, {3}, -1, 1)});

  const auto m1 = rand_t(rng, {3, 4}, -1, 1);
  const auto m2 = rand_t(rng, {4, 2}, -1, 1);
  const auto proj_m = rand_t(rng, {3, 2}, 0.2, 1.0);
  run("matmul", 1e-5, [&](In in) { return sum(mul(matmul(in[0], in[1]), proj_m)); }, {m1, m2});

  const auto e1 = rand_t(rng, {32}, -1, 1);
  const auto e2 = rand_t(rng, {32}, -1, 1);
  run("euclidean_distance", 1e-5, [&](In in) { return euclidean_distance(in[0], in[1]); },
      {e1, e2});

  // layers
  auto away_from_zero = [&](std::vector<int> shape) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (int i = 0; i < t.size(); ++i) {
      const double mag = rng.uniform(0.1, 1.0);
      t.at(i) = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
  };
  const auto proj_r = rand_t(rng, {4, 6}, 0.2, 1.0);
  run("relu", 1e-4, [&](In in) { return sum(mul(relu(in[0]), proj_r)); }, {away_from_zero({4, 6})});

  const auto cx = rand_t(rng, {2, 6, 6}, -1, 1);
  const auto cw = rand_t(rng, {3, 2, 3, 3}, -0.5, 0.5);
  const auto cb = rand_t(rng, {3}, -0.2, 0.2);
  const auto proj_conv = rand_t(rng, {3, 6, 6}, 0.2, 1.0);
  run("conv2d", 1e-4, [&](In in) { return sum(mul(conv2d(in[0], in[1], in[2], 1), proj_conv)); },
      {cx, cw, cb});

  const auto proj_pool = rand_t(rng, {2, 3, 3}, 0.2, 1.0);
  run("maxpool2", 1e-4, [&](In in) { return sum(mul(maxpool2(in[0]), proj_pool)); },
      {rand_t(rng, {2, 6, 6}, -1, 1)});

  const auto sx = rand_t(rng, {2, 8, 8}, -1, 1);
  const auto proj_s = rand_t(rng, {2, 8, 8}, 0.2, 1.0);
  run("smooth2d", 1e-4, [&](In in) { return sum(mul(smooth2d(in[0], 7), proj_s)); }, {sx});
  run("lcn_k7", 1e-4, [&](In in) { return sum(mul(lcn(in[0], 7), proj_s)); }, {sx});
  run("lcn_k6", 1e-4, [&](In in) { return sum(mul(lcn(in[0], 6), proj_s)); }, {sx});

  const auto lx = rand_t(rng, {6}, -1, 1);
  const auto lw = rand_t(rng, {4, 6}, -0.5, 0.5);
  const auto lb = rand_t(rng, {4}, -0.2, 0.2);
  const auto proj_l = rand_t(rng, {4}, 0.2, 1.0);
  run("linear", 1e-4, [&](In in) { return sum(mul(linear(in[0], in[1], in[2]), proj_l)); },
      {lx, lw, lb});

  // losses at kink-avoiding probes: all six pairwise distances must sit
  // clear of both margins and of zero
  LossConfig cfg;
  cfg.push_margin = 1.0;
  cfg.pull_margin = 0.2;
  auto clear_probe = [&]() {
    for (uint64_t seed = 900;; ++seed) {
      Rng r(seed);
      std::vector<Tensor<double>> q;
      for (int k = 0; k < 4; ++k) q.push_back(rand_t(r, {8}, -0.5, 0.5));
      bool ok = true;
      for (int i = 0; i < 4 && ok; ++i)
        for (int j = i + 1; j < 4 && ok; ++j) {
          const double d = std::sqrt((q[static_cast<size_t>(i)].values() -
                                      q[static_cast<size_t>(j)].values())
                                         .square()
                                         .sum());
          ok = std::abs(d - cfg.push_margin) > 1e-3 && std::abs(d - cfg.pull_margin) > 1e-3 &&
               d > 1e-3;
        }
      if (ok) return q;
    }
  };
  const auto qe = clear_probe();
  for (const LossVariant v : {LossVariant::HingeM3, LossVariant::HingeM5, LossVariant::HingeM6,
                              LossVariant::Contrastive5}) {
    cfg.variant = v;
    run(std::string("loss_") + to_string(v), 1e-3,
        [&, cfg](In in) {
          QuadrupleEmbeddings<double> g{in[0], in[1], in[2], in[3]};
          return quadruple_loss(g, cfg);
        },
        {qe[0], qe[1], qe[2], qe[3]});
  }
  cfg.variant = LossVariant::Triplet;
  run("loss_triplet", 1e-3,
      [&, cfg](In in) { return loss_triplet(in[0], in[1], in[2], cfg); }, {qe[0], qe[2], qe[3]});

  // composite graph: conv -> relu -> pool -> fc
  const auto gx = rand_t(rng, {2, 8, 8}, -1, 1);
  const auto gw1 = rand_t(rng, {3, 2, 3, 3}, -0.4, 0.4);
  const auto gb1 = rand_t(rng, {3}, -0.1, 0.1);
  const auto gw2 = rand_t(rng, {4, 48}, -0.3, 0.3);
  const auto gb2 = rand_t(rng, {4}, -0.1, 0.1);
  const auto proj_g = rand_t(rng, {4}, 0.2, 1.0);
  run("conv_relu_pool_fc", 1e-3,
      [&](In in) {
        auto h = maxpool2(relu(conv2d(in[0], in[1], in[2], 1)));
        return sum(mul(linear(reshape(h, {48}), in[3], in[4]), proj_g));
      },
      {gx, gw1, gb1, gw2, gb2});

  return cases;
}

}  // namespace quadnet
