#pragma once

// Finite-difference checks for every differentiable op and for the joint
// training objective through a small network.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ocean/gradcheck.hpp"
#include "ocean/labels.hpp"
#include "ocean/losses.hpp"
#include "ocean/network.hpp"
#include "ocean/ops.hpp"

namespace ocean {

struct GradCheckCase {
  std::string name;
  double tol = 1e-4;
  GradCheckReport report;
};

namespace detail {

inline Tensor<double> uniform(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

/// Values bounded away from zero so relu kinks are not straddled by the
/// finite-difference step.
inline Tensor<double> away_from_zero(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

/// sum(out * r) for a fixed random r, so every output element matters.
inline ad::Var<double> project(ad::Var<double> out, const Tensor<double>& r) {
  auto& g = *out.graph;
  return ad::reduce_sum(ad::mul(out, g.constant(r)));
}

}  // namespace detail

/// Compact network used by the end-to-end check.
inline NetConfig gradcheck_net_config() {
  NetConfig c;
  c.backbone_channels = {4, 6, 6, 6};
  c.combined_channels = 4;
  c.head_channels = 4;
  c.tower_depth = 1;
  c.exemplar_size = 24;
  c.search_size = 40;
  return c;
}

/// Joint objective of one random sample; offsets and object-aware labels are
/// frozen at the unperturbed prediction.
inline GradCheckCase check_total_loss(std::uint64_t seed, double tol = 1e-3) {
  std::mt19937_64 rng(seed * 7 + 1);
  const NetConfig cfg = gradcheck_net_config();
  const Network<double> net(cfg);
  const auto exemplar = detail::uniform(rng, {3, cfg.exemplar_size, cfg.exemplar_size}, -0.5, 0.5);
  const auto search = detail::uniform(rng, {3, cfg.search_size, cfg.search_size}, -0.5, 0.5);
  const GridSpec grid = cfg.score_grid();
  std::uniform_real_distribution<double> centre(16.0, 24.0), size(14.0, 22.0);
  const BBox gt = BBox::from_center(centre(rng), centre(rng), size(rng), size(rng));
  LabelBundle labels = make_labels(gt, grid, 8.0);
  ParamTensors params = init_params<double>(cfg, seed);
  // Positive hidden biases keep most relu units active.
  for (auto& [name, t] : params) {
    if (name.ends_with(".bias") && name != "cls.out.bias" && name != "oa.bias") {
      t = detail::uniform(rng, t.shape(), 0.05, 0.2);
    }
  }

  Tensor<double> offsets;
  {
    ad::Graph<double> g;
    auto p = bind_constants(g, params);
    auto out = net.forward(p, g.constant(exemplar), g.constant(search));
    offsets = out.offsets;
    fill_objectaware_labels(labels, out.distances.value(), grid, gt);
  }
  HeadOptions opt;
  opt.fixed_offsets = &offsets;
  const LossWeights w;
  GraphBuilder build = [&](ad::Graph<double>& g, const ParamVars& vars) {
    auto out = net.forward(vars, g.constant(exemplar), g.constant(search), opt);
    return sample_losses(out, labels, w).total;
  };
  GradCheckOptions options;
  options.skip_kinks = true;
  GradCheckCase result{"total_loss", tol, grad_check(build, params, tol, options)};
  // Skipping is only acceptable for a small minority of elements.
  const std::size_t total = result.report.checked + result.report.skipped;
  if (result.report.skipped * 100 > total) result.report.pass = false;
  return result;
}

/// Every differentiable op on random inputs drawn from `seed`.
inline std::vector<GradCheckCase> check_ops(std::uint64_t seed, double tol = 1e-4) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;
  auto run = [&](const std::string& name, ParamTensors params, GraphBuilder build) {
    cases.push_back({name, tol, grad_check(build, std::move(params), tol)});
  };
  std::uniform_int_distribution<std::size_t> small(1, 3);

  {
    kernels::ConvGeometry geo;
    geo.dilation = {small(rng), small(rng)};
    geo.padding = {small(rng) - 1, small(rng) - 1};
    geo.stride = small(rng) == 3 ? 2 : 1;
    const std::size_t c = small(rng), o = small(rng);
    const std::size_t h = 7 + small(rng), w = 7 + small(rng);
    ParamTensors p{{"x", detail::uniform(rng, {c, h, w}, -1, 1)},
                   {"w", detail::uniform(rng, {o, c, 3, 3}, -1, 1)}};
    const auto out_h = kernels::conv_output_extent(h, geo.padding.h, geo.dilation.h, 3, geo.stride);
    const auto out_w = kernels::conv_output_extent(w, geo.padding.w, geo.dilation.w, 3, geo.stride);
    const auto r = detail::uniform(rng, {o, out_h, out_w}, -1, 1);
    run("conv2d", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::conv2d(v.at("x"), v.at("w"), geo), r);
    });
  }
  {
    ParamTensors p{{"x", detail::uniform(rng, {3, 4, 5}, -1, 1)},
                   {"b", detail::uniform(rng, {3}, -1, 1)}};
    const auto r = detail::uniform(rng, {3, 4, 5}, -1, 1);
    run("add_channel_bias", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::add_channel_bias(v.at("x"), v.at("b")), r);
    });
  }
  {
    ParamTensors p{{"x", detail::away_from_zero(rng, {2, 5, 5})}};
    const auto r = detail::uniform(rng, {2, 5, 5}, -1, 1);
    run("relu", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::relu(v.at("x")), r);
    });
  }
  {
    ParamTensors p{{"x", detail::uniform(rng, {2, 5, 5}, -4, 4)}};
    const auto r = detail::uniform(rng, {2, 5, 5}, -1, 1);
    run("sigmoid", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::sigmoid(v.at("x")), r);
    });
  }
  {
    ParamTensors p{{"x", detail::uniform(rng, {4, 3, 3}, -2, 2)}};
    const auto r = detail::uniform(rng, {4, 3, 3}, -1, 1);
    run("exp_distance", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::exp_distance(v.at("x"), 8.0), r);
    });
  }
  {
    const std::size_t c = small(rng);
    ParamTensors p{{"s", detail::uniform(rng, {c, 7, 8}, -1, 1)},
                   {"k", detail::uniform(rng, {c, 3, 4}, -1, 1)}};
    const auto r = detail::uniform(rng, {c, 5, 5}, -1, 1);
    run("depthwise_xcorr", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::depthwise_xcorr(v.at("s"), v.at("k")), r);
    });
  }
  {
    const std::size_t c = small(rng), o = small(rng), h = 5, w = 6;
    ParamTensors p{{"f", detail::uniform(rng, {c, h, w}, -1, 1)},
                   {"w", detail::uniform(rng, {o, c, 3, 3}, -1, 1)}};
    const auto off = detail::uniform(rng, {18, h, w}, -1.5, 1.5);
    const auto r = detail::uniform(rng, {o, h, w}, -1, 1);
    run("aligned_conv", p, [=](ad::Graph<double>& g, const ParamVars& v) {
      return detail::project(ad::aligned_conv(v.at("f"), v.at("w"), g.constant(off)), r);
    });
  }
  {
    ParamTensors p{{"d", detail::uniform(rng, {4, 3, 4}, 2, 30)}};
    const auto r = detail::uniform(rng, {18, 3, 4}, -1, 1);
    run("box_offsets", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::box_offsets(v.at("d"), 8.0, 3), r);
    });
  }
  {
    // Offsets driven by the feature-side inputs through the whole object-aware path.
    const std::size_t h = 4, w = 5;
    ParamTensors p{{"d", detail::uniform(rng, {4, h, w}, 4, 20)},
                   {"f", detail::uniform(rng, {2, h, w}, -1, 1)}};
    const auto wt = detail::uniform(rng, {1, 2, 3, 3}, -1, 1);
    const auto r = detail::uniform(rng, {1, h, w}, -1, 1);
    run("aligned_conv_offsets", p, [=](ad::Graph<double>& g, const ParamVars& v) {
      auto off = ad::box_offsets(v.at("d"), 8.0, 3);
      return detail::project(ad::aligned_conv(v.at("f"), g.constant(wt), off), r);
    });
  }
  {
    ParamTensors p{{"a", detail::uniform(rng, {2, 3, 4}, -1, 1)},
                   {"b", detail::uniform(rng, {2, 3, 4}, -1, 1)}};
    const auto r = detail::uniform(rng, {2, 3, 4}, -1, 1);
    run("add", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::add(v.at("a"), v.at("b")), r);
    });
    run("mul", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::mul(v.at("a"), v.at("b")), r);
    });
    run("scale", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::scale(v.at("a"), -1.7), r);
    });
    const auto r2 = detail::uniform(rng, {4, 6}, -1, 1);
    run("reshape", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::reshape(v.at("a"), {4, 6}), r2);
    });
    run("reduce_sum", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return ad::reduce_sum(ad::mul(v.at("a"), v.at("b")));
    });
    run("reduce_mean", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return ad::reduce_mean(ad::mul(v.at("a"), v.at("b")));
    });
  }
  {
    const std::size_t h = 3, w = 4;
    auto target = detail::uniform(rng, {4, h, w}, 1, 10);
    auto mask = Tensor<double>({h, w});
    std::bernoulli_distribution coin(0.6);
    for (auto& m : mask.data()) m = coin(rng) ? 1.0 : 0.0;
    mask[0] = 1;
    ParamTensors p{{"d", detail::uniform(rng, {4, h, w}, 1, 10)}};
    for (const auto red : {ad::Reduction::mean, ad::Reduction::sum}) {
      run(red == ad::Reduction::mean ? "iou_loss" : "iou_loss_sum", p,
          [=](ad::Graph<double>&, const ParamVars& v) {
            return ad::iou_loss(v.at("d"), target, mask, 1e-6, red);
          });
    }
  }
  {
    const std::size_t h = 4, w = 4;
    auto labels = detail::uniform(rng, {h, w}, 0, 1);
    Tensor<double> pos({h, w}), neg({h, w});
    std::uniform_int_distribution<int> pick(0, 2);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const int k = pick(rng);
      pos[i] = k == 0;
      neg[i] = k == 1;
    }
    pos[0] = 1;
    neg[0] = 0;
    neg[1] = 1;
    pos[1] = 0;
    ParamTensors p{{"z", detail::uniform(rng, {1, h, w}, -3, 3)}};
    run("sigmoid_bce", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return ad::bce_loss(ad::sigmoid(v.at("z")), labels, pos, neg);
    });
  }
  {
    ParamTensors p{{"x", detail::uniform(rng, {3, 4, 6}, -2, 2)}};
    const auto r = detail::uniform(rng, {3, 4, 6}, -1, 1);
    run("center_channels", p, [=](ad::Graph<double>&, const ParamVars& v) {
      return detail::project(ad::center_channels(v.at("x")), r);
    });
  }
  return cases;
}

/// Ops at `op_tol` plus the end-to-end objective at `total_tol`.
inline std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed, double op_tol = 1e-4,
                                                  double total_tol = 1e-3) {
  auto cases = check_ops(seed, op_tol);
  cases.push_back(check_total_loss(seed, total_tol));
  return cases;
}

}  // namespace ocean
