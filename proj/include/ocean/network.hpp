#pragma once

// The tracking network: a small stride-8 backbone, the multi-dilation
// feature combination and the three heads (box regression, regular-region
// classification, object-aware classification).

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ocean/align.hpp"
#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/labels.hpp"
#include "ocean/ops.hpp"
#include "ocean/tensor.hpp"

namespace ocean {

/// Dilation of one combination branch: `x` along the image X axis (columns),
/// `y` along the Y axis (rows).
struct BranchDilation {
  std::size_t x = 1;
  std::size_t y = 1;
  bool operator==(const BranchDilation&) const = default;
};

inline std::string branch_name(const BranchDilation& d) {
  return "d" + std::to_string(d.x) + std::to_string(d.y);
}

struct NetConfig {
  // Four stages: three stride-2 stages, then a stride-1 stage dilated by 2.
  std::vector<std::size_t> backbone_channels{16, 24, 32, 32};
  std::size_t combined_channels = 32;
  std::size_t head_channels = 32;
  std::size_t tower_depth = 4;
  std::size_t kernel = 3;
  std::size_t exemplar_size = 64;
  std::size_t search_size = 128;
  std::vector<BranchDilation> dilations{{1, 1}, {1, 2}, {2, 1}};
  std::size_t oa_kernel = 3;
  // When set, the object-aware loss also trains the regression branch
  // through the sampling offsets.
  bool couple_offsets = false;
  double distance_clamp = 10.0;
  double cls_bias_init = -2.0;
  // Divide each correlation map by the square root of the number of
  // exemplar feature cells.
  bool normalize_xcorr = true;
  // Remove each combined channel's spatial mean before the heads.
  bool center_xcorr = true;

  static constexpr std::size_t input_channels = 3;
  static constexpr std::size_t stride = 8;

  /// Shapes used by the original large-scale setting.
  static NetConfig full_scale() {
    NetConfig c;
    c.backbone_channels = {64, 256, 512, 1024};
    c.combined_channels = 256;
    c.head_channels = 256;
    c.exemplar_size = 127;
    c.search_size = 255;
    return c;
  }

  static std::size_t stage_extent(std::size_t in) {
    // 3x3, stride 2, padding 1
    return kernels::conv_output_extent(in, 1, 1, 3, 2);
  }

  std::size_t feature_extent(std::size_t input) const {
    std::size_t e = input;
    for (std::size_t s = 0; s + 1 < backbone_channels.size(); ++s) e = stage_extent(e);
    return e;  // the dilated stage keeps the extent
  }

  std::size_t exemplar_feature_extent() const { return feature_extent(exemplar_size); }
  std::size_t search_feature_extent() const { return feature_extent(search_size); }

  std::size_t score_extent() const {
    return search_feature_extent() - exemplar_feature_extent() + 1;
  }

  GridSpec score_grid() const {
    return GridSpec::centered(search_size, static_cast<double>(stride), score_extent());
  }

  void validate() const {
    if (backbone_channels.size() != 4) {
      throw ConfigError("net.backbone_channels: expected 4 stages for a stride-8 backbone");
    }
    for (auto c : backbone_channels) {
      if (c == 0) throw ConfigError("net.backbone_channels: channel counts must be positive");
    }
    if (combined_channels == 0) throw ConfigError("net.combined_channels must be positive");
    if (head_channels == 0) throw ConfigError("net.head_channels must be positive");
    if (kernel % 2 == 0) throw ConfigError("net.kernel must be odd");
    if (oa_kernel % 2 == 0) throw ConfigError("net.oa_kernel must be odd");
    if (dilations.empty()) throw ConfigError("net.dilations must list at least one branch");
    for (const auto& d : dilations) {
      if (d.x == 0 || d.y == 0) throw ConfigError("net.dilations: components must be >= 1");
    }
    if (exemplar_size < 16 || search_size < 16) {
      throw ConfigError("net.exemplar_size/net.search_size too small for a stride-8 backbone");
    }
    if (exemplar_feature_extent() > search_feature_extent()) {
      throw ConfigError("net.exemplar_size must not exceed net.search_size");
    }
    if (!(distance_clamp > 0)) throw ConfigError("net.distance_clamp must be positive");
  }
};

template <typename T = double>
using ModelParams = std::map<std::string, Tensor<T>>;

template <typename T>
using BoundParams = std::map<std::string, ad::Var<T>>;

namespace detail {

template <typename T>
void add_conv(ModelParams<T>& p, std::mt19937_64& rng, const std::string& name, std::size_t c_out,
              std::size_t c_in, std::size_t k, double gain, double bias = 0.0) {
  const double fan_in = static_cast<double>(c_in * k * k);
  const double bound = gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> w({c_out, c_in, k, k});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  p.emplace(name + ".weight", std::move(w));
  p.emplace(name + ".bias", Tensor<T>({c_out}, static_cast<T>(bias)));
}

}  // namespace detail

/// Centred uniform fan-in initialisation. Classification output biases start
/// at cfg.cls_bias_init so the initial foreground probability is small.
template <typename T = double>
ModelParams<T> init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> p;
  const double relu_gain = std::sqrt(2.0);
  std::size_t c_in = NetConfig::input_channels;
  for (std::size_t s = 0; s < cfg.backbone_channels.size(); ++s) {
    detail::add_conv(p, rng, "backbone." + std::to_string(s), cfg.backbone_channels[s], c_in, 3,
                     relu_gain);
    c_in = cfg.backbone_channels[s];
  }
  for (const auto& d : cfg.dilations) {
    const std::string base = "combine." + branch_name(d);
    detail::add_conv(p, rng, base + ".exemplar", cfg.combined_channels, c_in, cfg.kernel, 1.0);
    detail::add_conv(p, rng, base + ".search", cfg.combined_channels, c_in, cfg.kernel, 1.0);
    // Both projections start equal so each branch begins as a feature similarity.
    p.at(base + ".search.weight") = p.at(base + ".exemplar.weight");
  }
  for (const std::string head : {"reg", "cls"}) {
    std::size_t h_in = cfg.combined_channels;
    for (std::size_t i = 0; i < cfg.tower_depth; ++i) {
      detail::add_conv(p, rng, head + ".tower." + std::to_string(i), cfg.head_channels, h_in,
                       cfg.kernel, relu_gain);
      h_in = cfg.head_channels;
    }
  }
  const std::size_t tower_out = cfg.tower_depth > 0 ? cfg.head_channels : cfg.combined_channels;
  detail::add_conv(p, rng, "reg.out", 4, tower_out, cfg.kernel, 0.1);
  detail::add_conv(p, rng, "cls.out", 1, tower_out, cfg.kernel, 0.1, cfg.cls_bias_init);
  detail::add_conv(p, rng, "oa", 1, cfg.combined_channels, cfg.oa_kernel, 0.1, cfg.cls_bias_init);
  return p;
}

/// Shapes every parameter must have under `cfg`.
inline std::map<std::string, Shape> expected_shapes(const NetConfig& cfg) {
  std::map<std::string, Shape> shapes;
  for (const auto& [name, t] : init_params<double>(cfg, 0)) shapes.emplace(name, t.shape());
  return shapes;
}

template <typename T>
void check_params(const ModelParams<T>& params, const NetConfig& cfg) {
  const auto expected = expected_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ArtifactError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ArtifactError("parameter '" + name + "' has shape " +
                          shape_string(it->second.shape()) + ", expected " + shape_string(shape));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) throw ArtifactError("unexpected parameter '" + name + "'");
  }
}

inline bool is_backbone_param(const std::string& name) { return name.rfind("backbone.", 0) == 0; }

/// Places the parameters on a graph. Parameters whose names satisfy
/// `frozen` become constants and receive no gradient.
template <typename T, typename Pred>
BoundParams<T> bind_params(ad::Graph<T>& g, const ModelParams<T>& params, Pred frozen) {
  BoundParams<T> vars;
  for (const auto& [name, t] : params) {
    vars.emplace(name, frozen(name) ? g.constant(t) : g.parameter(t));
  }
  return vars;
}

template <typename T>
BoundParams<T> bind_params(ad::Graph<T>& g, const ModelParams<T>& params) {
  return bind_params(g, params, [](const std::string&) { return false; });
}

template <typename T>
BoundParams<T> bind_constants(ad::Graph<T>& g, const ModelParams<T>& params) {
  return bind_params(g, params, [](const std::string&) { return true; });
}

struct HeadOptions {
  // Offsets to use instead of deriving them from the current regression
  // output (gradient checks hold them fixed across perturbations).
  const Tensor<double>* fixed_offsets = nullptr;
  // Zeroes the listed branches' contribution (ablation and additivity checks).
  std::set<std::string> disabled_branches;
};

template <typename T>
struct HeadOutputs {
  ad::Var<T> combined;    // S: [C, H, W]
  ad::Var<T> distances;   // [4, H, W] nonnegative pixels
  ad::Var<T> p_r;         // [1, H, W]
  ad::Var<T> p_o;         // [1, H, W]
  Tensor<double> offsets; // offsets used by the object-aware conv
};

template <typename T>
class Network {
 public:
  explicit Network(NetConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const NetConfig& config() const { return cfg_; }

  ad::Var<T> conv_layer(const BoundParams<T>& p, const std::string& name, ad::Var<T> x,
                        const kernels::ConvGeometry& geo) const {
    return ad::add_channel_bias(ad::conv2d(x, p.at(name + ".weight"), geo),
                                p.at(name + ".bias"));
  }

  /// [3, H, W] image -> [C, H/8, W/8] feature.
  ad::Var<T> backbone(const BoundParams<T>& p, ad::Var<T> image) const {
    const auto& v = image.value();
    if (v.rank() != 3 || v.dim(0) != NetConfig::input_channels) {
      throw ShapeError("backbone: expected a [3,H,W] image, got " + shape_string(v.shape()));
    }
    ad::Var<T> x = image;
    const std::size_t stages = cfg_.backbone_channels.size();
    for (std::size_t s = 0; s < stages; ++s) {
      kernels::ConvGeometry geo;
      if (s + 1 < stages) {
        geo.stride = 2;
        geo.padding = {1, 1};
      } else {
        geo.stride = 1;
        geo.dilation = {2, 2};
        geo.padding = {2, 2};
      }
      x = ad::relu(conv_layer(p, "backbone." + std::to_string(s), x, geo));
    }
    return x;
  }

  /// Sum over branches of depthwise_xcorr(phi(search), phi(exemplar)).
  ad::Var<T> combine(const BoundParams<T>& p, ad::Var<T> f_e, ad::Var<T> f_s,
                     const HeadOptions& opt = {}) const {
    if (f_e.value().rank() != 3 || f_s.value().rank() != 3 ||
        f_e.value().dim(1) > f_s.value().dim(1) || f_e.value().dim(2) > f_s.value().dim(2)) {
      throw ShapeError("combine: exemplar feature " + shape_string(f_e.value().shape()) +
                       " must be spatially no larger than search feature " +
                       shape_string(f_s.value().shape()));
    }
    std::optional<ad::Var<T>> sum;
    for (const auto& d : cfg_.dilations) {
      const std::string base = "combine." + branch_name(d);
      kernels::ConvGeometry geo;
      geo.dilation = {d.y, d.x};
      geo.padding = {d.y * (cfg_.kernel / 2), d.x * (cfg_.kernel / 2)};
      auto phi_e = conv_layer(p, base + ".exemplar", f_e, geo);
      auto phi_s = conv_layer(p, base + ".search", f_s, geo);
      auto corr = ad::depthwise_xcorr(phi_s, phi_e);
      if (cfg_.normalize_xcorr) {
        const auto& k = phi_e.value();
        corr = ad::scale(corr, 1.0 / std::sqrt(static_cast<double>(k.dim(1) * k.dim(2))));
      }
      if (opt.disabled_branches.count(branch_name(d))) corr = ad::scale(corr, 0.0);
      sum = sum ? ad::add(*sum, corr) : corr;
    }
    return cfg_.center_xcorr ? ad::center_channels(*sum) : *sum;
  }

  ad::Var<T> tower(const BoundParams<T>& p, const std::string& head, ad::Var<T> x) const {
    kernels::ConvGeometry geo;
    geo.padding = {cfg_.kernel / 2, cfg_.kernel / 2};
    for (std::size_t i = 0; i < cfg_.tower_depth; ++i) {
      x = ad::relu(conv_layer(p, head + ".tower." + std::to_string(i), x, geo));
    }
    return conv_layer(p, head + ".out", x, geo);
  }

  /// Regression distances, exp(clamp(o)) * stride.
  ad::Var<T> regression_head(const BoundParams<T>& p, ad::Var<T> combined) const {
    return ad::exp_distance(tower(p, "reg", combined), static_cast<double>(NetConfig::stride),
                            -cfg_.distance_clamp, cfg_.distance_clamp);
  }

  HeadOutputs<T> heads(const BoundParams<T>& p, ad::Var<T> combined,
                       const HeadOptions& opt = {}) const {
    auto& g = *combined.graph;
    HeadOutputs<T> out;
    out.combined = combined;
    out.distances = regression_head(p, combined);
    out.p_r = ad::sigmoid(tower(p, "cls", combined));

    const GridSpec grid = score_grid_for(combined.value());
    ad::Var<T> offsets;
    if (opt.fixed_offsets) {
      out.offsets = *opt.fixed_offsets;
      offsets = g.constant(out.offsets.template cast<T>());
    } else if (cfg_.couple_offsets) {
      offsets = ad::box_offsets(out.distances, grid.stride, cfg_.oa_kernel);
      out.offsets = offsets.value().template cast<double>();
    } else {
      const auto boxes = decode_boxes(out.distances.value(), grid);
      out.offsets = compute_offsets(boxes_to_grid_units(boxes, grid), cfg_.oa_kernel).offsets;
      offsets = g.constant(out.offsets.template cast<T>());
    }
    auto oa = ad::aligned_conv(combined, p.at("oa.weight"), offsets);
    out.p_o = ad::sigmoid(ad::add_channel_bias(oa, p.at("oa.bias")));
    return out;
  }

  /// Exemplar image + search image -> head outputs.
  HeadOutputs<T> forward(const BoundParams<T>& p, ad::Var<T> exemplar, ad::Var<T> search,
                         const HeadOptions& opt = {}) const {
    auto f_e = backbone(p, exemplar);
    auto f_s = backbone(p, search);
    return heads(p, combine(p, f_e, f_s, opt), opt);
  }

  /// Grid of the score maps produced from a search crop of cfg.search_size.
  GridSpec score_grid_for(const Tensor<T>& combined) const {
    GridSpec grid = GridSpec::centered(cfg_.search_size, static_cast<double>(NetConfig::stride),
                                       combined.dim(1));
    grid.width = combined.dim(2);
    return grid;
  }

 private:
  NetConfig cfg_;
};

}  // namespace ocean
