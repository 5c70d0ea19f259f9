#pragma once

// Inference loop: exemplar/search cropping, score fusion, scale-change
// penalty, window prior, box decoding and scale smoothing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/image.hpp"
#include "ocean/labels.hpp"
#include "ocean/network.hpp"

namespace ocean {

struct TrackHyper {
  double omega = 0.07;         // object-aware weight in the fused score
  double k_pen = 0.021;        // scale-change penalty strength
  double beta = 0.7;           // scale smoothing weight
  double omega_online = 0.5;   // online score weight (used only with a provider)
  double window_weight = 0.3;  // cosine window prior blend
  // Evaluate the penalty as exp(+k * change) instead of exp(-k * (change - 1)).
  bool literal_penalty = false;
  double min_size = 4.0;

  void validate() const {
    auto unit = [](double v, const char* key) {
      if (!(v >= 0 && v <= 1)) throw ConfigError(std::string(key) + " must lie in [0,1]");
    };
    unit(omega, "track.omega");
    unit(beta, "track.beta");
    unit(omega_online, "track.omega_online");
    unit(window_weight, "track.window_weight");
    if (!(k_pen >= 0)) throw ConfigError("track.k_pen must be >= 0");
    if (!(min_size > 0)) throw ConfigError("track.min_size must be positive");
  }
};

/// p_cls = omega * p_o + (1 - omega) * p_r
inline Tensor<double> fuse_scores(const Tensor<double>& p_o, const Tensor<double>& p_r,
                                  double omega) {
  if (p_o.size() != p_r.size()) {
    throw ShapeError("fuse_scores: " + shape_string(p_o.shape()) + " vs " +
                     shape_string(p_r.shape()));
  }
  Tensor<double> out(p_r.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = omega * p_o[i] + (1 - omega) * p_r[i];
  return out;
}

/// Multiplicative suppression of aspect-ratio and size changes. alpha = 1 for
/// no change and decreases with the change product.
inline double penalty(double r, double r_prev, double s, double s_prev, double k_pen,
                      bool literal = false) {
  if (!(r > 0) || !(r_prev > 0) || !(s > 0) || !(s_prev > 0)) {
    throw UsageError("penalty: ratios and sizes must be positive");
  }
  const double change = std::max(r / r_prev, r_prev / r) * std::max(s / s_prev, s_prev / s);
  return literal ? std::exp(k_pen * change) : std::exp(-k_pen * (change - 1.0));
}

/// beta * s_new + (1 - beta) * s_prev
inline double smooth_scale(double s_new, double s_prev, double beta) {
  return beta * s_new + (1 - beta) * s_prev;
}

/// p = omega' * p_onl + (1 - omega') * p_cls_hat
inline Tensor<double> fuse_online(const Tensor<double>& p_onl, const Tensor<double>& p_cls_hat,
                                  double omega_online) {
  if (p_onl.size() != p_cls_hat.size()) {
    throw ShapeError("fuse_online: " + shape_string(p_onl.shape()) + " vs " +
                     shape_string(p_cls_hat.shape()));
  }
  Tensor<double> out(p_cls_hat.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = omega_online * p_onl[i] + (1 - omega_online) * p_cls_hat[i];
  }
  return out;
}

/// Size of the context-padded square around a w x h box: sqrt((w+p)(h+p)), p = (w+h)/2.
inline double context_size(double w, double h) {
  const double p = (w + h) / 2;
  return std::sqrt((w + p) * (h + p));
}

inline Tensor<double> hanning_window(std::size_t h, std::size_t w) {
  auto hann = [](std::size_t n) {
    std::vector<double> v(n, 1.0);
    if (n > 1) {
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i + 1) /
                                    static_cast<double>(n + 1));
      }
    }
    return v;
  };
  const auto hy = hann(h), hx = hann(w);
  Tensor<double> out({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out(i, j) = hy[i] * hx[j];
  }
  return out;
}

struct Peak {
  std::size_t i = 0;
  std::size_t j = 0;
  Tensor<double> score;  // final map the peak was taken from
};

/// Normalises the fused map by its maximum, blends in the window prior and
/// returns the first maximal cell in row-major order.
inline Peak select_peak(const Tensor<double>& fused, const Tensor<double>& window,
                        double window_weight) {
  if (fused.size() != window.size() || fused.rank() != 2) {
    throw ShapeError("select_peak: score " + shape_string(fused.shape()) + " vs window " +
                     shape_string(window.shape()));
  }
  const double top = *std::max_element(fused.data().begin(), fused.data().end());
  Peak peak{0, 0, Tensor<double>(fused.shape())};
  double best = -INFINITY;
  for (std::size_t c = 0; c < fused.size(); ++c) {
    const double v = top > 0 ? fused[c] / top : fused[c];
    const double s = (1 - window_weight) * v + window_weight * window[c];
    peak.score[c] = s;
    if (s > best) {
      best = s;
      peak.i = c / fused.dim(1);
      peak.j = c % fused.dim(1);
    }
  }
  return peak;
}

/// Where a search crop sits in the frame: centre, side length in frame pixels
/// and the crop-pixels-per-frame-pixel scale.
struct SearchRegion {
  double cx = 0;
  double cy = 0;
  double side = 0;
  double scale = 1;
  std::size_t crop_size = 0;

  double to_frame_x(double crop_x) const {
    return cx + (crop_x - static_cast<double>(crop_size) / 2) / scale;
  }
  double to_frame_y(double crop_y) const {
    return cy + (crop_y - static_cast<double>(crop_size) / 2) / scale;
  }
  double to_crop_x(double frame_x) const {
    return (frame_x - cx) * scale + static_cast<double>(crop_size) / 2;
  }
  double to_crop_y(double frame_y) const {
    return (frame_y - cy) * scale + static_cast<double>(crop_size) / 2;
  }
};

/// Source of an external score map fused with the offline classifier.
class OnlineScoreProvider {
 public:
  virtual ~OnlineScoreProvider() = default;
  /// Score map with the same shape as the classification map, values in [0,1].
  virtual Tensor<double> score(const Image& frame, const SearchRegion& region,
                               const GridSpec& grid) = 0;
};

/// Score maps of one search crop, all [H,W], plus distances [4,H,W] in crop pixels.
struct ScoreMaps {
  Tensor<double> p_o;
  Tensor<double> p_r;
  Tensor<double> distances;
};

struct Localization {
  BBox box;
  std::size_t cell_i = 0;
  std::size_t cell_j = 0;
  Tensor<double> score;
};

/// Turns one set of score maps into the next target box (frame pixels).
/// `p_onl`, when present, is fused after the penalty.
inline Localization localize(const ScoreMaps& maps, const GridSpec& grid,
                             const SearchRegion& region, const BBox& prev, const TrackHyper& hyper,
                             const Tensor<double>* p_onl = nullptr) {
  const std::size_t h = grid.height, w = grid.width, cells = h * w;
  const Tensor<double> boxes = decode_boxes(maps.distances, grid);
  const Tensor<double> p_cls =
      fuse_scores(maps.p_o.reshaped({h, w}), maps.p_r.reshaped({h, w}), hyper.omega);

  const double prev_w = prev.width() * region.scale, prev_h = prev.height() * region.scale;
  const double r_prev = prev_w / prev_h;
  const double s_prev = context_size(prev_w, prev_h);
  Tensor<double> p_hat({h, w});
  for (std::size_t c = 0; c < cells; ++c) {
    const double bw = std::max(boxes[2 * cells + c] - boxes[c], 1e-6);
    const double bh = std::max(boxes[3 * cells + c] - boxes[cells + c], 1e-6);
    const double alpha =
        penalty(bw / bh, r_prev, context_size(bw, bh), s_prev, hyper.k_pen, hyper.literal_penalty);
    p_hat[c] = alpha * p_cls[c];
  }
  const Tensor<double> fused = p_onl ? fuse_online(p_onl->reshaped({h, w}), p_hat,
                                                   hyper.omega_online)
                                     : p_hat;
  Peak peak = select_peak(fused, hanning_window(h, w), hyper.window_weight);

  const BBox crop_box = box_at(boxes, peak.i, peak.j);
  const double cx = region.to_frame_x(crop_box.cx());
  const double cy = region.to_frame_y(crop_box.cy());
  const double new_w = crop_box.width() / region.scale;
  const double new_h = crop_box.height() / region.scale;
  const double bw = smooth_scale(new_w, prev.width(), hyper.beta);
  const double bh = smooth_scale(new_h, prev.height(), hyper.beta);
  return {BBox::from_center(cx, cy, bw, bh), peak.i, peak.j, std::move(peak.score)};
}

/// Per-sequence tracker. Parameters are shared read-only; everything mutable
/// lives in the instance.
template <typename T = double>
class Tracker {
 public:
  Tracker(NetConfig cfg, std::shared_ptr<const ModelParams<T>> params, TrackHyper hyper = {})
      : net_(std::move(cfg)), params_(std::move(params)), hyper_(hyper) {
    hyper_.validate();
    check_params(*params_, net_.config());
  }

  void set_online_provider(std::shared_ptr<OnlineScoreProvider> provider) {
    provider_ = std::move(provider);
  }

  const TrackHyper& hyper() const { return hyper_; }
  const BBox& box() const { return prev_box_; }
  const Tensor<T>& exemplar_feature() const { return exemplar_feature_; }
  bool initialized() const { return initialized_; }
  double prev_ratio() const { return prev_ratio_; }
  double prev_size() const { return prev_size_; }

  void init(const Image& frame, const BBox& box) {
    if (!box.valid() || box.degenerate()) {
      throw UsageError("tracker init: box " + to_string(box) + " has no area");
    }
    const BBox b = clip_to_frame(box, frame);
    const auto& cfg = net_.config();
    const double s_z = context_size(b.width(), b.height());
    ad::Graph<T> g;
    auto p = bind_backbone(g);
    auto crop = g.constant(crop_and_resize<T>(frame, b.cx(), b.cy(), s_z, cfg.exemplar_size));
    exemplar_feature_ = net_.backbone(p, crop).value();
    set_prev(b);
    initialized_ = true;
  }

  /// Search region for the next frame, derived from the previous box.
  SearchRegion search_region() const {
    const auto& cfg = net_.config();
    const double s_z = context_size(prev_box_.width(), prev_box_.height());
    const double s_x =
        s_z * static_cast<double>(cfg.search_size) / static_cast<double>(cfg.exemplar_size);
    return {prev_box_.cx(), prev_box_.cy(), s_x,
            static_cast<double>(cfg.search_size) / s_x, cfg.search_size};
  }

  /// Raw network outputs for a search crop of `frame` around the previous box.
  ScoreMaps score(const Image& frame, const SearchRegion& region) const {
    const auto& cfg = net_.config();
    ad::Graph<T> g;
    auto p = bind_constants(g, *params_);
    auto crop = g.constant(crop_and_resize<T>(frame, region.cx, region.cy, region.side,
                                              cfg.search_size));
    auto f_e = g.constant(exemplar_feature_);
    auto f_s = net_.backbone(p, crop);
    auto out = net_.heads(p, net_.combine(p, f_e, f_s));
    const std::size_t h = out.p_r.value().dim(1), w = out.p_r.value().dim(2);
    return {out.p_o.value().template cast<double>().reshaped({h, w}),
            out.p_r.value().template cast<double>().reshaped({h, w}),
            out.distances.value().template cast<double>()};
  }

  Localization step(const Image& frame) {
    if (!initialized_) throw UsageError("track_step before init");
    const SearchRegion region = search_region();
    const ScoreMaps maps = score(frame, region);
    GridSpec grid = net_.config().score_grid();
    grid.height = maps.p_r.dim(0);
    grid.width = maps.p_r.dim(1);
    std::optional<Tensor<double>> online;
    if (provider_) online = provider_->score(frame, region, grid);
    Localization loc =
        localize(maps, grid, region, prev_box_, hyper_, online ? &*online : nullptr);
    loc.box = clip_to_frame(loc.box, frame);
    set_prev(loc.box);
    return loc;
  }

  BBox track(const Image& frame) { return step(frame).box; }

 private:
  BoundParams<T> bind_backbone(ad::Graph<T>& g) const {
    BoundParams<T> p;
    for (const auto& [name, t] : *params_) {
      if (is_backbone_param(name)) p.emplace(name, g.constant(t));
    }
    return p;
  }

  BBox clip_to_frame(const BBox& b, const Image& frame) const {
    const double fw = static_cast<double>(frame.width), fh = static_cast<double>(frame.height);
    const double w = std::clamp(b.width(), hyper_.min_size, fw);
    const double h = std::clamp(b.height(), hyper_.min_size, fh);
    const double cx = std::clamp(b.cx(), 0.0, fw);
    const double cy = std::clamp(b.cy(), 0.0, fh);
    return BBox::from_center(cx, cy, w, h);
  }

  void set_prev(const BBox& b) {
    prev_box_ = b;
    prev_ratio_ = b.width() / b.height();
    prev_size_ = context_size(b.width(), b.height());
  }

  Network<T> net_;
  std::shared_ptr<const ModelParams<T>> params_;
  TrackHyper hyper_;
  std::shared_ptr<OnlineScoreProvider> provider_;
  Tensor<T> exemplar_feature_;
  BBox prev_box_;
  double prev_ratio_ = 1;
  double prev_size_ = 1;
  bool initialized_ = false;
};

}  // namespace ocean
