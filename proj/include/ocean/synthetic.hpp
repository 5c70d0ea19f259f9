#pragma once

// Procedural video sequences with exact ground truth: a textured target
// moving at constant velocity with wall bounces and multiplicative scale
// drift over a cluttered background, optionally with distractors, an
// occluder and pixel noise. Everything is a deterministic function of the
// config (seed included).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/image.hpp"

namespace ocean {

enum class Texture { checker, stripes, rings, blocks };

inline std::string texture_name(Texture t) {
  switch (t) {
    case Texture::checker: return "checker";
    case Texture::stripes: return "stripes";
    case Texture::rings: return "rings";
    case Texture::blocks: return "blocks";
  }
  return "checker";
}

inline Texture parse_texture(const std::string& s) {
  for (auto t : {Texture::checker, Texture::stripes, Texture::rings, Texture::blocks}) {
    if (texture_name(t) == s) return t;
  }
  throw ConfigError("scene.texture: unknown texture '" + s + "'");
}

struct SyntheticSceneConfig {
  std::size_t frame_width = 192;
  std::size_t frame_height = 192;
  std::size_t length = 60;
  double target_width = 32;
  double target_height = 28;
  // Initial centre; negative means "pick from the seed".
  double start_x = -1;
  double start_y = -1;
  Texture texture = Texture::checker;
  double velocity_x = 0;
  double velocity_y = 0;
  double scale_drift = 0;  // fractional size change per frame
  double min_target = 12;
  double max_target = 80;
  std::size_t distractors = 0;
  std::size_t occlusion_start = 0;
  std::size_t occlusion_length = 0;
  double noise = 4.0;  // pixel noise std-dev on the 0-255 scale
  std::uint64_t seed = 1;

  void validate() const {
    if (frame_width < 16 || frame_height < 16) throw ConfigError("scene frame is too small");
    if (length == 0) throw ConfigError("scene.length must be positive");
    if (!(target_width > 0) || !(target_height > 0)) {
      throw ConfigError("scene target size must be positive");
    }
    if (target_width >= static_cast<double>(frame_width) ||
        target_height >= static_cast<double>(frame_height)) {
      throw ConfigError("scene target (" + std::to_string(target_width) + "x" +
                        std::to_string(target_height) + ") does not fit the frame");
    }
    if (!(min_target > 0) || min_target > max_target) {
      throw ConfigError("scene.min_target/max_target are inconsistent");
    }
    if (!(noise >= 0)) throw ConfigError("scene.noise must be >= 0");
  }
};

namespace detail {

using Rgb = std::array<double, 3>;

inline Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(20.0, 235.0);
  return {u(rng), u(rng), u(rng)};
}

/// Pattern value at normalised box coordinates (u, v) in [0,1]^2.
inline Rgb texture_color(Texture t, double u, double v, const Rgb& a, const Rgb& b) {
  bool first = true;
  switch (t) {
    case Texture::checker:
      first = ((static_cast<int>(std::floor(u * 4)) + static_cast<int>(std::floor(v * 4))) % 2) == 0;
      break;
    case Texture::stripes:
      first = static_cast<int>(std::floor((u + v) * 4)) % 2 == 0;
      break;
    case Texture::rings: {
      const double r = std::hypot(u - 0.5, v - 0.5);
      first = static_cast<int>(std::floor(r * 8)) % 2 == 0;
      break;
    }
    case Texture::blocks:
      first = (u < 0.5) != (v < 0.35);
      break;
  }
  return first ? a : b;
}

struct MovingPatch {
  double cx, cy, w, h, vx, vy;
  Texture texture;
  Rgb a, b;
};

inline void advance(double& c, double& v, double half, double limit) {
  c += v;
  if (c - half < 0) {
    c = half + (half - c);
    v = -v;
  }
  if (c + half > limit) {
    c = (limit - half) - (c + half - limit);
    v = -v;
  }
  c = std::clamp(c, half, limit - half);
}

}  // namespace detail

/// A synthetic sequence. Frames are rendered on demand.
class SyntheticSequence {
 public:
  explicit SyntheticSequence(SyntheticSceneConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const double fw = static_cast<double>(cfg_.frame_width);
    const double fh = static_cast<double>(cfg_.frame_height);

    background_a_ = detail::random_color(rng);
    background_b_ = detail::random_color(rng);
    std::uniform_real_distribution<double> ux(0.0, fw), uy(0.0, fh), usz(6.0, 30.0);
    for (int i = 0; i < 14; ++i) {
      clutter_.push_back({ux(rng), uy(rng), usz(rng), usz(rng), 0, 0, Texture::blocks,
                          detail::random_color(rng), detail::random_color(rng)});
    }
    target_a_ = detail::random_color(rng);
    target_b_ = detail::random_color(rng);

    double w = cfg_.target_width, h = cfg_.target_height;
    double cx = cfg_.start_x, cy = cfg_.start_y;
    std::uniform_real_distribution<double> start_x(w / 2 + 1, fw - w / 2 - 1);
    std::uniform_real_distribution<double> start_y(h / 2 + 1, fh - h / 2 - 1);
    const double rx = start_x(rng), ry = start_y(rng);
    if (cx < 0) cx = rx;
    if (cy < 0) cy = ry;
    cx = std::clamp(cx, w / 2, fw - w / 2);
    cy = std::clamp(cy, h / 2, fh - h / 2);

    std::uniform_real_distribution<double> uv(-2.5, 2.5);
    for (std::size_t d = 0; d < cfg_.distractors; ++d) {
      const Texture tex = static_cast<Texture>(rng() % 4);
      distractors_.push_back({start_x(rng), start_y(rng), w * (0.8 + 0.1 * static_cast<double>(d % 4)),
                              h * (0.8 + 0.1 * static_cast<double>(d % 3)), uv(rng), uv(rng), tex,
                              detail::random_color(rng), detail::random_color(rng)});
    }

    double vx = cfg_.velocity_x, vy = cfg_.velocity_y, drift = cfg_.scale_drift;
    const double max_w = std::min(cfg_.max_target, fw - 2), max_h = std::min(cfg_.max_target, fh - 2);
    for (std::size_t t = 0; t < cfg_.length; ++t) {
      gt_.push_back(BBox::from_center(cx, cy, w, h));
      if (t + 1 == cfg_.length) break;
      const double nw = w * (1 + drift), nh = h * (1 + drift);
      if (nw < cfg_.min_target || nh < cfg_.min_target || nw > max_w || nh > max_h) {
        drift = -drift;
      } else {
        w = nw;
        h = nh;
      }
      detail::advance(cx, vx, w / 2, fw);
      detail::advance(cy, vy, h / 2, fh);
    }
  }

  const SyntheticSceneConfig& config() const { return cfg_; }
  std::size_t length() const { return cfg_.length; }
  const std::vector<BBox>& ground_truth() const { return gt_; }
  const BBox& gt(std::size_t t) const { return gt_.at(t); }

  Image frame(std::size_t t) const {
    if (t >= cfg_.length) throw UsageError("frame index out of range");
    const std::size_t fw = cfg_.frame_width, fh = cfg_.frame_height;
    Image img(fw, fh);
    std::vector<double> buf(fw * fh * 3);
    for (std::size_t y = 0; y < fh; ++y) {
      for (std::size_t x = 0; x < fw; ++x) {
        const double g = (static_cast<double>(x) / static_cast<double>(fw) +
                          static_cast<double>(y) / static_cast<double>(fh)) / 2;
        for (std::size_t c = 0; c < 3; ++c) {
          buf[(y * fw + x) * 3 + c] = background_a_[c] * (1 - g) + background_b_[c] * g;
        }
      }
    }
    for (const auto& p : clutter_) paint(buf, p);

    // Distractors follow their own bouncing paths.
    for (auto d : distractors_) {
      for (std::size_t s = 0; s < t; ++s) {
        detail::advance(d.cx, d.vx, d.w / 2, static_cast<double>(fw));
        detail::advance(d.cy, d.vy, d.h / 2, static_cast<double>(fh));
      }
      paint(buf, d);
    }

    const BBox& box = gt_[t];
    paint(buf, {box.cx(), box.cy(), box.width(), box.height(), 0, 0, cfg_.texture, target_a_,
                target_b_});

    if (cfg_.occlusion_length > 0 && t >= cfg_.occlusion_start &&
        t < cfg_.occlusion_start + cfg_.occlusion_length) {
      // Covers the left half of the target.
      paint(buf, {box.x0 + box.width() / 4, box.cy(), box.width() / 2 + 2, box.height() + 4, 0, 0,
                  Texture::blocks, {128, 128, 128}, {110, 110, 110}});
    }

    std::mt19937_64 noise_rng(cfg_.seed * 1000003ULL + t);
    std::normal_distribution<double> noise(0.0, cfg_.noise);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double v = buf[i] + (cfg_.noise > 0 ? noise(noise_rng) : 0.0);
      img.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return img;
  }

 private:
  void paint(std::vector<double>& buf, const detail::MovingPatch& p) const {
    const std::size_t fw = cfg_.frame_width, fh = cfg_.frame_height;
    const double x0 = p.cx - p.w / 2, y0 = p.cy - p.h / 2;
    const auto xa = static_cast<std::ptrdiff_t>(std::floor(x0));
    const auto ya = static_cast<std::ptrdiff_t>(std::floor(y0));
    const auto xb = static_cast<std::ptrdiff_t>(std::ceil(x0 + p.w));
    const auto yb = static_cast<std::ptrdiff_t>(std::ceil(y0 + p.h));
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(ya, 0);
         y < std::min<std::ptrdiff_t>(yb, static_cast<std::ptrdiff_t>(fh)); ++y) {
      const double py = static_cast<double>(y) + 0.5;
      if (py < y0 || py > y0 + p.h) continue;
      for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(xa, 0);
           x < std::min<std::ptrdiff_t>(xb, static_cast<std::ptrdiff_t>(fw)); ++x) {
        const double px = static_cast<double>(x) + 0.5;
        if (px < x0 || px > x0 + p.w) continue;
        const auto col = detail::texture_color(p.texture, (px - x0) / p.w, (py - y0) / p.h, p.a, p.b);
        for (std::size_t c = 0; c < 3; ++c) {
          buf[(static_cast<std::size_t>(y) * fw + static_cast<std::size_t>(x)) * 3 + c] = col[c];
        }
      }
    }
  }

  SyntheticSceneConfig cfg_;
  detail::Rgb background_a_{}, background_b_{}, target_a_{}, target_b_{};
  std::vector<detail::MovingPatch> clutter_;
  std::vector<detail::MovingPatch> distractors_;
  std::vector<BBox> gt_;
};

/// Fully materialised sequence.
struct Sequence {
  std::vector<Image> frames;
  std::vector<BBox> gt;
};

inline Sequence gen_sequence(const SyntheticSceneConfig& cfg) {
  SyntheticSequence s(cfg);
  Sequence out;
  for (std::size_t t = 0; t < s.length(); ++t) out.frames.push_back(s.frame(t));
  out.gt = s.ground_truth();
  return out;
}

/// Easy scenes: constant velocity <= 3 px/frame, scale drift <= 1 %/frame,
/// no distractors or occlusion.
inline SyntheticSceneConfig easy_scene(std::uint64_t seed, std::size_t length = 60) {
  std::mt19937_64 rng(seed * 7919ULL + 17);
  std::uniform_real_distribution<double> speed(0.5, 3.0), angle(0.0, 2 * 3.14159265358979),
      size(24.0, 40.0), aspect(0.75, 1.33), drift(-0.01, 0.01);
  SyntheticSceneConfig c;
  c.length = length;
  c.seed = seed;
  const double s = size(rng), a = aspect(rng);
  c.target_width = s * std::sqrt(a);
  c.target_height = s / std::sqrt(a);
  const double v = speed(rng), th = angle(rng);
  c.velocity_x = v * std::cos(th);
  c.velocity_y = v * std::sin(th);
  // Per-axis speed bounded by the overall speed.
  c.scale_drift = drift(rng);
  c.texture = static_cast<Texture>(rng() % 4);
  c.noise = 3.0;
  return c;
}

/// Hard scenes: faster motion, stronger scale drift, distractors, occlusion
/// and heavier noise.
inline SyntheticSceneConfig hard_scene(std::uint64_t seed, std::size_t length = 60) {
  std::mt19937_64 rng(seed * 104729ULL + 3);
  std::uniform_real_distribution<double> speed(2.0, 5.0), angle(0.0, 2 * 3.14159265358979),
      size(20.0, 44.0), aspect(0.6, 1.6), drift(-0.02, 0.02);
  SyntheticSceneConfig c;
  c.length = length;
  c.seed = seed;
  const double s = size(rng), a = aspect(rng);
  c.target_width = s * std::sqrt(a);
  c.target_height = s / std::sqrt(a);
  const double v = speed(rng), th = angle(rng);
  c.velocity_x = v * std::cos(th);
  c.velocity_y = v * std::sin(th);
  c.scale_drift = drift(rng);
  c.texture = static_cast<Texture>(rng() % 4);
  c.distractors = 1 + rng() % 3;
  c.occlusion_start = 15 + rng() % 20;
  c.occlusion_length = 4 + rng() % 6;
  c.noise = 8.0;
  return c;
}

}  // namespace ocean
