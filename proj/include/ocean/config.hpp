#pragma once

// Run configuration: flat `key = value` lines with section prefixes
// (net., train., track., scene., run.). '#' starts a comment.

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/network.hpp"
#include "ocean/synthetic.hpp"
#include "ocean/tracker.hpp"
#include "ocean/train.hpp"

namespace ocean {

enum class SceneKind { custom, easy, hard };
enum class Precision { f64, f32 };

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  TrackHyper track;
  SyntheticSceneConfig scene;
  SceneKind scene_kind = SceneKind::custom;
  std::size_t scene_count = 1;
  Precision precision = Precision::f64;
  std::uint64_t seed = 1;

  /// Applies the run seed to training and scene generation.
  void set_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    scene.seed = s;
  }

  /// Scene config of the k-th generated sequence.
  SyntheticSceneConfig scene_config(std::size_t k) const {
    const std::uint64_t s = seed + k;
    switch (scene_kind) {
      case SceneKind::easy: return easy_scene(s, scene.length);
      case SceneKind::hard: return hard_scene(s, scene.length);
      case SceneKind::custom: break;
    }
    SyntheticSceneConfig c = scene;
    c.seed = s;
    return c;
  }

  void validate() const {
    net.validate();
    train.validate();
    track.validate();
    scene.validate();
    if (scene_count == 0) throw ConfigError("scene.count must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(trim(item));
  return parts;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field num(M RunConfig::*section, auto M::*member) {
  using N = std::remove_cvref_t<decltype(std::declval<M>().*member)>;
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_number<N>(k, v);
          },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt((c.*section).*member);
            else return std::to_string((c.*section).*member);
          }};
}

template <typename M>
Field flag(M RunConfig::*section, bool M::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_bool(k, v);
          },
          [=](const RunConfig& c) { return std::string((c.*section).*member ? "true" : "false"); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    using R = RunConfig;
    std::map<std::string, Field> f;
    // net
    f["net.backbone_channels"] = {
        [](R& c, const std::string& k, const std::string& v) {
          c.net.backbone_channels.clear();
          for (const auto& p : split(v, ',')) c.net.backbone_channels.push_back(parse_number<std::size_t>(k, p));
        },
        [](const R& c) { return join_sizes(c.net.backbone_channels); }};
    f["net.dilations"] = {
        [](R& c, const std::string& k, const std::string& v) {
          c.net.dilations.clear();
          for (const auto& p : split(v, ',')) {
            const auto xy = split(p, 'x');
            if (xy.size() != 2) throw ConfigError(k + ": expected entries like 1x2, got '" + p + "'");
            c.net.dilations.push_back({parse_number<std::size_t>(k, xy[0]), parse_number<std::size_t>(k, xy[1])});
          }
        },
        [](const R& c) {
          std::string s;
          for (std::size_t i = 0; i < c.net.dilations.size(); ++i) {
            s += (i ? "," : "") + std::to_string(c.net.dilations[i].x) + "x" +
                 std::to_string(c.net.dilations[i].y);
          }
          return s;
        }};
    f["net.combined_channels"] = num(&R::net, &NetConfig::combined_channels);
    f["net.head_channels"] = num(&R::net, &NetConfig::head_channels);
    f["net.tower_depth"] = num(&R::net, &NetConfig::tower_depth);
    f["net.kernel"] = num(&R::net, &NetConfig::kernel);
    f["net.exemplar_size"] = num(&R::net, &NetConfig::exemplar_size);
    f["net.search_size"] = num(&R::net, &NetConfig::search_size);
    f["net.oa_kernel"] = num(&R::net, &NetConfig::oa_kernel);
    f["net.couple_offsets"] = flag(&R::net, &NetConfig::couple_offsets);
    f["net.distance_clamp"] = num(&R::net, &NetConfig::distance_clamp);
    f["net.cls_bias_init"] = num(&R::net, &NetConfig::cls_bias_init);
    f["net.normalize_xcorr"] = flag(&R::net, &NetConfig::normalize_xcorr);
    f["net.center_xcorr"] = flag(&R::net, &NetConfig::center_xcorr);
    // train
    f["train.epochs"] = num(&R::train, &TrainConfig::epochs);
    f["train.pairs_per_epoch"] = num(&R::train, &TrainConfig::pairs_per_epoch);
    f["train.batch_size"] = num(&R::train, &TrainConfig::batch_size);
    f["train.freeze_epochs"] = num(&R::train, &TrainConfig::freeze_epochs);
    f["train.warmup_lr"] = num(&R::train, &TrainConfig::warmup_lr);
    f["train.peak_lr"] = num(&R::train, &TrainConfig::peak_lr);
    f["train.floor_lr"] = num(&R::train, &TrainConfig::floor_lr);
    f["train.momentum"] = num(&R::train, &TrainConfig::momentum);
    f["train.weight_decay"] = num(&R::train, &TrainConfig::weight_decay);
    f["train.grad_clip"] = num(&R::train, &TrainConfig::grad_clip);
    f["train.max_frame_gap"] = num(&R::train, &TrainConfig::max_frame_gap);
    f["train.shift_jitter"] = num(&R::train, &TrainConfig::shift_jitter);
    f["train.scale_jitter"] = num(&R::train, &TrainConfig::scale_jitter);
    f["train.label_radius"] = num(&R::train, &TrainConfig::label_radius);
    f["train.hard_fraction"] = num(&R::train, &TrainConfig::hard_fraction);
    f["train.scene_length"] = num(&R::train, &TrainConfig::scene_length);
    f["train.lambda1"] = {[](R& c, const std::string& k, const std::string& v) {
                            c.train.loss.lambda1 = parse_number<double>(k, v);
                          },
                          [](const R& c) { return fmt(c.train.loss.lambda1); }};
    f["train.lambda2"] = {[](R& c, const std::string& k, const std::string& v) {
                            c.train.loss.lambda2 = parse_number<double>(k, v);
                          },
                          [](const R& c) { return fmt(c.train.loss.lambda2); }};
    f["train.reg_sum"] = {[](R& c, const std::string& k, const std::string& v) {
                            c.train.loss.reg_sum = parse_bool(k, v);
                          },
                          [](const R& c) { return std::string(c.train.loss.reg_sum ? "true" : "false"); }};
    // track
    f["track.omega"] = num(&R::track, &TrackHyper::omega);
    f["track.k_pen"] = num(&R::track, &TrackHyper::k_pen);
    f["track.beta"] = num(&R::track, &TrackHyper::beta);
    f["track.omega_online"] = num(&R::track, &TrackHyper::omega_online);
    f["track.window_weight"] = num(&R::track, &TrackHyper::window_weight);
    f["track.literal_penalty"] = flag(&R::track, &TrackHyper::literal_penalty);
    f["track.min_size"] = num(&R::track, &TrackHyper::min_size);
    // scene
    f["scene.preset"] = {
        [](R& c, const std::string& k, const std::string& v) {
          if (v == "custom") c.scene_kind = SceneKind::custom;
          else if (v == "easy") c.scene_kind = SceneKind::easy;
          else if (v == "hard") c.scene_kind = SceneKind::hard;
          else throw ConfigError(k + ": expected custom, easy or hard, got '" + v + "'");
        },
        [](const R& c) {
          switch (c.scene_kind) {
            case SceneKind::easy: return std::string("easy");
            case SceneKind::hard: return std::string("hard");
            default: return std::string("custom");
          }
        }};
    f["scene.count"] = {[](R& c, const std::string& k, const std::string& v) {
                          c.scene_count = parse_number<std::size_t>(k, v);
                        },
                        [](const R& c) { return std::to_string(c.scene_count); }};
    f["scene.texture"] = {[](R& c, const std::string&, const std::string& v) {
                            c.scene.texture = parse_texture(v);
                          },
                          [](const R& c) { return texture_name(c.scene.texture); }};
    f["scene.frame_width"] = num(&R::scene, &SyntheticSceneConfig::frame_width);
    f["scene.frame_height"] = num(&R::scene, &SyntheticSceneConfig::frame_height);
    f["scene.length"] = num(&R::scene, &SyntheticSceneConfig::length);
    f["scene.target_width"] = num(&R::scene, &SyntheticSceneConfig::target_width);
    f["scene.target_height"] = num(&R::scene, &SyntheticSceneConfig::target_height);
    f["scene.start_x"] = num(&R::scene, &SyntheticSceneConfig::start_x);
    f["scene.start_y"] = num(&R::scene, &SyntheticSceneConfig::start_y);
    f["scene.velocity_x"] = num(&R::scene, &SyntheticSceneConfig::velocity_x);
    f["scene.velocity_y"] = num(&R::scene, &SyntheticSceneConfig::velocity_y);
    f["scene.scale_drift"] = num(&R::scene, &SyntheticSceneConfig::scale_drift);
    f["scene.min_target"] = num(&R::scene, &SyntheticSceneConfig::min_target);
    f["scene.max_target"] = num(&R::scene, &SyntheticSceneConfig::max_target);
    f["scene.distractors"] = num(&R::scene, &SyntheticSceneConfig::distractors);
    f["scene.occlusion_start"] = num(&R::scene, &SyntheticSceneConfig::occlusion_start);
    f["scene.occlusion_length"] = num(&R::scene, &SyntheticSceneConfig::occlusion_length);
    f["scene.noise"] = num(&R::scene, &SyntheticSceneConfig::noise);
    // run
    f["run.seed"] = {[](R& c, const std::string& k, const std::string& v) {
                       c.set_seed(parse_number<std::uint64_t>(k, v));
                     },
                     [](const R& c) { return std::to_string(c.seed); }};
    f["run.precision"] = {
        [](R& c, const std::string& k, const std::string& v) {
          if (v == "f64" || v == "double") c.precision = Precision::f64;
          else if (v == "f32" || v == "float") c.precision = Precision::f32;
          else throw ConfigError(k + ": expected f64 or f32, got '" + v + "'");
        },
        [](const R& c) { return std::string(c.precision == Precision::f32 ? "f32" : "f64"); }};
    return f;
  }();
  return table;
}

}  // namespace detail

/// Applies one key; unknown keys and unparsable values raise ConfigError
/// naming the key.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(cfg, key, value);
}

inline RunConfig parse_config(std::istream& is, const std::string& source = "config") {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  return parse_config(is, path.string());
}

/// Every key with its resolved value, one per line; parse_config reads it back.
inline std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace ocean
