#pragma once

// Desk-scale training: pair sampling from synthetic sequences, momentum SGD
// with a frozen-backbone warmup and an exponentially decaying learning rate.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/image.hpp"
#include "ocean/labels.hpp"
#include "ocean/losses.hpp"
#include "ocean/network.hpp"
#include "ocean/synthetic.hpp"
#include "ocean/tracker.hpp"
#include "ocean/weights_io.hpp"

namespace ocean {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t pairs_per_epoch = 2000;
  std::size_t batch_size = 16;
  std::size_t freeze_epochs = 1;
  double warmup_lr = 1e-3;
  double peak_lr = 1e-2;
  double floor_lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double grad_clip = 10.0;  // global L2 norm of the averaged gradient; 0 disables
  // Pair sampling
  std::size_t max_frame_gap = 60;
  double shift_jitter = 20.0;  // max search-centre shift, search-crop pixels
  double scale_jitter = 0.15;  // max |log| scale change of the search crop
  double label_radius = 16.0;  // search-crop pixels
  double hard_fraction = 0.3;  // share of pairs drawn from hard scenes
  std::size_t scene_length = 60;
  LossWeights loss;
  std::uint64_t seed = 1;

  std::size_t steps_per_epoch() const {
    return (pairs_per_epoch + batch_size - 1) / batch_size;
  }
  std::size_t total_steps() const { return epochs * steps_per_epoch(); }

  void validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (pairs_per_epoch == 0) throw ConfigError("train.pairs_per_epoch must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (freeze_epochs > epochs) throw ConfigError("train.freeze_epochs exceeds train.epochs");
    if (!(warmup_lr >= 0) || !(peak_lr >= 0) || !(floor_lr >= 0)) {
      throw ConfigError("train learning rates must be >= 0");
    }
    if (floor_lr > peak_lr) throw ConfigError("train.floor_lr must not exceed train.peak_lr");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0,1)");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip must be >= 0");
    if (!(shift_jitter >= 0)) throw ConfigError("train.shift_jitter must be >= 0");
    if (!(scale_jitter >= 0 && scale_jitter < 1)) {
      throw ConfigError("train.scale_jitter must lie in [0,1)");
    }
    if (!(label_radius > 0)) throw ConfigError("train.label_radius must be positive");
    if (!(hard_fraction >= 0 && hard_fraction <= 1)) {
      throw ConfigError("train.hard_fraction must lie in [0,1]");
    }
    if (scene_length < 2) throw ConfigError("train.scene_length must be >= 2");
    loss.validate();
  }
};

/// Learning rate at a global step: constant warmup_lr during the frozen
/// epochs, then exponential decay from peak_lr to floor_lr.
inline double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const std::size_t warm = cfg.freeze_epochs * cfg.steps_per_epoch();
  if (step < warm) return cfg.warmup_lr;
  const std::size_t decay_steps = cfg.total_steps() - warm;
  if (decay_steps <= 1 || cfg.peak_lr == 0) return cfg.peak_lr;
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(decay_steps - 1);
  if (cfg.floor_lr == 0) return cfg.peak_lr * (1 - progress);
  return cfg.peak_lr * std::pow(cfg.floor_lr / cfg.peak_lr, std::min(progress, 1.0));
}

/// One exemplar/search pair with its targets on the score grid.
template <typename T>
struct TrainSample {
  Tensor<T> exemplar;  // [3, exemplar_size, exemplar_size]
  Tensor<T> search;    // [3, search_size, search_size]
  BBox target;         // ground truth in search-crop pixels
  LabelBundle labels;
};

/// Builds a sample from two frames of one sequence. The search crop is taken
/// around the target's true position displaced by (dx, dy) frame pixels and
/// with its side multiplied by `zoom`.
template <typename T>
TrainSample<T> make_sample(const NetConfig& net, const Image& f_exemplar, const BBox& b_exemplar,
                           const Image& f_search, const BBox& b_search, double dx, double dy,
                           double zoom, double label_radius) {
  TrainSample<T> s;
  const double s_z = context_size(b_exemplar.width(), b_exemplar.height());
  s.exemplar = crop_and_resize<T>(f_exemplar, b_exemplar.cx(), b_exemplar.cy(), s_z,
                                  net.exemplar_size);
  const double s_x = context_size(b_search.width(), b_search.height()) *
                     static_cast<double>(net.search_size) /
                     static_cast<double>(net.exemplar_size) * zoom;
  const SearchRegion region{b_search.cx() + dx, b_search.cy() + dy, s_x,
                            static_cast<double>(net.search_size) / s_x, net.search_size};
  s.search = crop_and_resize<T>(f_search, region.cx, region.cy, region.side, net.search_size);
  s.target = {region.to_crop_x(b_search.x0), region.to_crop_y(b_search.y0),
              region.to_crop_x(b_search.x1), region.to_crop_y(b_search.y1)};
  s.labels = make_labels(s.target, net.score_grid(), label_radius);
  return s;
}

/// Deterministic pair sampler: sample k of a run depends only on (seed, k).
template <typename T>
class PairSampler {
 public:
  PairSampler(NetConfig net, TrainConfig cfg) : net_(std::move(net)), cfg_(std::move(cfg)) {}

  TrainSample<T> sample(std::uint64_t index) const {
    std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + index * 0xBF58476D1CE4E5B9ULL + 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      const std::uint64_t scene_seed = rng();
      const bool hard = unit(rng) < cfg_.hard_fraction;
      SyntheticSceneConfig scene = hard ? hard_scene(scene_seed, cfg_.scene_length)
                                        : easy_scene(scene_seed, cfg_.scene_length);
      SyntheticSequence seq(scene);
      const std::size_t n = seq.length();
      const std::size_t t1 = rng() % n;
      const std::size_t lo = t1 > cfg_.max_frame_gap ? t1 - cfg_.max_frame_gap : 0;
      const std::size_t hi = std::min(n - 1, t1 + cfg_.max_frame_gap);
      const std::size_t t2 = lo + rng() % (hi - lo + 1);

      const BBox& b2 = seq.gt(t2);
      const double s_x = context_size(b2.width(), b2.height()) *
                         static_cast<double>(net_.search_size) /
                         static_cast<double>(net_.exemplar_size);
      const double px_per_crop = s_x / static_cast<double>(net_.search_size);
      std::uniform_real_distribution<double> shift(-cfg_.shift_jitter, cfg_.shift_jitter);
      std::uniform_real_distribution<double> logz(-cfg_.scale_jitter, cfg_.scale_jitter);
      const double dx = shift(rng) * px_per_crop;
      const double dy = shift(rng) * px_per_crop;
      const double zoom = std::exp(logz(rng));
      auto s = make_sample<T>(net_, seq.frame(t1), seq.gt(t1), seq.frame(t2), b2, dx, dy, zoom,
                              cfg_.label_radius);
      double positives = 0;
      for (double v : s.labels.reg_mask.data()) positives += v;
      if (positives > 0 || attempt >= 16) return s;
    }
  }

 private:
  NetConfig net_;
  TrainConfig cfg_;
};

struct StepLosses {
  double reg = 0;
  double objectaware = 0;
  double regular = 0;
  double total = 0;
};

struct HistoryRow {
  std::size_t step = 0;
  double lr = 0;
  StepLosses loss;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write " + path.string());
  os << "step,lr,l_reg,l_o,l_r,total\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr << ',' << r.loss.reg << ',' << r.loss.objectaware << ','
       << r.loss.regular << ',' << r.loss.total << '\n';
  }
  if (!os) throw ArtifactError("failed writing " + path.string());
}

/// Parameters plus momentum buffers; applies batch-averaged SGD steps.
template <typename T>
class Trainer {
 public:
  Trainer(NetConfig net, TrainConfig cfg, ModelParams<T> params)
      : net_(std::move(net)), cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    check_params(params_, net_.config());
    for (const auto& [name, t] : params_) velocity_.emplace(name, Tensor<T>(t.shape()));
  }

  const ModelParams<T>& params() const { return params_; }
  const NetConfig& net_config() const { return net_.config(); }
  const TrainConfig& config() const { return cfg_; }
  /// Norm of the batch-averaged gradient of the most recent step, before clipping.
  double last_grad_norm() const { return last_grad_norm_; }

  /// Loss terms and parameter gradients of one sample (no update).
  StepLosses sample_gradients(const TrainSample<T>& s, bool freeze_backbone,
                              ModelParams<T>& grads) const {
    ad::Graph<T> g;
    auto frozen = [&](const std::string& name) { return freeze_backbone && is_backbone_param(name); };
    auto p = bind_params(g, params_, frozen);
    auto out = net_.forward(p, g.constant(s.exemplar), g.constant(s.search));
    LabelBundle labels = s.labels;
    fill_objectaware_labels(labels, out.distances.value(), net_.config().score_grid(), s.target);
    auto terms = sample_losses(out, labels, cfg_.loss);
    const StepLosses losses{scalar(terms.reg), scalar(terms.objectaware), scalar(terms.regular),
                            scalar(terms.total)};
    g.backward(terms.total);
    for (const auto& [name, var] : p) {
      if (!g.requires_grad(var)) continue;
      auto& dst = grads.at(name);
      const Tensor<T> src = g.grad(var);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    return losses;
  }

  /// One momentum-SGD step on the batch: v = mu*v + (g + wd*theta), theta -= lr*v.
  StepLosses step(const std::vector<TrainSample<T>>& batch, double lr, bool freeze_backbone) {
    if (batch.empty()) throw UsageError("train step on an empty batch");
    ModelParams<T> grads;
    for (const auto& [name, t] : params_) grads.emplace(name, Tensor<T>(t.shape()));
    StepLosses mean;
    for (const auto& s : batch) {
      const auto l = sample_gradients(s, freeze_backbone, grads);
      mean.reg += l.reg;
      mean.objectaware += l.objectaware;
      mean.regular += l.regular;
      mean.total += l.total;
    }
    const double n = static_cast<double>(batch.size());
    mean.reg /= n;
    mean.objectaware /= n;
    mean.regular /= n;
    mean.total /= n;
    if (!std::isfinite(mean.total)) throw NumericError("training loss is not finite");

    double sq = 0;
    for (const auto& [name, gsum] : grads) {
      if (freeze_backbone && is_backbone_param(name)) continue;
      for (T v : gsum.data()) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(sq) / n;
    last_grad_norm_ = norm;
    const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    const T inv_n = static_cast<T>(clip / n);
    const T mu = static_cast<T>(cfg_.momentum), wd = static_cast<T>(cfg_.weight_decay);
    const T rate = static_cast<T>(lr);
    ModelParams<T> next_theta, next_v;
    for (const auto& [name, theta] : params_) {
      if (freeze_backbone && is_backbone_param(name)) continue;
      Tensor<T> th = theta, v = velocity_.at(name);
      const auto& gsum = grads.at(name);
      for (std::size_t i = 0; i < th.size(); ++i) {
        v[i] = mu * v[i] + (gsum[i] * inv_n + wd * th[i]);
        th[i] -= rate * v[i];
      }
      if (!all_finite(th)) throw NumericError("parameter '" + name + "' diverged");
      next_theta.emplace(name, std::move(th));
      next_v.emplace(name, std::move(v));
    }
    // Committed only once every tensor is finite.
    for (auto& [name, th] : next_theta) params_.at(name) = std::move(th);
    for (auto& [name, v] : next_v) velocity_.at(name) = std::move(v);
    return mean;
  }

 private:
  double last_grad_norm_ = 0;

  static double scalar(ad::Var<T> v) { return static_cast<double>(v.value()[0]); }

  Network<T> net_;
  TrainConfig cfg_;
  ModelParams<T> params_;
  ModelParams<T> velocity_;
};

struct TrainResult {
  ModelParams<double> params;
  std::vector<HistoryRow> history;
};

struct TrainHooks {
  // Written with the last finite parameters when training diverges.
  std::filesystem::path checkpoint_on_failure;
  std::function<void(const HistoryRow&)> on_step;
};

/// Full schedule. Parameters are initialised from cfg.seed unless `init` is given.
template <typename T = double>
TrainResult train(const NetConfig& net, const TrainConfig& cfg, const TrainHooks& hooks = {},
                  const ModelParams<double>* init = nullptr) {
  net.validate();
  cfg.validate();
  ModelParams<T> start;
  if (init) {
    for (const auto& [name, t] : *init) start.emplace(name, t.template cast<T>());
  } else {
    start = init_params<T>(net, cfg.seed);
  }
  Trainer<T> trainer(net, cfg, std::move(start));
  PairSampler<T> sampler(net, cfg);
  TrainResult result;
  const std::size_t spe = cfg.steps_per_epoch();
  std::uint64_t next_pair = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool freeze = epoch < cfg.freeze_epochs;
    for (std::size_t k = 0; k < spe; ++k) {
      const std::size_t step = epoch * spe + k;
      const std::size_t remaining = cfg.pairs_per_epoch - k * cfg.batch_size;
      std::vector<TrainSample<T>> batch;
      for (std::size_t b = 0; b < std::min(cfg.batch_size, remaining); ++b) {
        batch.push_back(sampler.sample(next_pair++));
      }
      const double lr = learning_rate(cfg, step);
      StepLosses losses;
      try {
        losses = trainer.step(batch, lr, freeze);
      } catch (const NumericError&) {
        if (!hooks.checkpoint_on_failure.empty()) {
          // A failing step never commits, so these are the last finite parameters.
          ModelParams<double> good;
          for (const auto& [name, t] : trainer.params()) good.emplace(name, t.template cast<double>());
          save_weights(hooks.checkpoint_on_failure, good);
        }
        throw;
      }
      result.history.push_back({step, lr, losses});
      if (hooks.on_step) hooks.on_step(result.history.back());
    }
  }
  for (const auto& [name, t] : trainer.params()) result.params.emplace(name, t.template cast<double>());
  return result;
}

}  // namespace ocean
