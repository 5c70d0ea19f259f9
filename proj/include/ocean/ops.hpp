#pragma once

// Differentiable forward ops. Each function evaluates the op eagerly, appends
// a node to the operands' graph and returns the handle of the result.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "ocean/autodiff.hpp"
#include "ocean/kernels.hpp"

namespace ocean::ad {

namespace detail {

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw UsageError("operands belong to different graphs");
  }
  return *a.graph;
}

}  // namespace detail

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, const kernels::ConvGeometry& geo) {
  auto& g = detail::same_graph(input, weight);
  auto fwd = kernels::conv2d_forward(input.value(), weight.value(), geo);
  return g.push(OpKind::conv2d, {input.id, weight.id}, std::move(fwd.output), false,
                ConvAttrs<T>{geo, std::move(fwd.columns)});
}

/// x[C,H,W] + bias[C] broadcast over the spatial plane.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  auto& g = detail::same_graph(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || xv.rank() == 0 || bv.dim(0) != xv.dim(0)) {
    throw ShapeError("add_channel_bias: bias " + shape_string(bv.shape()) +
                     " does not match input " + shape_string(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::size_t plane = xv.size() / xv.dim(0);
  for (std::size_t c = 0; c < xv.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bv[c];
  }
  return g.push(OpKind::add_channel_bias, {x.id, bias.id}, std::move(out), false);
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return x.graph->push(OpKind::relu, {x.id}, std::move(out), false);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return x.graph->push(OpKind::sigmoid, {x.id}, std::move(out), false);
}

enum class Activation { relu, sigmoid };

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  return kind == Activation::relu ? relu(x) : sigmoid(x);
}

/// Nonnegative distance mapping: scale * exp(clamp(x, lo, hi)).
template <typename T>
Var<T> exp_distance(Var<T> x, double scale, double lo = -10.0, double hi = 10.0) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    const T c = std::clamp(v, static_cast<T>(lo), static_cast<T>(hi));
    v = static_cast<T>(scale) * std::exp(c);
  }
  return x.graph->push(OpKind::exp_distance, {x.id}, std::move(out), false,
                       ExpDistanceAttrs{scale, lo, hi});
}

template <typename T>
Var<T> depthwise_xcorr(Var<T> search, Var<T> kernel) {
  auto& g = detail::same_graph(search, kernel);
  auto out = kernels::depthwise_xcorr(search.value(), kernel.value());
  return g.push(OpKind::depthwise_xcorr, {search.id, kernel.id}, std::move(out), false);
}

/// Convolution whose taps read the feature at box-aligned fractional
/// positions. `offsets` may be a constant (detached) or a differentiable node.
template <typename T>
Var<T> aligned_conv(Var<T> feature, Var<T> weight, Var<T> offsets) {
  auto& g = detail::same_graph(feature, weight);
  detail::same_graph(feature, offsets);
  auto fwd = kernels::aligned_conv_forward(feature.value(), weight.value(), offsets.value());
  return g.push(OpKind::aligned_conv, {feature.id, weight.id, offsets.id}, std::move(fwd.output),
                false, AlignedAttrs<T>{std::move(fwd.columns), std::move(fwd.taps)});
}

/// Sampling offsets of a k x k kernel aligned to the boxes encoded by the
/// per-cell distances [4,H,W] (l,t,r,b in pixels) on a grid of the given stride.
template <typename T>
Tensor<T> box_offsets_value(const Tensor<T>& dist, double stride, std::size_t k) {
  require_rank(dist, 3, "box_offsets distances");
  if (dist.dim(0) != 4) throw ShapeError("box_offsets: expected 4 distance channels");
  const std::size_t h = dist.dim(1), w = dist.dim(2), cells = h * w;
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const double span = k > 1 ? stride * static_cast<double>(k - 1) : 1.0;
  Tensor<T> out({2 * k * k, h, w});
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const std::size_t t = ky * k + kx;
      const double p = k > 1 ? static_cast<double>(static_cast<std::ptrdiff_t>(ky) - half) : 0.0;
      const double q = k > 1 ? static_cast<double>(static_cast<std::ptrdiff_t>(kx) - half) : 0.0;
      for (std::size_t c = 0; c < cells; ++c) {
        const double l = dist[c], tp = dist[cells + c], r = dist[2 * cells + c],
                     b = dist[3 * cells + c];
        out[(2 * t) * cells + c] =
            static_cast<T>((b - tp) / (2 * stride) + p * ((tp + b) / span - 1.0));
        out[(2 * t + 1) * cells + c] =
            static_cast<T>((r - l) / (2 * stride) + q * ((l + r) / span - 1.0));
      }
    }
  }
  return out;
}

template <typename T>
Var<T> box_offsets(Var<T> dist, double stride, std::size_t k) {
  auto out = box_offsets_value(dist.value(), stride, k);
  return dist.graph->push(OpKind::box_offsets, {dist.id}, std::move(out), false,
                          BoxOffsetAttrs{stride, k});
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.push(OpKind::add, {a.id, b.id}, std::move(out), false);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.push(OpKind::mul, {a.id, b.id}, std::move(out), false);
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= static_cast<T>(factor);
  return a.graph->push(OpKind::scale, {a.id}, std::move(out), false, ScaleAttrs{factor});
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  return a.graph->push(OpKind::reshape, {a.id}, a.value().reshaped(std::move(shape)), false);
}

template <typename T>
Var<T> reduce_sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.graph->push(OpKind::reduce_sum, {a.id}, Tensor<T>({1}, s), false);
}

template <typename T>
Var<T> reduce_mean(Var<T> a) {
  if (a.value().empty()) throw UsageError("reduce_mean of an empty tensor");
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.graph->push(OpKind::reduce_mean, {a.id},
                       Tensor<T>({1}, s / static_cast<T>(a.value().size())), false);
}

/// Subtracts from every channel of a [C,H,W] tensor its spatial mean.
template <typename T>
Var<T> center_channels(Var<T> a) {
  const auto& v = a.value();
  if (v.rank() != 3 || v.dim(1) * v.dim(2) == 0) {
    throw ShapeError("center_channels: expected a non-empty [C,H,W] tensor, got " +
                     shape_string(v.shape()));
  }
  Tensor<T> out = v;
  const std::size_t plane = v.dim(1) * v.dim(2);
  for (std::size_t k = 0; k < v.dim(0); ++k) {
    T m = 0;
    for (std::size_t i = 0; i < plane; ++i) m += v[k * plane + i];
    m /= static_cast<T>(plane);
    for (std::size_t i = 0; i < plane; ++i) out[k * plane + i] -= m;
  }
  return a.graph->push(OpKind::center_channels, {a.id}, std::move(out), false);
}

// ---------------------------------------------------------------------------
// Loss nodes

/// Per-cell IoU between two boxes sharing an anchor point, given as distances
/// (l,t,r,b) from that point.
template <typename T>
T distance_iou(T l, T t, T r, T b, T lt, T tt, T rt, T bt) {
  const T inter = (std::min(l, lt) + std::min(r, rt)) * (std::min(t, tt) + std::min(b, bt));
  const T uni = (l + r) * (t + b) + (lt + rt) * (tt + bt) - inter;
  if (!(uni > T(0))) return T(0);
  return inter / uni;
}

/// -ln(IoU) over the masked cells of predicted vs target distance maps, with
/// IoU clamped to [eps, 1]; averaged (or summed) over the masked cells.
template <typename T>
Var<T> iou_loss(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask, double eps = 1e-6,
                Reduction reduction = Reduction::mean) {
  const auto& p = pred.value();
  require_rank(p, 3, "iou_loss prediction");
  require_same_shape(p, target, "iou_loss");
  if (p.dim(0) != 4 || mask.size() != p.dim(1) * p.dim(2)) {
    throw ShapeError("iou_loss: expected [4,H,W] distances and an [H,W] mask");
  }
  const std::size_t cells = mask.size();
  std::size_t count = 0;
  T total = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (!(mask[c] > T(0))) continue;
    if (p[c] < T(0) || p[cells + c] < T(0) || p[2 * cells + c] < T(0) || p[3 * cells + c] < T(0)) {
      throw UsageError("iou_loss: negative predicted distance");
    }
    ++count;
    const T iou = distance_iou(p[c], p[cells + c], p[2 * cells + c], p[3 * cells + c], target[c],
                               target[cells + c], target[2 * cells + c], target[3 * cells + c]);
    total += -std::log(std::clamp(iou, static_cast<T>(eps), T(1)));
  }
  if (count == 0) throw DegenerateInputError("iou_loss: empty regression mask");
  if (reduction == Reduction::mean) total /= static_cast<T>(count);
  return pred.graph->push(OpKind::iou_loss, {pred.id}, Tensor<T>({1}, total), false,
                          IouLossAttrs<T>{target, mask, eps, reduction});
}

/// Balanced binary cross-entropy with soft-label support. Probabilities are
/// clamped to [eps, 1-eps]; `pred` may be [H,W] or [1,H,W].
template <typename T>
Var<T> bce_loss(Var<T> pred, const Tensor<T>& labels, const Tensor<T>& pos_mask,
                const Tensor<T>& neg_mask, double eps = 1e-7) {
  const auto& p = pred.value();
  if (labels.size() != p.size() || pos_mask.size() != p.size() || neg_mask.size() != p.size()) {
    throw ShapeError("bce_loss: prediction " + shape_string(p.shape()) + ", labels " +
                     shape_string(labels.shape()) + " and masks must have equal size");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (pos_mask[i] > T(0) && neg_mask[i] > T(0)) {
      throw UsageError("bce_loss: positive and negative masks overlap");
    }
  }
  const auto [wpos, wneg] = bce_weights(pos_mask, neg_mask);
  const T lo = static_cast<T>(eps), hi = T(1) - static_cast<T>(eps);
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T w = (pos_mask[i] > T(0) ? wpos : T(0)) + (neg_mask[i] > T(0) ? wneg : T(0));
    if (w == T(0)) continue;
    const T q = std::clamp(p[i], lo, hi);
    const T y = labels[i];
    total += -w * (y * std::log(q) + (T(1) - y) * std::log(T(1) - q));
  }
  return pred.graph->push(OpKind::bce_loss, {pred.id}, Tensor<T>({1}, total), false,
                          BceAttrs<T>{labels.reshaped(p.shape()), pos_mask.reshaped(p.shape()),
                                      neg_mask.reshaped(p.shape()), eps});
}

}  // namespace ocean::ad
