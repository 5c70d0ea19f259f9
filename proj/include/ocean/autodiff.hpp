#pragma once

// Reverse-mode differentiation over a closed set of tensor ops. A Graph is a
// tape: nodes are appended in creation order, which is already a topological
// order, and backward() walks it once in reverse. Each op's backward rule is
// written out by hand below.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/kernels.hpp"
#include "ocean/tensor.hpp"

namespace ocean::ad {

enum class OpKind {
  leaf,
  conv2d,
  add_channel_bias,
  relu,
  sigmoid,
  exp_distance,
  depthwise_xcorr,
  aligned_conv,
  box_offsets,
  add,
  mul,
  scale,
  reshape,
  reduce_sum,
  reduce_mean,
  center_channels,
  iou_loss,
  bce_loss,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv2d: return "conv2d";
    case OpKind::add_channel_bias: return "add_channel_bias";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp_distance: return "exp_distance";
    case OpKind::depthwise_xcorr: return "depthwise_xcorr";
    case OpKind::aligned_conv: return "aligned_conv";
    case OpKind::box_offsets: return "box_offsets";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::reshape: return "reshape";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::center_channels: return "center_channels";
    case OpKind::iou_loss: return "iou_loss";
    case OpKind::bce_loss: return "bce_loss";
  }
  return "unknown";
}

enum class Reduction { mean, sum };

template <typename T>
struct ConvAttrs {
  kernels::ConvGeometry geo;
  Tensor<T> columns;
};

template <typename T>
struct AlignedAttrs {
  Tensor<T> columns;
  std::vector<kernels::BilinearTaps> taps;
};

struct ExpDistanceAttrs {
  double scale = 1;
  double lo = -10;
  double hi = 10;
};

struct BoxOffsetAttrs {
  double stride = 1;
  std::size_t k = 3;
};

struct ScaleAttrs {
  double factor = 1;
};

template <typename T>
struct IouLossAttrs {
  Tensor<T> target;  // [4,H,W] distances (l,t,r,b)
  Tensor<T> mask;    // [H,W]
  double eps = 1e-6;
  Reduction reduction = Reduction::mean;
};

template <typename T>
struct BceAttrs {
  Tensor<T> labels;
  Tensor<T> pos_mask;
  Tensor<T> neg_mask;
  double eps = 1e-7;
};

template <typename T>
using Attrs = std::variant<std::monostate, ConvAttrs<T>, AlignedAttrs<T>, ExpDistanceAttrs,
                           BoxOffsetAttrs, ScaleAttrs, IouLossAttrs<T>, BceAttrs<T>>;

/// Per-sample weights of the balanced BCE: positives and negatives each carry
/// half of the total weight; if one side is empty the other carries all of it.
template <typename T>
std::pair<T, T> bce_weights(const Tensor<T>& pos_mask, const Tensor<T>& neg_mask) {
  std::size_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < pos_mask.size(); ++i) {
    npos += pos_mask[i] > T(0) ? 1 : 0;
    nneg += neg_mask[i] > T(0) ? 1 : 0;
  }
  if (npos == 0 && nneg == 0) {
    throw DegenerateInputError("bce_loss: no positive and no negative samples");
  }
  if (npos == 0) return {T(0), T(1) / static_cast<T>(nneg)};
  if (nneg == 0) return {T(1) / static_cast<T>(npos), T(0)};
  return {T(0.5) / static_cast<T>(npos), T(0.5) / static_cast<T>(nneg)};
}

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T = double>
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Attrs<T> attrs;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient (images, frozen weights).
  Var<T> constant(Tensor<T> value) { return push(OpKind::leaf, {}, std::move(value), false); }

  /// Leaf whose gradient is accumulated by backward().
  Var<T> parameter(Tensor<T> value) { return push(OpKind::leaf, {}, std::move(value), true); }

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  OpKind kind(Var<T> v) const { return node(v).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() root w.r.t. `v`; zeros if unreached.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = node(v);
    if (n.grad.empty() && !n.value.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  Var<T> push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, bool requires_grad,
              Attrs<T> attrs = {}) {
    if (kind != OpKind::leaf) ensure_finite(value, op_name(kind));
    for (auto in : inputs) requires_grad = requires_grad || nodes_.at(in).requires_grad;
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, requires_grad,
                          std::move(attrs)});
    return Var<T>{this, nodes_.size() - 1};
  }

  /// Propagates d(root)/d(node) to every node that requires a gradient.
  void backward(Var<T> root) {
    check(root);
    if (node(root).value.size() != 1) {
      throw UsageError("backward: root must be scalar, got shape " +
                       shape_string(node(root).value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[root.id].grad = Tensor<T>(node(root).value.shape(), T(1));
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::leaf) continue;
      propagate(n);
    }
  }

  /// Hash of every branch decision taken by non-smooth ops (relu signs,
  /// clamp ranges, min selections in the IoU loss, bilinear cells). Two
  /// evaluations with equal signatures lie on the same smooth piece.
  std::uint64_t branch_signature() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    for (const Node& n : nodes_) {
      switch (n.kind) {
        case OpKind::relu:
          for (T v : n.value.data()) mix(v > T(0));
          break;
        case OpKind::exp_distance: {
          const auto& a = std::get<ExpDistanceAttrs>(n.attrs);
          for (T x : nodes_[n.inputs[0]].value.data()) {
            mix(x <= static_cast<T>(a.lo) ? 0 : x >= static_cast<T>(a.hi) ? 2 : 1);
          }
          break;
        }
        case OpKind::aligned_conv:
          for (const auto& tap : std::get<AlignedAttrs<T>>(n.attrs).taps) {
            for (auto idx : tap.index) mix(static_cast<std::uint64_t>(idx));
          }
          break;
        case OpKind::iou_loss: {
          const auto& a = std::get<IouLossAttrs<T>>(n.attrs);
          const Tensor<T>& p = nodes_[n.inputs[0]].value;
          const std::size_t cells = a.mask.size();
          for (std::size_t c = 0; c < cells; ++c) {
            if (!(a.mask[c] > T(0))) continue;
            for (std::size_t s = 0; s < 4; ++s) mix(p[s * cells + c] < a.target[s * cells + c]);
          }
          break;
        }
        case OpKind::bce_loss: {
          const auto& a = std::get<BceAttrs<T>>(n.attrs);
          const T lo = static_cast<T>(a.eps), hi = T(1) - static_cast<T>(a.eps);
          for (T v : nodes_[n.inputs[0]].value.data()) mix(v <= lo ? 0 : v >= hi ? 2 : 1);
          break;
        }
        default:
          break;
      }
    }
    return h;
  }

 private:
  const Node& node(Var<T> v) const {
    check(v);
    return nodes_[v.id];
  }

  void check(Var<T> v) const {
    if (v.graph != this || v.id >= nodes_.size()) {
      throw UsageError("variable does not belong to this graph");
    }
  }

  void accumulate(std::size_t id, Tensor<T> g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = std::move(g);
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  bool wants(std::size_t id) const { return nodes_[id].requires_grad; }

  void propagate(Node& n);

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Backward rules

template <typename T>
void Graph<T>::propagate(Node& n) {
  const Tensor<T>& g = n.grad;
  const auto& in = n.inputs;
  switch (n.kind) {
    case OpKind::leaf:
      break;

    case OpKind::conv2d: {
      const auto& a = std::get<ConvAttrs<T>>(n.attrs);
      const Tensor<T>& x = nodes_[in[0]].value;
      const Tensor<T>& w = nodes_[in[1]].value;
      if (wants(in[1])) accumulate(in[1], kernels::columns_weight_grad(g, a.columns, w.shape()));
      if (wants(in[0])) accumulate(in[0], kernels::conv2d_input_grad(g, w, x.shape(), a.geo));
      break;
    }

    case OpKind::add_channel_bias: {
      if (wants(in[0])) accumulate(in[0], g);
      if (wants(in[1])) {
        const std::size_t c = g.dim(0), plane = g.size() / c;
        Tensor<T> gb({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          T s = 0;
          for (std::size_t i = 0; i < plane; ++i) s += g[ch * plane + i];
          gb[ch] = s;
        }
        accumulate(in[1], std::move(gb));
      }
      break;
    }

    case OpKind::relu: {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = n.value[i] > T(0) ? g[i] : T(0);
      accumulate(in[0], std::move(gx));
      break;
    }

    case OpKind::sigmoid: {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = n.value[i];
        gx[i] = g[i] * s * (T(1) - s);
      }
      accumulate(in[0], std::move(gx));
      break;
    }

    case OpKind::exp_distance: {
      const auto& a = std::get<ExpDistanceAttrs>(n.attrs);
      const Tensor<T>& x = nodes_[in[0]].value;
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool inside = x[i] > static_cast<T>(a.lo) && x[i] < static_cast<T>(a.hi);
        gx[i] = inside ? g[i] * n.value[i] : T(0);
      }
      accumulate(in[0], std::move(gx));
      break;
    }

    case OpKind::depthwise_xcorr: {
      auto gr = kernels::depthwise_xcorr_backward(g, nodes_[in[0]].value, nodes_[in[1]].value);
      accumulate(in[0], std::move(gr.search));
      accumulate(in[1], std::move(gr.kernel));
      break;
    }

    case OpKind::aligned_conv: {
      const auto& a = std::get<AlignedAttrs<T>>(n.attrs);
      const Tensor<T>& x = nodes_[in[0]].value;
      const Tensor<T>& w = nodes_[in[1]].value;
      const std::size_t k = w.dim(2);
      if (wants(in[1])) accumulate(in[1], kernels::columns_weight_grad(g, a.columns, w.shape()));
      if (wants(in[0]) || wants(in[2])) {
        const Tensor<T> gcol = kernels::columns_grad(g, w);
        if (wants(in[0])) accumulate(in[0], kernels::aligned_col2im(gcol, x.shape(), k, a.taps));
        if (wants(in[2])) accumulate(in[2], kernels::aligned_offset_grad(gcol, x, k, a.taps));
      }
      break;
    }

    case OpKind::box_offsets: {
      // offsets are affine in the distances:
      //   dy(t) = (b - t)/(2s) + p * ((t + b)/(s(k-1)) - 1)
      //   dx(t) = (r - l)/(2s) + q * ((l + r)/(s(k-1)) - 1)
      const auto& a = std::get<BoxOffsetAttrs>(n.attrs);
      const Tensor<T>& d = nodes_[in[0]].value;
      const std::size_t cells = d.dim(1) * d.dim(2);
      const auto half = static_cast<std::ptrdiff_t>(a.k / 2);
      const double span = a.k > 1 ? a.stride * static_cast<double>(a.k - 1) : 1.0;
      Tensor<T> gd(d.shape());
      for (std::size_t ky = 0; ky < a.k; ++ky) {
        for (std::size_t kx = 0; kx < a.k; ++kx) {
          const std::size_t t = ky * a.k + kx;
          const double p = a.k > 1 ? static_cast<double>(static_cast<std::ptrdiff_t>(ky) - half) : 0.0;
          const double q = a.k > 1 ? static_cast<double>(static_cast<std::ptrdiff_t>(kx) - half) : 0.0;
          const T cy_b = static_cast<T>(0.5 / a.stride + p / span);
          const T cy_t = static_cast<T>(-0.5 / a.stride + p / span);
          const T cx_r = static_cast<T>(0.5 / a.stride + q / span);
          const T cx_l = static_cast<T>(-0.5 / a.stride + q / span);
          for (std::size_t c = 0; c < cells; ++c) {
            const T gy = g[(2 * t) * cells + c];
            const T gx = g[(2 * t + 1) * cells + c];
            gd[0 * cells + c] += gx * cx_l;
            gd[1 * cells + c] += gy * cy_t;
            gd[2 * cells + c] += gx * cx_r;
            gd[3 * cells + c] += gy * cy_b;
          }
        }
      }
      accumulate(in[0], std::move(gd));
      break;
    }

    case OpKind::add:
      accumulate(in[0], g);
      accumulate(in[1], g);
      break;

    case OpKind::mul: {
      const Tensor<T>& a = nodes_[in[0]].value;
      const Tensor<T>& b = nodes_[in[1]].value;
      if (wants(in[0])) {
        Tensor<T> ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * b[i];
        accumulate(in[0], std::move(ga));
      }
      if (wants(in[1])) {
        Tensor<T> gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * a[i];
        accumulate(in[1], std::move(gb));
      }
      break;
    }

    case OpKind::scale: {
      const T f = static_cast<T>(std::get<ScaleAttrs>(n.attrs).factor);
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * f;
      accumulate(in[0], std::move(gx));
      break;
    }

    case OpKind::reshape:
      accumulate(in[0], g.reshaped(nodes_[in[0]].value.shape()));
      break;

    case OpKind::reduce_sum:
      accumulate(in[0], Tensor<T>(nodes_[in[0]].value.shape(), g[0]));
      break;

    case OpKind::reduce_mean: {
      const auto& x = nodes_[in[0]].value;
      accumulate(in[0], Tensor<T>(x.shape(), g[0] / static_cast<T>(x.size())));
      break;
    }

    case OpKind::center_channels: {
      const std::size_t c = g.dim(0), plane = g.size() / c;
      Tensor<T> gx = g;
      for (std::size_t k = 0; k < c; ++k) {
        T m = 0;
        for (std::size_t i = 0; i < plane; ++i) m += g[k * plane + i];
        m /= static_cast<T>(plane);
        for (std::size_t i = 0; i < plane; ++i) gx[k * plane + i] -= m;
      }
      accumulate(in[0], std::move(gx));
      break;
    }

    case OpKind::iou_loss: {
      const auto& a = std::get<IouLossAttrs<T>>(n.attrs);
      const Tensor<T>& p = nodes_[in[0]].value;
      const std::size_t cells = a.mask.size();
      std::size_t count = 0;
      for (std::size_t c = 0; c < cells; ++c) count += a.mask[c] > T(0) ? 1 : 0;
      const T norm = a.reduction == Reduction::mean ? T(1) / static_cast<T>(count) : T(1);
      Tensor<T> gp(p.shape());
      for (std::size_t c = 0; c < cells; ++c) {
        if (!(a.mask[c] > T(0))) continue;
        const T l = p[c], t = p[cells + c], r = p[2 * cells + c], b = p[3 * cells + c];
        const T lt = a.target[c], tt = a.target[cells + c], rt = a.target[2 * cells + c],
                bt = a.target[3 * cells + c];
        const T pw = l + r, ph = t + b;
        const T iw = std::min(l, lt) + std::min(r, rt);
        const T ih = std::min(t, tt) + std::min(b, bt);
        const T inter = iw * ih;
        const T uni = pw * ph + (lt + rt) * (tt + bt) - inter;
        const T iou = inter / uni;
        if (iou <= static_cast<T>(a.eps)) continue;  // clamped: flat
        // loss = -ln(inter) + ln(uni)
        const T d_inter = -T(1) / inter - T(1) / uni;
        const T d_pa = T(1) / uni;
        const T s = g[0] * norm;
        const T dl = d_pa * ph + d_inter * (l < lt ? ih : T(0));
        const T dr = d_pa * ph + d_inter * (r < rt ? ih : T(0));
        const T dt = d_pa * pw + d_inter * (t < tt ? iw : T(0));
        const T db = d_pa * pw + d_inter * (b < bt ? iw : T(0));
        gp[c] = s * dl;
        gp[cells + c] = s * dt;
        gp[2 * cells + c] = s * dr;
        gp[3 * cells + c] = s * db;
      }
      accumulate(in[0], std::move(gp));
      break;
    }

    case OpKind::bce_loss: {
      const auto& a = std::get<BceAttrs<T>>(n.attrs);
      const Tensor<T>& p = nodes_[in[0]].value;
      const auto [wpos, wneg] = bce_weights(a.pos_mask, a.neg_mask);
      const T lo = static_cast<T>(a.eps), hi = T(1) - static_cast<T>(a.eps);
      Tensor<T> gp(p.shape());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T w = (a.pos_mask[i] > T(0) ? wpos : T(0)) + (a.neg_mask[i] > T(0) ? wneg : T(0));
        if (w == T(0) || p[i] <= lo || p[i] >= hi) continue;
        const T y = a.labels[i];
        gp[i] = g[0] * w * (-(y / p[i]) + (T(1) - y) / (T(1) - p[i]));
      }
      accumulate(in[0], std::move(gp));
      break;
    }
  }
}

}  // namespace ocean::ad
