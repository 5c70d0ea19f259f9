#pragma once

// Forward and backward numerical kernels. Every function here is pure: it
// reads its inputs and returns fresh tensors, so kernels may be called from
// several threads at once.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/tensor.hpp"

namespace ocean::kernels {

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Extent2&) const = default;
};

/// Stride, per-axis dilation and per-axis zero padding of a 2-D convolution.
/// Padding is always explicit.
struct ConvGeometry {
  std::size_t stride = 1;
  Extent2 dilation{1, 1};
  Extent2 padding{0, 0};
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t pad,
                                      std::size_t dil, std::size_t k,
                                      std::size_t stride) {
  const std::size_t span = dil * (k - 1) + 1;
  if (in + 2 * pad < span) {
    throw ShapeError("convolution window (" + std::to_string(span) +
                     ") larger than padded input (" +
                     std::to_string(in + 2 * pad) + ")");
  }
  return (in + 2 * pad - span) / stride + 1;
}

// ---------------------------------------------------------------------------
// Dense products. Each output element accumulates over the reduction index in
// ascending order, which keeps conv2d bit-identical to a naive nested loop.

/// out[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* out, std::size_t m,
                     std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* o0 = out + i * n;
    T* o1 = o0 + n;
    T* o2 = o1 + n;
    T* o3 = o2 + n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T a0 = a[i * k + kk];
      const T a1 = a[(i + 1) * k + kk];
      const T a2 = a[(i + 2) * k + kk];
      const T a3 = a[(i + 3) * k + kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        o0[j] += a0 * bv;
        o1[j] += a1 * bv;
        o2[j] += a2 * bv;
        o3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* o = out + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
}

/// out[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_at_b_accumulate(const T* a, const T* b, T* out, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      if (av == T(0)) continue;
      T* o = out + kk * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t lanes = 8;
  std::array<T, lanes> acc{};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::size_t l = 0; l < lanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T s = 0;
  for (; i < n; ++i) s += a[i] * b[i];
  for (std::size_t l = 0; l < lanes; ++l) s += acc[l];
  return s;
}

/// out[M,K] += a[M,N] * b[K,N]^T
template <typename T>
void gemm_a_bt_accumulate(const T* a, const T* b, T* out, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      out[i * k + kk] += dot(a + i * n, b + kk * n, n);
    }
  }
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
struct ConvForward {
  Tensor<T> output;  // [C_out, H', W']
  Tensor<T> columns; // [C_in*kh*kw, H'*W'], kept for the backward pass
};

template <typename T>
Tensor<T> im2col(const Tensor<T>& input, std::size_t kh, std::size_t kw,
                 const ConvGeometry& geo) {
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t ho =
      conv_output_extent(h, geo.padding.h, geo.dilation.h, kh, geo.stride);
  const std::size_t wo =
      conv_output_extent(w, geo.padding.w, geo.dilation.w, kw, geo.stride);
  Tensor<T> col({c_in * kh * kw, ho * wo});
  T* dst = col.ptr();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky * geo.dilation.h) -
                          static_cast<std::ptrdiff_t>(geo.padding.h);
          for (std::size_t ox = 0; ox < wo; ++ox, ++dst) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx * geo.dilation.w) -
                            static_cast<std::ptrdiff_t>(geo.padding.w);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                ix >= static_cast<std::ptrdiff_t>(w)) {
              *dst = T(0);
            } else {
              *dst = input(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& col, const Shape& input_shape, std::size_t kh,
                 std::size_t kw, const ConvGeometry& geo) {
  const std::size_t c_in = input_shape[0], h = input_shape[1], w = input_shape[2];
  const std::size_t ho =
      conv_output_extent(h, geo.padding.h, geo.dilation.h, kh, geo.stride);
  const std::size_t wo =
      conv_output_extent(w, geo.padding.w, geo.dilation.w, kw, geo.stride);
  Tensor<T> out(input_shape);
  const T* src = col.ptr();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky * geo.dilation.h) -
                          static_cast<std::ptrdiff_t>(geo.padding.h);
          for (std::size_t ox = 0; ox < wo; ++ox, ++src) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx * geo.dilation.w) -
                            static_cast<std::ptrdiff_t>(geo.padding.w);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              out(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += *src;
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& weight) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(0)));
  }
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " +
                     shape_string(weight.shape()));
  }
}

/// Multiplies a weight [C_out, K] against columns [K, P] into [C_out, rows, cols].
template <typename T>
Tensor<T> apply_columns(const Tensor<T>& weight, const Tensor<T>& col,
                        std::size_t rows, std::size_t cols) {
  const std::size_t c_out = weight.dim(0);
  const std::size_t k = weight.size() / c_out;
  Tensor<T> out({c_out, rows, cols});
  gemm_accumulate(weight.ptr(), col.ptr(), out.ptr(), c_out, k, rows * cols);
  return out;
}

template <typename T>
ConvForward<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight,
                              const ConvGeometry& geo) {
  check_conv_shapes(input, weight);
  if (geo.stride == 0 || geo.dilation.h == 0 || geo.dilation.w == 0) {
    throw UsageError("conv2d: stride and dilation must be >= 1");
  }
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t ho = conv_output_extent(input.dim(1), geo.padding.h,
                                            geo.dilation.h, kh, geo.stride);
  const std::size_t wo = conv_output_extent(input.dim(2), geo.padding.w,
                                            geo.dilation.w, kw, geo.stride);
  ConvForward<T> fwd;
  fwd.columns = im2col(input, kh, kw, geo);
  fwd.output = apply_columns(weight, fwd.columns, ho, wo);
  return fwd;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const ConvGeometry& geo) {
  auto out = conv2d_forward(input, weight, geo).output;
  ensure_finite(out, "conv2d");
  return out;
}

/// Gradient of the column product w.r.t. the weight: [C_out, K].
template <typename T>
Tensor<T> columns_weight_grad(const Tensor<T>& grad_out, const Tensor<T>& col,
                              const Shape& weight_shape) {
  const std::size_t c_out = weight_shape[0];
  const std::size_t k = col.dim(0), p = col.dim(1);
  Tensor<T> gw(weight_shape);
  gemm_a_bt_accumulate(grad_out.ptr(), col.ptr(), gw.ptr(), c_out, k, p);
  return gw;
}

/// Gradient of the column product w.r.t. the columns: [K, P].
template <typename T>
Tensor<T> columns_grad(const Tensor<T>& grad_out, const Tensor<T>& weight) {
  const std::size_t c_out = weight.dim(0);
  const std::size_t k = weight.size() / c_out;
  const std::size_t p = grad_out.size() / c_out;
  Tensor<T> gcol({k, p});
  gemm_at_b_accumulate(weight.ptr(), grad_out.ptr(), gcol.ptr(), c_out, k, p);
  return gcol;
}

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& grad_out, const Tensor<T>& weight,
                            const Shape& input_shape, const ConvGeometry& geo) {
  return col2im(columns_grad(grad_out, weight), input_shape, weight.dim(2),
                weight.dim(3), geo);
}

// ---------------------------------------------------------------------------
// Depthwise cross-correlation: out[c,i,j] = sum_{u,v} kernel[c,u,v] * search[c,i+u,j+v]

template <typename T>
void check_xcorr_shapes(const Tensor<T>& search, const Tensor<T>& kernel) {
  require_rank(search, 3, "depthwise_xcorr search");
  require_rank(kernel, 3, "depthwise_xcorr kernel");
  if (search.dim(0) != kernel.dim(0)) {
    throw ShapeError("depthwise_xcorr: channel mismatch " +
                     shape_string(search.shape()) + " vs " +
                     shape_string(kernel.shape()));
  }
  if (kernel.dim(1) > search.dim(1) || kernel.dim(2) > search.dim(2)) {
    throw ShapeError("depthwise_xcorr: kernel " + shape_string(kernel.shape()) +
                     " larger than search " + shape_string(search.shape()));
  }
}

template <typename T>
Tensor<T> depthwise_xcorr(const Tensor<T>& search, const Tensor<T>& kernel) {
  check_xcorr_shapes(search, kernel);
  const std::size_t c = search.dim(0), hs = search.dim(1), ws = search.dim(2);
  const std::size_t hk = kernel.dim(1), wk = kernel.dim(2);
  const std::size_t ho = hs - hk + 1, wo = ws - wk + 1;
  Tensor<T> out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < hk; ++u) {
      for (std::size_t v = 0; v < wk; ++v) {
        const T kv = kernel(ch, u, v);
        for (std::size_t i = 0; i < ho; ++i) {
          T* o = &out(ch, i, 0);
          const T* s = &search(ch, i + u, v);
          for (std::size_t j = 0; j < wo; ++j) o[j] += kv * s[j];
        }
      }
    }
  }
  ensure_finite(out, "depthwise_xcorr");
  return out;
}

template <typename T>
struct XcorrGrads {
  Tensor<T> search;
  Tensor<T> kernel;
};

template <typename T>
XcorrGrads<T> depthwise_xcorr_backward(const Tensor<T>& grad_out,
                                       const Tensor<T>& search,
                                       const Tensor<T>& kernel) {
  const std::size_t c = search.dim(0);
  const std::size_t hk = kernel.dim(1), wk = kernel.dim(2);
  const std::size_t ho = grad_out.dim(1), wo = grad_out.dim(2);
  XcorrGrads<T> g{Tensor<T>(search.shape()), Tensor<T>(kernel.shape())};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < hk; ++u) {
      for (std::size_t v = 0; v < wk; ++v) {
        const T kv = kernel(ch, u, v);
        T acc = 0;
        for (std::size_t i = 0; i < ho; ++i) {
          const T* go = &grad_out(ch, i, 0);
          const T* s = &search(ch, i + u, v);
          T* gs = &g.search(ch, i + u, v);
          acc += dot(go, s, wo);
          for (std::size_t j = 0; j < wo; ++j) gs[j] += kv * go[j];
        }
        g.kernel(ch, u, v) = acc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Bilinear sampling over a zero-padded field. Neighbours outside the grid read
// as zero, so the sampled value is continuous in the position and vanishes for
// positions at or beyond one cell outside the grid.

struct BilinearTaps {
  std::array<std::ptrdiff_t, 4> index{-1, -1, -1, -1};  // flat y*W+x, -1 = outside
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_dy{};
  std::array<double, 4> dweight_dx{};
};

inline BilinearTaps bilinear_taps(std::size_t h, std::size_t w, double y, double x) {
  BilinearTaps taps;
  if (!std::isfinite(y) || !std::isfinite(x) || y <= -1.0 || x <= -1.0 ||
      y >= static_cast<double>(h) || x >= static_cast<double>(w)) {
    return taps;
  }
  const double fy = std::floor(y), fx = std::floor(x);
  const double ly = y - fy, lx = x - fx;
  const auto y0 = static_cast<std::ptrdiff_t>(fy);
  const auto x0 = static_cast<std::ptrdiff_t>(fx);
  const std::array<std::ptrdiff_t, 4> ys{y0, y0, y0 + 1, y0 + 1};
  const std::array<std::ptrdiff_t, 4> xs{x0, x0 + 1, x0, x0 + 1};
  const std::array<double, 4> wy{1.0 - ly, 1.0 - ly, ly, ly};
  const std::array<double, 4> wx{1.0 - lx, lx, 1.0 - lx, lx};
  const std::array<double, 4> dwy{-1.0, -1.0, 1.0, 1.0};
  const std::array<double, 4> dwx{-1.0, 1.0, -1.0, 1.0};
  for (std::size_t n = 0; n < 4; ++n) {
    if (ys[n] < 0 || xs[n] < 0 || ys[n] >= static_cast<std::ptrdiff_t>(h) ||
        xs[n] >= static_cast<std::ptrdiff_t>(w)) {
      continue;
    }
    taps.index[n] = ys[n] * static_cast<std::ptrdiff_t>(w) + xs[n];
    taps.weight[n] = wy[n] * wx[n];
    taps.dweight_dy[n] = dwy[n] * wx[n];
    taps.dweight_dx[n] = wy[n] * dwx[n];
  }
  return taps;
}

template <typename T>
T bilinear_value(const T* plane, const BilinearTaps& taps) {
  T v = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (taps.index[n] >= 0) v += plane[taps.index[n]] * static_cast<T>(taps.weight[n]);
  }
  return v;
}

struct Point2 {
  double y = 0;
  double x = 0;
};

/// Samples every channel of `feature` [C,H,W] at each (y,x) position -> [C, N].
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const std::vector<Point2>& positions) {
  require_rank(feature, 3, "bilinear_sample feature");
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  Tensor<T> out({c, positions.size()});
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const auto taps = bilinear_taps(h, w, positions[n].y, positions[n].x);
    for (std::size_t ch = 0; ch < c; ++ch) {
      out(ch, n) = bilinear_value(feature.ptr() + ch * h * w, taps);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aligned (box-driven) sampling for a k x k kernel evaluated at every cell of
// an H x W map. offsets is [2*k*k, H, W]; channel 2t holds the row (y)
// displacement and 2t+1 the column (x) displacement of tap t = ky*k + kx.

template <typename T>
void check_offsets(const Tensor<T>& feature, const Tensor<T>& offsets, std::size_t k) {
  require_rank(offsets, 3, "aligned offsets");
  if (offsets.dim(0) != 2 * k * k || offsets.dim(1) != feature.dim(1) ||
      offsets.dim(2) != feature.dim(2)) {
    throw ShapeError("aligned sampling: offsets " + shape_string(offsets.shape()) +
                     " do not fit kernel " + std::to_string(k) + " over feature " +
                     shape_string(feature.shape()));
  }
}

template <typename T>
std::vector<BilinearTaps> aligned_taps(std::size_t h, std::size_t w, std::size_t k,
                                       const Tensor<T>& offsets) {
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<BilinearTaps> taps(k * k * h * w);
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const std::size_t t = ky * k + kx;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double y = static_cast<double>(static_cast<std::ptrdiff_t>(i + ky) - half) +
                           static_cast<double>(offsets(2 * t, i, j));
          const double x = static_cast<double>(static_cast<std::ptrdiff_t>(j + kx) - half) +
                           static_cast<double>(offsets(2 * t + 1, i, j));
          taps[t * h * w + i * w + j] = bilinear_taps(h, w, y, x);
        }
      }
    }
  }
  return taps;
}

/// Column buffer [C*k*k, H*W] with the same row ordering as im2col.
template <typename T>
Tensor<T> aligned_im2col(const Tensor<T>& feature, std::size_t k,
                         const std::vector<BilinearTaps>& taps) {
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const std::size_t cells = h * w, kk = k * k;
  Tensor<T> col({c * kk, cells});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = feature.ptr() + ch * cells;
    for (std::size_t t = 0; t < kk; ++t) {
      T* dst = col.ptr() + (ch * kk + t) * cells;
      const BilinearTaps* tp = taps.data() + t * cells;
      for (std::size_t cell = 0; cell < cells; ++cell) dst[cell] = bilinear_value(plane, tp[cell]);
    }
  }
  return col;
}

template <typename T>
struct AlignedForward {
  Tensor<T> output;
  Tensor<T> columns;
  std::vector<BilinearTaps> taps;
};

template <typename T>
AlignedForward<T> aligned_conv_forward(const Tensor<T>& feature, const Tensor<T>& weight,
                                       const Tensor<T>& offsets) {
  check_conv_shapes(feature, weight);
  if (weight.dim(2) != weight.dim(3)) {
    throw ShapeError("aligned_conv: kernel must be square, got " + shape_string(weight.shape()));
  }
  const std::size_t k = weight.dim(2);
  check_offsets(feature, offsets, k);
  if (!all_finite(offsets)) throw NumericError("aligned_conv: non-finite offsets");
  AlignedForward<T> fwd;
  fwd.taps = aligned_taps(feature.dim(1), feature.dim(2), k, offsets);
  fwd.columns = aligned_im2col(feature, k, fwd.taps);
  fwd.output = apply_columns(weight, fwd.columns, feature.dim(1), feature.dim(2));
  return fwd;
}

template <typename T>
Tensor<T> aligned_conv(const Tensor<T>& feature, const Tensor<T>& weight,
                       const Tensor<T>& offsets) {
  auto out = aligned_conv_forward(feature, weight, offsets).output;
  ensure_finite(out, "aligned_conv");
  return out;
}

/// Scatters a column gradient back onto the feature map through the taps.
template <typename T>
Tensor<T> aligned_col2im(const Tensor<T>& gcol, const Shape& feature_shape, std::size_t k,
                         const std::vector<BilinearTaps>& taps) {
  const std::size_t c = feature_shape[0], cells = feature_shape[1] * feature_shape[2];
  const std::size_t kk = k * k;
  Tensor<T> g(feature_shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = g.ptr() + ch * cells;
    for (std::size_t t = 0; t < kk; ++t) {
      const T* src = gcol.ptr() + (ch * kk + t) * cells;
      const BilinearTaps* tp = taps.data() + t * cells;
      for (std::size_t cell = 0; cell < cells; ++cell) {
        const T gv = src[cell];
        if (gv == T(0)) continue;
        for (std::size_t n = 0; n < 4; ++n) {
          if (tp[cell].index[n] >= 0) {
            plane[tp[cell].index[n]] += gv * static_cast<T>(tp[cell].weight[n]);
          }
        }
      }
    }
  }
  return g;
}

/// Gradient w.r.t. the offsets [2*k*k, H, W].
template <typename T>
Tensor<T> aligned_offset_grad(const Tensor<T>& gcol, const Tensor<T>& feature, std::size_t k,
                              const std::vector<BilinearTaps>& taps) {
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const std::size_t cells = h * w, kk = k * k;
  Tensor<T> g({2 * kk, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = feature.ptr() + ch * cells;
    for (std::size_t t = 0; t < kk; ++t) {
      const T* src = gcol.ptr() + (ch * kk + t) * cells;
      const BilinearTaps* tp = taps.data() + t * cells;
      T* gy = g.ptr() + (2 * t) * cells;
      T* gx = g.ptr() + (2 * t + 1) * cells;
      for (std::size_t cell = 0; cell < cells; ++cell) {
        T dy = 0, dx = 0;
        for (std::size_t n = 0; n < 4; ++n) {
          if (tp[cell].index[n] >= 0) {
            const T v = plane[tp[cell].index[n]];
            dy += v * static_cast<T>(tp[cell].dweight_dy[n]);
            dx += v * static_cast<T>(tp[cell].dweight_dx[n]);
          }
        }
        gy[cell] += src[cell] * dy;
        gx[cell] += src[cell] * dx;
      }
    }
  }
  return g;
}

}  // namespace ocean::kernels
