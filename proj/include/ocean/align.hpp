#pragma once

// Box-driven feature alignment: the k x k taps of a convolution are moved
// from the regular grid around each cell onto a uniform k x k lattice spanning
// the box predicted at that cell.

#include <cmath>
#include <cstddef>
#include <string>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/kernels.hpp"
#include "ocean/tensor.hpp"

namespace ocean {

/// Per-cell, per-tap (dy, dx) displacements in feature-grid units, laid out
/// as [2*k*k, H, W] with channel 2t = dy and 2t+1 = dx of tap t = ky*k + kx.
struct OffsetField {
  std::size_t k = 3;
  Tensor<double> offsets;
};

/// Converts corner-form pixel boxes [4,H,W] to centre-form (cx, cy, w, h)
/// boxes in grid units, where cell (i, j) sits at (x=j, y=i).
inline Tensor<double> boxes_to_grid_units(const Tensor<double>& corner_boxes,
                                          const GridSpec& grid) {
  require_rank(corner_boxes, 3, "boxes_to_grid_units");
  const std::size_t cells = corner_boxes.dim(1) * corner_boxes.dim(2);
  Tensor<double> out(corner_boxes.shape());
  for (std::size_t c = 0; c < cells; ++c) {
    const BBox b{corner_boxes[c], corner_boxes[cells + c], corner_boxes[2 * cells + c],
                 corner_boxes[3 * cells + c]};
    out[c] = (b.cx() - grid.offset) / grid.stride;
    out[cells + c] = (b.cy() - grid.offset) / grid.stride;
    out[2 * cells + c] = b.width() / grid.stride;
    out[3 * cells + c] = b.height() / grid.stride;
  }
  return out;
}

/// Offsets that move each regular tap (i + p, j + q) onto
/// (m_y + p * m_h / (k-1), m_x + q * m_w / (k-1)) for the box M at cell (i, j).
inline OffsetField compute_offsets(const Tensor<double>& boxes, std::size_t k) {
  require_rank(boxes, 3, "compute_offsets boxes");
  if (boxes.dim(0) != 4) throw ShapeError("compute_offsets: expected [4,H,W] boxes");
  if (k % 2 == 0) throw UsageError("compute_offsets: kernel size must be odd");
  if (!all_finite(boxes)) throw NumericError("compute_offsets: non-finite box");
  const std::size_t h = boxes.dim(1), w = boxes.dim(2), cells = h * w;
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const double denom = k > 1 ? static_cast<double>(k - 1) : 1.0;
  OffsetField field{k, Tensor<double>({2 * k * k, h, w})};
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const std::size_t t = ky * k + kx;
      const double p = static_cast<double>(static_cast<std::ptrdiff_t>(ky) - half);
      const double q = static_cast<double>(static_cast<std::ptrdiff_t>(kx) - half);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t c = i * w + j;
          const double mx = boxes[c], my = boxes[cells + c];
          const double mw = boxes[2 * cells + c], mh = boxes[3 * cells + c];
          if (mw < 0 || mh < 0) throw UsageError("compute_offsets: negative box extent");
          const double ty = my + p * mh / denom;
          const double tx = mx + q * mw / denom;
          field.offsets[(2 * t) * cells + c] = ty - (static_cast<double>(i) + p);
          field.offsets[(2 * t + 1) * cells + c] = tx - (static_cast<double>(j) + q);
        }
      }
    }
  }
  return field;
}

/// Aligned convolution: each output tap reads the feature bilinearly at
/// u + g + offset. Zero offsets reproduce conv2d with "same" zero padding.
template <typename T>
Tensor<T> aligned_conv(const Tensor<T>& feature, const Tensor<T>& weight,
                       const OffsetField& field) {
  if (weight.rank() == 4 && weight.dim(2) != field.k) {
    throw ShapeError("aligned_conv: kernel " + shape_string(weight.shape()) +
                     " does not match offset field for k=" + std::to_string(field.k));
  }
  return kernels::aligned_conv(feature, weight, field.offsets.template cast<T>());
}

}  // namespace ocean
