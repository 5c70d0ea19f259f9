#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "ocean/error.hpp"

namespace ocean {

/// Axis-aligned box in image pixels, stored in corner form.
struct BBox {
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;

  static BBox from_center(double cx, double cy, double w, double h) {
    return BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }

  double cx() const { return (x0 + x1) / 2; }
  double cy() const { return (y0 + y1) / 2; }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }

  bool valid() const {
    return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) &&
           x1 >= x0 && y1 >= y0;
  }
  bool degenerate() const { return !(width() > 0 && height() > 0); }

  /// Boundary-inclusive containment.
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

  BBox translated(double dx, double dy) const { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }

  bool operator==(const BBox&) const = default;
};

inline std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
         "," + std::to_string(b.y1) + ")";
}

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

/// Intersection over union; 0 for disjoint boxes and for two zero-area boxes.
inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct PixelPoint {
  double x = 0;
  double y = 0;
  bool operator==(const PixelPoint&) const = default;
};

/// Affine map from feature-grid cells to image pixels:
/// cell (i, j) -> (offset + j*stride, offset + i*stride).
struct GridSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  double stride = 1;
  double offset = 0;

  /// Grid of `grid_size` cells centred in a square crop of `image_size` pixels.
  static GridSpec centered(std::size_t image_size, double stride, std::size_t grid_size) {
    return GridSpec{grid_size, grid_size, stride,
                    (static_cast<double>(image_size) -
                     stride * static_cast<double>(grid_size - 1)) / 2.0};
  }

  std::size_t cells() const { return height * width; }
};

inline PixelPoint feat_to_image(std::size_t i, std::size_t j, const GridSpec& grid) {
  if (i >= grid.height || j >= grid.width) {
    throw UsageError("feat_to_image: cell (" + std::to_string(i) + "," + std::to_string(j) +
                     ") outside " + std::to_string(grid.height) + "x" +
                     std::to_string(grid.width) + " grid");
  }
  return {grid.offset + static_cast<double>(j) * grid.stride,
          grid.offset + static_cast<double>(i) * grid.stride};
}

}  // namespace ocean
