#pragma once

// Training targets for the anchor-free heads and their inverse (box decoding).
// All maps live on a GridSpec; distances are in image pixels.

#include <cmath>
#include <cstddef>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/tensor.hpp"

namespace ocean {

struct RegressionTargets {
  Tensor<double> targets;  // [4,H,W]: l*, t*, r*, b*
  Tensor<double> mask;     // [H,W]
};

/// Every cell whose image location falls inside `gt` (edges included) is a
/// regression sample; its target is the distance to each side of the box.
inline RegressionTargets regression_targets(const BBox& gt, const GridSpec& grid) {
  if (!gt.valid() || gt.degenerate()) {
    throw DegenerateInputError("regression_targets: ground-truth box " + to_string(gt) +
                               " has no area");
  }
  const std::size_t h = grid.height, w = grid.width, cells = h * w;
  RegressionTargets out{Tensor<double>({4, h, w}), Tensor<double>({h, w})};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto p = feat_to_image(i, j, grid);
      if (!gt.contains(p.x, p.y)) continue;
      const std::size_t c = i * w + j;
      out.mask[c] = 1;
      out.targets[c] = p.x - gt.x0;
      out.targets[cells + c] = p.y - gt.y0;
      out.targets[2 * cells + c] = gt.x1 - p.x;
      out.targets[3 * cells + c] = gt.y1 - p.y;
    }
  }
  return out;
}

/// Binary labels: 1 where the cell lies within `radius` pixels of the box centre.
inline Tensor<double> classification_labels_regular(const BBox& gt, const GridSpec& grid,
                                                    double radius) {
  if (!(radius > 0)) throw UsageError("classification_labels_regular: radius must be positive");
  Tensor<double> labels({grid.height, grid.width});
  const double cx = gt.cx(), cy = gt.cy();
  for (std::size_t i = 0; i < grid.height; ++i) {
    for (std::size_t j = 0; j < grid.width; ++j) {
      const auto p = feat_to_image(i, j, grid);
      if (std::hypot(p.x - cx, p.y - cy) <= radius) labels(i, j) = 1;
    }
  }
  return labels;
}

/// Corner-form boxes [4,H,W] (x0,y0,x1,y1) from per-cell distances.
template <typename T>
Tensor<double> decode_boxes(const Tensor<T>& distances, const GridSpec& grid) {
  require_rank(distances, 3, "decode_boxes");
  if (distances.dim(0) != 4 || distances.dim(1) != grid.height || distances.dim(2) != grid.width) {
    throw ShapeError("decode_boxes: distances " + shape_string(distances.shape()) +
                     " do not match the grid");
  }
  const std::size_t w = grid.width, cells = grid.cells();
  Tensor<double> boxes({4, grid.height, w});
  for (std::size_t i = 0; i < grid.height; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t c = i * w + j;
      const double l = distances[c], t = distances[cells + c], r = distances[2 * cells + c],
                   b = distances[3 * cells + c];
      if (l < 0 || t < 0 || r < 0 || b < 0) {
        throw UsageError("decode_boxes: negative distance at cell (" + std::to_string(i) + "," +
                         std::to_string(j) + ")");
      }
      const auto p = feat_to_image(i, j, grid);
      boxes[c] = p.x - l;
      boxes[cells + c] = p.y - t;
      boxes[2 * cells + c] = p.x + r;
      boxes[3 * cells + c] = p.y + b;
    }
  }
  return boxes;
}

inline BBox box_at(const Tensor<double>& boxes, std::size_t i, std::size_t j) {
  const std::size_t cells = boxes.dim(1) * boxes.dim(2), c = i * boxes.dim(2) + j;
  return {boxes[c], boxes[cells + c], boxes[2 * cells + c], boxes[3 * cells + c]};
}

/// Soft labels: IoU of each cell's predicted box with `gt`, zero outside `reg_mask`.
inline Tensor<double> objectaware_labels(const Tensor<double>& pred_boxes, const BBox& gt,
                                         const Tensor<double>& reg_mask) {
  require_rank(pred_boxes, 3, "objectaware_labels boxes");
  const std::size_t h = pred_boxes.dim(1), w = pred_boxes.dim(2);
  if (reg_mask.size() != h * w) throw ShapeError("objectaware_labels: mask does not match boxes");
  Tensor<double> labels({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (reg_mask[i * w + j] > 0) labels(i, j) = iou(box_at(pred_boxes, i, j), gt);
    }
  }
  return labels;
}

/// Targets of one training sample. `cls_objectaware` depends on the current
/// regression prediction and is filled in once that prediction exists.
struct LabelBundle {
  Tensor<double> reg_targets;      // [4,H,W]
  Tensor<double> reg_mask;         // [H,W]
  Tensor<double> cls_regular;      // [H,W] binary
  Tensor<double> cls_objectaware;  // [H,W] in [0,1]
  Tensor<double> cls_neg_mask;     // [H,W]
};

inline LabelBundle make_labels(const BBox& gt, const GridSpec& grid, double radius) {
  auto reg = regression_targets(gt, grid);
  LabelBundle bundle;
  bundle.reg_targets = std::move(reg.targets);
  bundle.reg_mask = std::move(reg.mask);
  bundle.cls_regular = classification_labels_regular(gt, grid, radius);
  bundle.cls_objectaware = Tensor<double>({grid.height, grid.width});
  bundle.cls_neg_mask = Tensor<double>({grid.height, grid.width});
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    // Centre positives are restricted to in-box cells.
    if (!(bundle.reg_mask[c] > 0)) bundle.cls_regular[c] = 0;
    bundle.cls_neg_mask[c] = bundle.cls_regular[c] > 0 ? 0.0 : 1.0;
  }
  return bundle;
}

}  // namespace ocean
