#pragma once

#include <cmath>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/labels.hpp"
#include "ocean/network.hpp"
#include "ocean/ops.hpp"

namespace ocean {

struct LossWeights {
  double lambda1 = 1.0;  // object-aware classification
  double lambda2 = 1.2;  // regular-region classification
  // Sum instead of mean over regression samples.
  bool reg_sum = false;

  void validate() const {
    if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("loss weights must be >= 0");
  }
};

inline double total_loss(double l_reg, double l_o, double l_r, const LossWeights& w) {
  const double total = l_reg + w.lambda1 * l_o + w.lambda2 * l_r;
  if (!std::isfinite(total)) throw NumericError("total loss is not finite");
  return total;
}

template <typename T>
ad::Var<T> total_loss(ad::Var<T> l_reg, ad::Var<T> l_o, ad::Var<T> l_r, const LossWeights& w) {
  return ad::add(ad::add(l_reg, ad::scale(l_o, w.lambda1)), ad::scale(l_r, w.lambda2));
}

template <typename T>
struct LossTerms {
  ad::Var<T> reg;
  ad::Var<T> objectaware;
  ad::Var<T> regular;
  ad::Var<T> total;
};

/// Fills labels.cls_objectaware with the IoU between each in-box cell's
/// predicted box and the ground truth.
template <typename T>
void fill_objectaware_labels(LabelBundle& labels, const Tensor<T>& distances,
                             const GridSpec& grid, const BBox& gt) {
  labels.cls_objectaware = objectaware_labels(decode_boxes(distances, grid), gt, labels.reg_mask);
}

/// Joint objective of one sample. The object-aware BCE is evaluated on the
/// regression samples only; the regular BCE balances centre positives
/// against all remaining cells.
template <typename T>
LossTerms<T> sample_losses(const HeadOutputs<T>& out, const LabelBundle& labels,
                           const LossWeights& w) {
  const auto mask = labels.reg_mask.template cast<T>();
  const Tensor<T> none(mask.shape());
  LossTerms<T> terms;
  terms.reg = ad::iou_loss(out.distances, labels.reg_targets.template cast<T>(), mask, 1e-6,
                           w.reg_sum ? ad::Reduction::sum : ad::Reduction::mean);
  terms.objectaware =
      ad::bce_loss(out.p_o, labels.cls_objectaware.template cast<T>(), mask, none);
  terms.regular = ad::bce_loss(out.p_r, labels.cls_regular.template cast<T>(),
                               labels.cls_regular.template cast<T>(),
                               labels.cls_neg_mask.template cast<T>());
  terms.total = total_loss(terms.reg, terms.objectaware, terms.regular, w);
  return terms;
}

}  // namespace ocean
