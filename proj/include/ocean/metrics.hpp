#pragma once

// Tracking metrics over prediction and ground-truth logs, plus the two run
// protocols (single continuous pass, and restart after failure).

#include <array>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/geometry.hpp"
#include "ocean/synthetic.hpp"

namespace ocean {

struct MetricsReport {
  double ao = 0;           // mean IoU
  double sr50 = 0;         // fraction of frames with IoU >= 0.5
  double auc = 0;          // mean success rate over thresholds 0, 0.05, ..., 1
  double precision20 = 0;  // fraction of frames with centre error <= 20 px
  std::size_t failures = 0;
  std::size_t frames = 0;     // scored frames
  std::size_t sequences = 0;
};

/// Thresholds of the success curve.
inline std::array<double, 21> success_thresholds() {
  std::array<double, 21> t{};
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(k) * 0.05;
  return t;
}

inline double success_rate(const std::vector<double>& ious, double tau) {
  if (ious.empty()) return 0;
  std::size_t hit = 0;
  for (double v : ious) hit += v >= tau;
  return static_cast<double>(hit) / static_cast<double>(ious.size());
}

inline double center_error(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

/// Metrics of one sequence from per-frame overlaps and centre errors.
inline MetricsReport score_frames(const std::vector<double>& ious,
                                  const std::vector<double>& center_errors,
                                  std::size_t failures) {
  if (ious.size() != center_errors.size()) throw UsageError("score_frames: length mismatch");
  MetricsReport r;
  r.sequences = 1;
  r.frames = ious.size();
  r.failures = failures;
  if (ious.empty()) return r;
  double sum = 0;
  for (double v : ious) sum += v;
  r.ao = sum / static_cast<double>(ious.size());
  r.sr50 = success_rate(ious, 0.5);
  double auc = 0;
  const auto taus = success_thresholds();
  for (double tau : taus) auc += success_rate(ious, tau);
  r.auc = auc / static_cast<double>(taus.size());
  std::size_t close = 0;
  for (double e : center_errors) close += e <= 20.0;
  r.precision20 = static_cast<double>(close) / static_cast<double>(center_errors.size());
  return r;
}

/// Continuous protocol from two logs. The first line of the prediction log
/// echoes the initial box and is not scored. Each maximal run of frames with
/// zero overlap counts as one failure.
inline MetricsReport evaluate_continuous(const std::vector<BBox>& predictions,
                                         const std::vector<BBox>& ground_truth) {
  if (ground_truth.empty()) throw IngestionError("ground-truth log is empty");
  if (predictions.size() != ground_truth.size()) {
    throw IngestionError("prediction log has " + std::to_string(predictions.size()) +
                         " lines but ground truth has " + std::to_string(ground_truth.size()));
  }
  std::vector<double> ious, errs;
  std::size_t failures = 0;
  bool lost = false;
  for (std::size_t t = 1; t < predictions.size(); ++t) {
    const double o = iou(predictions[t], ground_truth[t]);
    ious.push_back(o);
    errs.push_back(center_error(predictions[t], ground_truth[t]));
    if (o <= 0 && !lost) ++failures;
    lost = o <= 0;
  }
  return score_frames(ious, errs, failures);
}

/// Mean of per-sequence rates; frame and failure counts are summed.
inline MetricsReport aggregate(const std::vector<MetricsReport>& per_sequence) {
  if (per_sequence.empty()) throw UsageError("aggregate: no sequences");
  MetricsReport r;
  for (const auto& s : per_sequence) {
    r.ao += s.ao;
    r.sr50 += s.sr50;
    r.auc += s.auc;
    r.precision20 += s.precision20;
    r.failures += s.failures;
    r.frames += s.frames;
    r.sequences += s.sequences;
  }
  const double n = static_cast<double>(per_sequence.size());
  r.ao /= n;
  r.sr50 /= n;
  r.auc /= n;
  r.precision20 /= n;
  return r;
}

inline std::string to_key_value(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "ao=%.6f\nsr50=%.6f\nauc=%.6f\nprecision20=%.6f\nfailures=%zu\nframes=%zu\n"
                "sequences=%zu\n",
                r.ao, r.sr50, r.auc, r.precision20, r.failures, r.frames, r.sequences);
  return buf;
}

/// Anything with init(frame, box) and track(frame) -> BBox.
template <typename Tr>
concept SequenceTracker = requires(Tr t, const Image& f, const BBox& b) {
  t.init(f, b);
  { t.track(f) } -> std::convertible_to<BBox>;
};

/// One pass over the sequence; the returned log starts with the initial box.
template <SequenceTracker Tr>
std::vector<BBox> run_continuous(Tr& tracker, const Sequence& seq) {
  if (seq.frames.empty() || seq.gt.size() != seq.frames.size()) {
    throw IngestionError("sequence frames and ground truth disagree");
  }
  std::vector<BBox> log{seq.gt[0]};
  tracker.init(seq.frames[0], seq.gt[0]);
  for (std::size_t t = 1; t < seq.frames.size(); ++t) log.push_back(tracker.track(seq.frames[t]));
  return log;
}

/// Restart protocol: a frame with zero overlap is a failure; the tracker is
/// re-initialised from ground truth `skip` frames later. Frames between the
/// failure and the re-initialisation, and the re-initialisation frame itself,
/// are not scored.
template <SequenceTracker Tr>
MetricsReport evaluate_restart(Tr& tracker, const Sequence& seq, std::size_t skip = 5) {
  if (seq.frames.empty() || seq.gt.size() != seq.frames.size()) {
    throw IngestionError("sequence frames and ground truth disagree");
  }
  std::vector<double> ious, errs;
  std::size_t failures = 0;
  tracker.init(seq.frames[0], seq.gt[0]);
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    const BBox pred = tracker.track(seq.frames[t]);
    const double o = iou(pred, seq.gt[t]);
    ious.push_back(o);
    errs.push_back(center_error(pred, seq.gt[t]));
    if (o <= 0) {
      ++failures;
      t += skip;
      if (t < seq.frames.size()) tracker.init(seq.frames[t], seq.gt[t]);
    }
  }
  return score_frames(ious, errs, failures);
}

/// Baseline that never moves the initial box.
struct StaticBoxTracker {
  BBox box;
  void init(const Image&, const BBox& b) { box = b; }
  BBox track(const Image&) const { return box; }
};

}  // namespace ocean
