#pragma once

// COCO-style detection evaluation: greedy IoU matching per class and per IoU
// threshold (0.50:0.05:0.95), 101-point interpolated average precision.
//
// Matching rules:
//  - detections are visited in descending score; equal scores are ordered by
//    proposal_id, then image_id, then input position;
//  - a detection takes the unmatched, non-ignored ground truth in its image
//    with the highest IoU >= threshold (equal IoU: earliest ground truth);
//  - failing that, a detection overlapping an ignored ground truth is
//    dropped from the PR curve (neither TP nor FP); ignored ground truth may
//    absorb any number of detections and never counts toward recall;
//  - classes without non-ignored ground truth are excluded from the mean.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "viewmatch/core.hpp"
#include "viewmatch/rle.hpp"

namespace viewmatch {

struct GroundTruth {
  std::string image_id;
  std::string class_id;
  BBox bbox;
  std::optional<RleMask> mask;
  bool ignore = false;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Ground truth plus the universe of images and classes it covers. Images
/// with no annotations (pure background) must still be listed so detections
/// on them are accepted.
struct GroundTruthSet {
  std::vector<std::string> image_ids;
  std::vector<std::string> class_ids;
  std::vector<GroundTruth> annotations;

  friend bool operator==(const GroundTruthSet&, const GroundTruthSet&) = default;
};

enum class EvalMode { bbox, mask };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::bbox ? "bbox" : "mask"; }

inline EvalMode parse_eval_mode(std::string_view s) {
  if (s == "bbox") return EvalMode::bbox;
  if (s == "mask" || s == "segm") return EvalMode::mask;
  fail(ErrorKind::validation, "unknown evaluation mode '" + std::string(s) + "'");
}

inline constexpr std::size_t kNumIouThresholds = 10;
inline constexpr std::size_t kNumRecallPoints = 101;

inline std::array<double, kNumIouThresholds> iou_thresholds() {
  std::array<double, kNumIouThresholds> t{};
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

struct EvalOptions {
  EvalMode mode = EvalMode::bbox;
  std::optional<std::size_t> max_dets_per_image;  // per image and class, COCO-style
};

struct EvalReport {
  EvalMode mode = EvalMode::bbox;
  std::vector<std::string> class_ids;
  std::vector<std::size_t> gt_counts;  // non-ignored ground truth per class
  // Per class; nullopt for classes without ground truth.
  std::vector<std::optional<std::array<double, kNumIouThresholds>>> ap_per_class_per_iou;
  std::vector<std::optional<double>> ap_per_class;
  std::array<double, kNumIouThresholds> map_per_iou{};
  double map = 0.0;
};

inline double iou_bbox(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

inline double iou_mask(const RleMask& a, const RleMask& b) { return rle::iou(a, b); }

/// 101-point interpolated AP from a TP (1) / FP (0) sequence in score order.
inline double average_precision(std::span<const std::uint8_t> is_tp, std::size_t num_positives) {
  if (num_positives == 0) return 0.0;
  const std::size_t n = is_tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_tp[i] != 0 ? 1 : 0;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_positives);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  for (std::size_t k = 0; k < kNumRecallPoints; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / static_cast<double>(kNumRecallPoints);
}

namespace detail {

inline double overlap(const Detection& d, const GroundTruth& g, EvalMode mode) {
  if (mode == EvalMode::bbox) return iou_bbox(d.bbox, g.bbox);
  return iou_mask(*d.mask, *g.mask);
}

}  // namespace detail

inline EvalReport evaluate(std::span<const Detection> detections, const GroundTruthSet& gt,
                           const EvalOptions& options = {}) {
  const EvalMode mode = options.mode;
  std::unordered_map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < gt.class_ids.size(); ++c) class_index[gt.class_ids[c]] = c;
  std::unordered_map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < gt.image_ids.size(); ++i) image_index[gt.image_ids[i]] = i;

  const std::size_t num_classes = gt.class_ids.size();
  // (class, image) -> ground truth indices, in file order.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> gt_cells;
  std::vector<std::size_t> positives(num_classes, 0);
  for (std::size_t g = 0; g < gt.annotations.size(); ++g) {
    const auto& a = gt.annotations[g];
    const auto ci = class_index.find(a.class_id);
    const auto ii = image_index.find(a.image_id);
    if (ci == class_index.end() || ii == image_index.end()) {
      fail(ErrorKind::data, "ground truth " + std::to_string(g) + " references unknown " +
                                (ci == class_index.end() ? "class '" + a.class_id + "'"
                                                         : "image '" + a.image_id + "'"));
    }
    if (mode == EvalMode::mask && !a.mask) {
      fail(ErrorKind::data, "ground truth " + std::to_string(g) + " has no mask");
    }
    gt_cells[{ci->second, ii->second}].push_back(g);
    if (!a.ignore) ++positives[ci->second];
  }

  std::vector<std::vector<std::size_t>> dets_by_class(num_classes);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    const auto& det = detections[d];
    const auto ci = class_index.find(det.class_id);
    if (ci == class_index.end()) {
      fail(ErrorKind::data, "detection " + std::to_string(d) + " references unknown class '" +
                                det.class_id + "'");
    }
    if (!image_index.contains(det.image_id)) {
      fail(ErrorKind::data, "detection " + std::to_string(d) + " references unknown image '" +
                                det.image_id + "'");
    }
    if (mode == EvalMode::mask && !det.mask) {
      fail(ErrorKind::data, "detection " + std::to_string(d) + " has no mask");
    }
    dets_by_class[ci->second].push_back(d);
  }

  const auto thresholds = iou_thresholds();
  EvalReport report;
  report.mode = mode;
  report.class_ids = gt.class_ids;
  report.gt_counts = positives;
  report.ap_per_class_per_iou.resize(num_classes);
  report.ap_per_class.resize(num_classes);

  for (std::size_t c = 0; c < num_classes; ++c) {
    if (positives[c] == 0) continue;
    auto order = dets_by_class[c];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& da = detections[a];
      const auto& db = detections[b];
      if (da.score != db.score) return da.score > db.score;
      return std::tie(da.proposal_id, da.image_id) < std::tie(db.proposal_id, db.image_id);
    });
    if (options.max_dets_per_image) {
      std::unordered_map<std::string, std::size_t> kept;
      std::erase_if(order, [&](std::size_t d) {
        return ++kept[detections[d].image_id] > *options.max_dets_per_image;
      });
    }

    // IoU of each detection against its cell's ground truth, shared by all thresholds.
    std::vector<std::vector<double>> ious(order.size());
    std::vector<const std::vector<std::size_t>*> cells(order.size(), nullptr);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& det = detections[order[k]];
      const auto it = gt_cells.find({c, image_index.at(det.image_id)});
      if (it == gt_cells.end()) continue;
      cells[k] = &it->second;
      for (std::size_t g : it->second) ious[k].push_back(detail::overlap(det, gt.annotations[g], mode));
    }

    std::array<double, kNumIouThresholds> ap{};
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<bool> taken(gt.annotations.size(), false);
      std::vector<std::uint8_t> sequence;
      sequence.reserve(order.size());
      for (std::size_t k = 0; k < order.size(); ++k) {
        if (!cells[k]) {
          sequence.push_back(0);
          continue;
        }
        const auto& cell = *cells[k];
        std::optional<std::size_t> best;
        bool hits_ignored = false;
        for (std::size_t j = 0; j < cell.size(); ++j) {
          const double v = ious[k][j];
          if (v < thresholds[t]) continue;
          const auto& g = gt.annotations[cell[j]];
          if (g.ignore) {
            hits_ignored = true;
            continue;
          }
          if (taken[cell[j]]) continue;
          if (!best || v > ious[k][*best]) best = j;
        }
        if (best) {
          taken[cell[*best]] = true;
          sequence.push_back(1);
        } else if (!hits_ignored) {
          sequence.push_back(0);
        }
      }
      ap[t] = average_precision(sequence, positives[c]);
    }
    report.ap_per_class_per_iou[c] = ap;
    report.ap_per_class[c] =
        std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
  }

  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!report.ap_per_class[c]) continue;
    ++counted;
    total += *report.ap_per_class[c];
    for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
      report.map_per_iou[t] += (*report.ap_per_class_per_iou[c])[t];
    }
  }
  if (counted > 0) {
    report.map = total / static_cast<double>(counted);
    for (double& m : report.map_per_iou) m /= static_cast<double>(counted);
  }
  return report;
}

}  // namespace viewmatch
