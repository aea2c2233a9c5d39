#pragma once

// Dice, (symmetric) best Dice, IoU matching and counting mAP.

#include <algorithm>
#include <cstdint>
#include <tuple>
#include <utility>
#include <vector>

#include "wnet/core.hpp"

namespace wnet {

/// Overlap counts between every predicted and ground-truth instance.
struct MatchTable {
  int pred_count = 0;
  int gt_count = 0;
  std::vector<int64_t> pred_area;     // index 1..pred_count
  std::vector<int64_t> gt_area;       // index 1..gt_count
  std::vector<int64_t> intersection;  // (pred_count + 1) x (gt_count + 1)

  int64_t inter(int p, int g) const { return intersection[static_cast<size_t>(p) * (gt_count + 1) + g]; }
  int64_t union_of(int p, int g) const { return pred_area[p] + gt_area[g] - inter(p, g); }

  double dice(int p, int g) const {
    const int64_t denom = pred_area[p] + gt_area[g];
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(inter(p, g)) / static_cast<double>(denom);
  }

  double iou(int p, int g) const {
    const int64_t u = union_of(p, g);
    return u == 0 ? 0.0 : static_cast<double>(inter(p, g)) / static_cast<double>(u);
  }
};

inline MatchTable match_table(const LabelMap& pred, const LabelMap& gt) {
  detail::require(pred.height == gt.height && pred.width == gt.width, "label maps differ in size: ", pred.height,
                  "x", pred.width, " vs ", gt.height, "x", gt.width);
  MatchTable t;
  t.pred_count = pred.max_id();
  t.gt_count = gt.max_id();
  t.pred_area.assign(static_cast<size_t>(t.pred_count) + 1, 0);
  t.gt_area.assign(static_cast<size_t>(t.gt_count) + 1, 0);
  t.intersection.assign((static_cast<size_t>(t.pred_count) + 1) * (t.gt_count + 1), 0);
  for (size_t i = 0; i < pred.ids.size(); ++i) {
    const int p = pred.ids[i], g = gt.ids[i];
    ++t.pred_area[p];
    ++t.gt_area[g];
    ++t.intersection[static_cast<size_t>(p) * (t.gt_count + 1) + g];
  }
  return t;
}

/// 2|A n B| / (|A| + |B|); two empty sets score 0.
inline double dice(const Mask& a, const Mask& b) {
  detail::require(a.on.size() == b.on.size(), "dice: masks differ in size");
  int64_t na = 0, nb = 0, both = 0;
  for (size_t i = 0; i < a.on.size(); ++i) {
    na += a.on[i] != 0;
    nb += b.on[i] != 0;
    both += (a.on[i] != 0) && (b.on[i] != 0);
  }
  return na + nb == 0 ? 0.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Mean over instances of `a` of the best Dice against any instance of `b`.
/// Instance ids absent from `a` (gaps) are skipped.
inline double best_dice(const LabelMap& a, const LabelMap& b) {
  const auto t = match_table(a, b);
  double total = 0.0;
  int counted = 0;
  for (int i = 1; i <= t.pred_count; ++i) {
    if (t.pred_area[i] == 0) continue;
    double best = 0.0;
    for (int j = 1; j <= t.gt_count; ++j) best = std::max(best, t.dice(i, j));
    total += best;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / counted;
}

inline bool has_instances(const LabelMap& l) {
  return std::any_of(l.ids.begin(), l.ids.end(), [](int32_t v) { return v != 0; });
}

/// min(BD(a, b), BD(b, a)). Two instance-free maps agree perfectly (1).
inline double symmetric_best_dice(const LabelMap& a, const LabelMap& b) {
  if (!has_instances(a) && !has_instances(b)) return 1.0;
  return std::min(best_dice(a, b), best_dice(b, a));
}

using LabelPair = std::pair<LabelMap, LabelMap>;  // (prediction, ground truth)

inline double msbd(const std::vector<LabelPair>& data) {
  detail::require(!data.empty(), "msbd needs at least one image");
  double s = 0.0;
  for (const auto& [pred, gt] : data) s += symmetric_best_dice(pred, gt);
  return s / static_cast<double>(data.size());
}

/// IoU thresholds 0.50, 0.55, ..., 0.90.
inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int k = 50; k <= 90; k += 5) t.push_back(k / 100.0);
  return t;
}

/// Greedy one-to-one matching by descending IoU; ties broken by (gt id, pred id).
/// Returns the IoU of each matched pair.
inline std::vector<double> greedy_iou_matches(const MatchTable& t) {
  std::vector<std::tuple<double, int, int>> pairs;  // iou, gt, pred
  for (int p = 1; p <= t.pred_count; ++p)
    for (int g = 1; g <= t.gt_count; ++g)
      if (t.inter(p, g) > 0) pairs.emplace_back(t.iou(p, g), g, p);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
  });
  std::vector<uint8_t> gt_used(static_cast<size_t>(t.gt_count) + 1, 0), pred_used(static_cast<size_t>(t.pred_count) + 1, 0);
  std::vector<double> matched;
  for (const auto& [iou, g, p] : pairs) {
    if (gt_used[g] || pred_used[p]) continue;
    gt_used[g] = pred_used[p] = 1;
    matched.push_back(iou);
  }
  return matched;
}

/// Counting AP per threshold: TP / (TP + FP + FN). An image with neither
/// predictions nor ground truth scores 1.
inline std::vector<double> average_precision(const LabelMap& pred, const LabelMap& gt,
                                             const std::vector<double>& thresholds) {
  detail::require(!thresholds.empty(), "need at least one IoU threshold");
  const auto t = match_table(pred, gt);
  int n_pred = 0, n_gt = 0;
  for (int p = 1; p <= t.pred_count; ++p) n_pred += t.pred_area[p] > 0;
  for (int g = 1; g <= t.gt_count; ++g) n_gt += t.gt_area[g] > 0;
  const auto matched = greedy_iou_matches(t);
  std::vector<double> ap;
  for (double thr : thresholds) {
    detail::require(thr > 0.0 && thr < 1.0, "IoU threshold must be in (0, 1), got ", thr);
    int tp = 0;
    for (double iou : matched) tp += iou >= thr;
    const int denom = n_pred + n_gt - tp;  // TP + FP + FN
    ap.push_back(denom == 0 ? 1.0 : static_cast<double>(tp) / denom);
  }
  return ap;
}

/// Mean over images and thresholds of the counting AP.
inline double map_iou(const std::vector<LabelPair>& data, const std::vector<double>& thresholds) {
  detail::require(!data.empty(), "map_iou needs at least one image");
  double s = 0.0;
  for (const auto& [pred, gt] : data) {
    const auto ap = average_precision(pred, gt, thresholds);
    for (double v : ap) s += v;
  }
  return s / static_cast<double>(data.size() * thresholds.size());
}

}  // namespace wnet
