#pragma once

// Image -> distmap + embeddings -> seeds -> labels, and dataset evaluation.

#include <string>
#include <vector>

#include "wnet/clusterer.hpp"
#include "wnet/datagen.hpp"
#include "wnet/distfield.hpp"
#include "wnet/metrics.hpp"
#include "wnet/network.hpp"

namespace wnet {

struct Sample {
  Image image;
  LabelMap labels;
  Mask foreground;
};

using Dataset = std::vector<Sample>;

enum class ClusterMethod { angular, mean_shift };

inline std::string to_string(ClusterMethod m) { return m == ClusterMethod::angular ? "angular" : "meanshift"; }

template <typename T>
struct Prediction {
  DistMap distmap;
  EmbeddingField<T> embeddings;
  SegmentationResult segmentation;
};

template <typename T>
DistMap to_distmap(const Tensor4<T>& t) {
  detail::require(t.n == 1 && t.c == 1, "expected a [1, H, W, 1] distance tensor, got ", t.shape_string());
  DistMap d(t.h, t.w);
  for (size_t i = 0; i < t.data.size(); ++i) d.values[i] = static_cast<float>(t.data[i]);
  return d;
}

/// Runs the network on a raw image and clusters its embeddings. The mask, when
/// given, removes labels outside the foreground.
template <typename T>
Prediction<T> predict(const Image& image, ModelParams<T>& params, const TopologySpec& spec, const ClusterConfig& cc,
                      ClusterMethod method = ClusterMethod::angular, const Mask* foreground = nullptr) {
  auto fwd = forward(image_tensor<T>(standardize_image(image)), params, spec);
  Prediction<T> out;
  out.distmap = to_distmap(fwd.tape.value(fwd.distmap));
  out.embeddings = to_embedding_field(fwd.tape.value(fwd.embeddings));
  if (method == ClusterMethod::angular) {
    out.segmentation = angular_cluster(out.embeddings, extract_seeds(out.distmap, cc.threshold_frac, cc.seed_window), cc);
  } else {
    out.segmentation = mean_shift_cluster(out.embeddings, cc, foreground);
  }
  if (foreground) out.segmentation = apply_foreground_mask(out.segmentation, *foreground);
  return out;
}

struct EvalReport {
  std::vector<double> sbd;                // per image
  std::vector<std::vector<double>> ap;    // per image, per threshold
  std::vector<double> thresholds;
  std::vector<double> intra_consistency;  // per image, mean S_cos(e_i, mu_c)
  double msbd = 0.0;
  double map = 0.0;
};

/// Scores a model on labelled samples using the ground-truth foreground masks.
template <typename T>
EvalReport evaluate(const Dataset& data, ModelParams<T>& params, const TopologySpec& spec, const ClusterConfig& cc,
                    ClusterMethod method = ClusterMethod::angular) {
  detail::require(!data.empty(), "cannot evaluate on an empty dataset");
  EvalReport r;
  r.thresholds = default_iou_thresholds();
  std::vector<LabelPair> pairs;
  for (const auto& s : data) {
    auto pred = predict(s.image, params, spec, cc, method, &s.foreground);
    r.intra_consistency.push_back(static_cast<double>(intra_consistency(pred.embeddings, s.labels)));
    r.sbd.push_back(symmetric_best_dice(pred.segmentation.labels, s.labels));
    r.ap.push_back(average_precision(pred.segmentation.labels, s.labels, r.thresholds));
    pairs.emplace_back(std::move(pred.segmentation.labels), s.labels);
  }
  r.msbd = msbd(pairs);
  r.map = map_iou(pairs, r.thresholds);
  return r;
}

}  // namespace wnet
