#pragma once

// Embeddings + seeds -> instance labels.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "wnet/distfield.hpp"
#include "wnet/losses.hpp"

namespace wnet {

struct ClusterConfig {
  double delta_deg = 45.0;
  double threshold_frac = 0.7;
  int seed_window = 5;
  /// Mean-shift kernel radius in cosine distance (1 - cos).
  double bandwidth = 0.5;
  int max_iterations = 50;
  /// Grow each angular cluster only through 4-connected qualifying pixels.
  bool spatial_connectivity = false;

  void validate() const {
    detail::require(delta_deg > 0.0 && delta_deg < 90.0, "delta_a must be in (0, 90) degrees, got ", delta_deg);
    detail::require(threshold_frac > 0.0 && threshold_frac <= 1.0, "threshold_frac must be in (0, 1]");
    detail::require(seed_window >= 1, "seed window must be >= 1");
    detail::require(bandwidth > 0.0 && bandwidth < 2.0, "bandwidth must be in (0, 2)");
    detail::require(max_iterations >= 1, "max_iterations must be >= 1");
  }
};

struct SegmentationResult {
  LabelMap labels;
  /// seeds[k] produced instance k + 1 (angular clustering only).
  SeedList seeds;
  int64_t unassigned = 0;
};

/// Seeds are visited strongest first; each claims every unclaimed pixel whose
/// embedding lies within delta_a of the seed pixel's embedding. A seed whose
/// own pixel is already claimed is skipped.
template <typename T>
SegmentationResult angular_cluster(const EmbeddingField<T>& emb, const SeedList& seeds, const ClusterConfig& cfg = {}) {
  cfg.validate();
  detail::require(emb.pixels() > 0 && emb.dim > 0, "angular_cluster: empty embedding field");
  const int h = emb.height, w = emb.width;
  const T min_cos = static_cast<T>(std::cos(cfg.delta_deg * std::numbers::pi / 180.0));
  SeedList order = seeds;
  std::stable_sort(order.begin(), order.end(), [](const Seed& a, const Seed& b) { return a.value > b.value; });

  SegmentationResult out;
  out.labels = LabelMap(h, w);
  auto& lab = out.labels;
  std::vector<int> stack;
  for (const auto& s : order) {
    detail::require(s.row >= 0 && s.col >= 0 && s.row < h && s.col < w, "seed (", s.row, ", ", s.col,
                    ") outside ", h, "x", w, " field");
    if (lab.at(s.row, s.col) != 0) continue;
    const int32_t id = static_cast<int32_t>(out.seeds.size()) + 1;
    out.seeds.push_back(s);
    const auto ref = emb.pixel(s.row, s.col);
    auto qualifies = [&](size_t p) { return lab.ids[p] == 0 && cosine_similarity(emb.pixel(p), ref) >= min_cos; };
    if (!cfg.spatial_connectivity) {
      for (size_t p = 0; p < emb.pixels(); ++p)
        if (qualifies(p)) lab.ids[p] = id;
      lab.at(s.row, s.col) = id;
      continue;
    }
    const int start = s.row * w + s.col;
    lab.ids[start] = id;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[1] < 0 || q[0] >= h || q[1] >= w) continue;
        const int r = q[0] * w + q[1];
        if (qualifies(r)) {
          lab.ids[r] = id;
          stack.push_back(r);
        }
      }
    }
  }
  out.unassigned = std::count(lab.ids.begin(), lab.ids.end(), 0);
  return out;
}

/// Mode seeking on the unit sphere with a flat cosine-distance kernel.
/// Converged modes are merged greedily (densest first) when closer than
/// bandwidth / 2; each pixel takes its nearest surviving mode.
///
/// `visit_order`, when given, permutes the order trajectories are computed in;
/// the result does not depend on it.
template <typename T>
SegmentationResult mean_shift_cluster(const EmbeddingField<T>& emb, const ClusterConfig& cfg = {},
                                      const Mask* foreground = nullptr,
                                      const std::vector<size_t>* visit_order = nullptr) {
  cfg.validate();
  const int E = emb.dim;
  SegmentationResult out;
  out.labels = LabelMap(emb.height, emb.width);
  std::vector<size_t> pts;
  for (size_t p = 0; p < emb.pixels(); ++p)
    if (!foreground || foreground->on[p]) pts.push_back(p);
  if (pts.empty()) return out;

  const size_t n = pts.size();
  std::vector<double> unit(n * E);
  for (size_t i = 0; i < n; ++i) {
    const auto e = emb.pixel(pts[i]);
    double s = 0;
    for (int k = 0; k < E; ++k) s += static_cast<double>(e[k]) * e[k];
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (int k = 0; k < E; ++k) unit[i * E + k] = e[k] * inv;
  }
  const double min_cos = 1.0 - cfg.bandwidth;

  std::vector<double> modes(n * E);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  if (visit_order) {
    detail::require(visit_order->size() == n, "visit_order must permute the ", n, " clustered pixels");
    order = *visit_order;
  }
  std::vector<double> m(E), next(E);
  for (size_t i : order) {
    std::copy_n(&unit[i * E], E, m.begin());
    for (int it = 0; it < cfg.max_iterations; ++it) {
      std::fill(next.begin(), next.end(), 0.0);
      for (size_t j = 0; j < n; ++j) {
        const double* u = &unit[j * E];
        double c = 0;
        for (int k = 0; k < E; ++k) c += m[k] * u[k];
        if (c >= min_cos)
          for (int k = 0; k < E; ++k) next[k] += u[k];
      }
      double s = 0;
      for (double v : next) s += v * v;
      s = std::sqrt(s);
      if (s < 1e-12) break;
      double shift = 0;
      for (int k = 0; k < E; ++k) {
        next[k] /= s;
        shift += m[k] * next[k];
      }
      m = next;
      if (1.0 - shift < 1e-9) break;
    }
    std::copy(m.begin(), m.end(), &modes[i * E]);
  }

  // Density of each mode, then greedy merge in a visit-order independent order.
  std::vector<size_t> density(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const double* mi = &modes[i * E];
    for (size_t j = 0; j < n; ++j) {
      double c = 0;
      for (int k = 0; k < E; ++k) c += mi[k] * unit[j * E + k];
      density[i] += c >= min_cos;
    }
  }
  std::vector<size_t> rank(n);
  for (size_t i = 0; i < n; ++i) rank[i] = i;
  std::sort(rank.begin(), rank.end(), [&](size_t a, size_t b) {
    if (density[a] != density[b]) return density[a] > density[b];
    return pts[a] < pts[b];
  });
  const double merge_cos = 1.0 - cfg.bandwidth / 2.0;
  std::vector<size_t> centers;
  for (size_t i : rank) {
    bool merged = false;
    for (size_t c : centers) {
      double d = 0;
      for (int k = 0; k < E; ++k) d += modes[i * E + k] * modes[c * E + k];
      if (d >= merge_cos) {
        merged = true;
        break;
      }
    }
    if (!merged) centers.push_back(i);
  }

  for (size_t i = 0; i < n; ++i) {
    double best = -2.0;
    size_t arg = 0;
    for (size_t c = 0; c < centers.size(); ++c) {
      double d = 0;
      for (int k = 0; k < E; ++k) d += unit[i * E + k] * modes[centers[c] * E + k];
      if (d > best) {
        best = d;
        arg = c;
      }
    }
    out.labels.ids[pts[i]] = static_cast<int32_t>(arg + 1);
  }
  out.labels = canonicalize_by_scan(out.labels);
  return out;
}

/// Drops labels outside `mask`, then compacts ids (empty instances vanish).
inline SegmentationResult apply_foreground_mask(const SegmentationResult& in, const Mask& mask) {
  detail::require(in.labels.height == mask.height && in.labels.width == mask.width, "mask ", mask.height, "x",
                  mask.width, " does not match labels ", in.labels.height, "x", in.labels.width);
  LabelMap masked = in.labels;
  for (size_t p = 0; p < masked.ids.size(); ++p)
    if (!mask.on[p]) masked.ids[p] = 0;
  auto canon = canonicalize(masked);
  SegmentationResult out;
  out.labels = std::move(canon.labels);
  if (!in.seeds.empty()) {
    out.seeds.resize(canon.mapping.size());
    for (const auto& [old_id, new_id] : canon.mapping)
      if (old_id >= 1 && static_cast<size_t>(old_id) <= in.seeds.size()) out.seeds[new_id - 1] = in.seeds[old_id - 1];
  }
  for (size_t p = 0; p < out.labels.ids.size(); ++p) out.unassigned += mask.on[p] && out.labels.ids[p] == 0;
  return out;
}

}  // namespace wnet
