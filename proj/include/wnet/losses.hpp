#pragma once

// Cosine embedding loss with neighbor constraints, distance-regression MSE,
// and their analytic gradients.
//
//   L_emb   = lambda * L_inter + L_intra
//   L_inter = 1/C sum_A 1/|N_A| sum_{B in N_A} cos(mu_A, mu_B)
//   L_intra = 1/C sum_c 1/|c| sum_{i in c} (1 - cos(e_i, mu_c))
//
// mu_c is the plain mean of the pixel embeddings of instance c (not
// re-normalized). Instances with no neighbors contribute 0 to L_inter.

#include <cmath>
#include <span>
#include <vector>

#include "wnet/core.hpp"
#include "wnet/neighbors.hpp"

namespace wnet {

template <typename T>
struct EmbeddingField {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<T> values;
  bool normalized = false;

  EmbeddingField() = default;
  EmbeddingField(int h, int w, int e, T fill = T(0))
      : height(h), width(w), dim(e), values(static_cast<size_t>(h) * w * e, fill) {}

  std::span<T> pixel(size_t p) { return {values.data() + p * dim, static_cast<size_t>(dim)}; }
  std::span<const T> pixel(size_t p) const { return {values.data() + p * dim, static_cast<size_t>(dim)}; }
  std::span<const T> pixel(int y, int x) const { return pixel(static_cast<size_t>(y) * width + x); }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

template <typename T>
struct InstanceStats {
  int count = 0;
  int dim = 0;
  std::vector<int64_t> pixels;  // index 1..count
  std::vector<T> means;         // (count + 1) x dim, row 0 unused

  std::span<const T> mean(int c) const { return {means.data() + static_cast<size_t>(c) * dim, static_cast<size_t>(dim)}; }
};

struct LossConfig {
  double lambda = 1.0;
  bool include_intra = true;
  double epsilon = 1e-8;
};

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

template <typename T>
T norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// a.b / (max(|a|, eps) * max(|b|, eps)).
template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b, double eps = 1e-8) {
  detail::require(a.size() == b.size(), "cosine_similarity: length ", a.size(), " vs ", b.size());
  const T na = std::max(norm(a), static_cast<T>(eps));
  const T nb = std::max(norm(b), static_cast<T>(eps));
  const T c = dot(a, b) / (na * nb);
  return std::clamp(c, T(-1), T(1));
}

namespace detail {

/// Accumulates scale * d cos(a, b) / d a into `out`.
template <typename T>
void add_cosine_grad(std::span<const T> a, std::span<const T> b, double eps, T scale, std::span<T> out) {
  const T raw_na = norm(a);
  const T na = std::max(raw_na, static_cast<T>(eps));
  const T nb = std::max(norm(b), static_cast<T>(eps));
  const T c = dot(a, b) / (na * nb);
  const T inv = scale / (na * nb);
  const T radial = raw_na > static_cast<T>(eps) ? scale * c / (raw_na * raw_na) : T(0);
  for (size_t k = 0; k < a.size(); ++k) out[k] += inv * b[k] - radial * a[k];
}

template <typename T>
void check_shapes(const EmbeddingField<T>& emb, const LabelMap& labels) {
  require(emb.height == labels.height && emb.width == labels.width, "embedding field ", emb.height, "x", emb.width,
          " does not match label map ", labels.height, "x", labels.width);
  require(emb.values.size() == emb.pixels() * static_cast<size_t>(emb.dim), "embedding field storage size mismatch");
}

}  // namespace detail

template <typename T>
InstanceStats<T> instance_stats(const EmbeddingField<T>& emb, const LabelMap& labels) {
  detail::check_shapes(emb, labels);
  InstanceStats<T> st;
  st.count = labels.max_id();
  st.dim = emb.dim;
  st.pixels.assign(static_cast<size_t>(st.count) + 1, 0);
  st.means.assign((static_cast<size_t>(st.count) + 1) * emb.dim, T(0));
  for (size_t p = 0; p < labels.pixels(); ++p) {
    const int c = labels.ids[p];
    if (c == 0) continue;
    ++st.pixels[c];
    const auto e = emb.pixel(p);
    for (int k = 0; k < emb.dim; ++k) st.means[static_cast<size_t>(c) * emb.dim + k] += e[k];
  }
  for (int c = 1; c <= st.count; ++c) {
    detail::require(st.pixels[c] > 0, "instance ", c, " has no pixels; label map is not canonical");
    for (int k = 0; k < emb.dim; ++k) st.means[static_cast<size_t>(c) * emb.dim + k] /= static_cast<T>(st.pixels[c]);
  }
  return st;
}

template <typename T>
T intra_loss(const EmbeddingField<T>& emb, const LabelMap& labels, const InstanceStats<T>& stats, double eps = 1e-8) {
  if (stats.count == 0) return T(0);
  std::vector<T> per(static_cast<size_t>(stats.count) + 1, T(0));
  for (size_t p = 0; p < labels.pixels(); ++p) {
    const int c = labels.ids[p];
    if (c != 0) per[c] += T(1) - cosine_similarity(emb.pixel(p), stats.mean(c), eps);
  }
  T total = 0;
  for (int c = 1; c <= stats.count; ++c) total += per[c] / static_cast<T>(stats.pixels[c]);
  return total / static_cast<T>(stats.count);
}

template <typename T>
T inter_loss(const InstanceStats<T>& stats, const NeighborGraph& graph, double eps = 1e-8) {
  if (stats.count == 0) return T(0);
  detail::require(graph.instance_count() == stats.count, "neighbor graph covers ", graph.instance_count(),
                  " instances, stats cover ", stats.count);
  T total = 0;
  for (int a = 1; a <= stats.count; ++a) {
    const auto& nb = graph.neighbors(a);
    if (nb.empty()) continue;
    T sum = 0;
    for (int b : nb) sum += cosine_similarity(stats.mean(a), stats.mean(b), eps);
    total += sum / static_cast<T>(nb.size());
  }
  return total / static_cast<T>(stats.count);
}

template <typename T>
T embedding_loss(const EmbeddingField<T>& emb, const LabelMap& labels, const NeighborGraph& graph,
                 const LossConfig& cfg = {}) {
  const auto stats = instance_stats(emb, labels);
  T loss = static_cast<T>(cfg.lambda) * inter_loss(stats, graph, cfg.epsilon);
  if (cfg.include_intra) loss += intra_loss(emb, labels, stats, cfg.epsilon);
  return loss;
}

template <typename T>
struct LossAndGrad {
  T loss = 0;
  T inter = 0;
  T intra = 0;
  EmbeddingField<T> grad;
};

/// Loss value and exact d L_emb / d e_i, including each pixel's contribution
/// to its instance mean. Background pixels receive zero gradient.
template <typename T>
LossAndGrad<T> embedding_loss_and_grad(const EmbeddingField<T>& emb, const LabelMap& labels,
                                       const NeighborGraph& graph, const LossConfig& cfg = {}) {
  const auto stats = instance_stats(emb, labels);
  LossAndGrad<T> out;
  out.grad = EmbeddingField<T>(emb.height, emb.width, emb.dim);
  const int C = stats.count;
  if (C == 0) return out;
  const double eps = cfg.epsilon;
  const int E = emb.dim;
  const T invC = T(1) / static_cast<T>(C);
  std::vector<T> mean_grad((static_cast<size_t>(C) + 1) * E, T(0));
  auto mean_grad_of = [&](int c) { return std::span<T>(mean_grad.data() + static_cast<size_t>(c) * E, E); };

  out.inter = inter_loss(stats, graph, eps);
  const T lambda = static_cast<T>(cfg.lambda);
  if (lambda != T(0)) {
    for (int a = 1; a <= C; ++a) {
      const auto& nb = graph.neighbors(a);
      if (nb.empty()) continue;
      const T w = lambda * invC / static_cast<T>(nb.size());
      for (int b : nb) {
        detail::add_cosine_grad(stats.mean(a), stats.mean(b), eps, w, mean_grad_of(a));
        detail::add_cosine_grad(stats.mean(b), stats.mean(a), eps, w, mean_grad_of(b));
      }
    }
  }
  out.loss = lambda * out.inter;

  if (cfg.include_intra) {
    out.intra = intra_loss(emb, labels, stats, eps);
    out.loss += out.intra;
    for (size_t p = 0; p < labels.pixels(); ++p) {
      const int c = labels.ids[p];
      if (c == 0) continue;
      const T w = -invC / static_cast<T>(stats.pixels[c]);
      detail::add_cosine_grad(emb.pixel(p), stats.mean(c), eps, w, out.grad.pixel(p));
      detail::add_cosine_grad(stats.mean(c), emb.pixel(p), eps, w, mean_grad_of(c));
    }
  }

  for (size_t p = 0; p < labels.pixels(); ++p) {
    const int c = labels.ids[p];
    if (c == 0) continue;
    const T share = T(1) / static_cast<T>(stats.pixels[c]);
    auto g = out.grad.pixel(p);
    const auto mg = mean_grad_of(c);
    for (int k = 0; k < E; ++k) g[k] += share * mg[k];
  }
  return out;
}

template <typename T>
EmbeddingField<T> embedding_loss_grad(const EmbeddingField<T>& emb, const LabelMap& labels,
                                      const NeighborGraph& graph, const LossConfig& cfg = {}) {
  return embedding_loss_and_grad(emb, labels, graph, cfg).grad;
}

/// Mean over all pixels of (pred - gt)^2.
template <typename T, typename U>
T distance_mse_loss(std::span<const T> pred, std::span<const U> gt) {
  detail::require(pred.size() == gt.size(), "distance_mse_loss: ", pred.size(), " vs ", gt.size(), " pixels");
  if (pred.empty()) return T(0);
  T s = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - static_cast<T>(gt[i]);
    s += d * d;
  }
  return s / static_cast<T>(pred.size());
}

template <typename T, typename U>
std::vector<T> distance_mse_grad(std::span<const T> pred, std::span<const U> gt) {
  detail::require(pred.size() == gt.size(), "distance_mse_grad: ", pred.size(), " vs ", gt.size(), " pixels");
  std::vector<T> g(pred.size());
  const T scale = T(2) / static_cast<T>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - static_cast<T>(gt[i]));
  return g;
}

/// Mean of S_cos(e_i, mu_c) over each instance, averaged over instances.
template <typename T>
T intra_consistency(const EmbeddingField<T>& emb, const LabelMap& labels, double eps = 1e-8) {
  const auto stats = instance_stats(emb, labels);
  if (stats.count == 0) return T(1);
  return T(1) - intra_loss(emb, labels, stats, eps);
}

}  // namespace wnet
