#pragma once

// Neighbor sets between instances, used by the between-instance loss.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <set>
#include <vector>

#include "wnet/core.hpp"

namespace wnet {

/// Symmetric, irreflexive adjacency between instance ids 1..C.
class NeighborGraph {
 public:
  NeighborGraph() = default;
  explicit NeighborGraph(int count) : sets_(static_cast<size_t>(count) + 1) {}

  int instance_count() const { return static_cast<int>(sets_.size()) - (sets_.empty() ? 0 : 1); }

  void connect(int a, int b) {
    detail::require(a >= 1 && b >= 1 && a <= instance_count() && b <= instance_count(), "instance id out of range: ",
                    a, ", ", b);
    if (a == b) return;
    sets_[a].insert(b);
    sets_[b].insert(a);
  }

  const std::set<int>& neighbors(int c) const { return sets_.at(c); }
  bool adjacent(int a, int b) const { return sets_.at(a).count(b) != 0; }

  size_t edge_count() const {
    size_t n = 0;
    for (const auto& s : sets_) n += s.size();
    return n / 2;
  }

  bool operator==(const NeighborGraph&) const = default;

 private:
  std::vector<std::set<int>> sets_;
};

/// a and b are neighbors when some pixel of a and some pixel of b lie within
/// Chebyshev distance `radius` of each other.
inline NeighborGraph build_neighbor_graph(const LabelMap& labels, int radius) {
  detail::require(radius >= 1, "neighbor radius must be >= 1, got ", radius);
  const int h = labels.height, w = labels.width;
  const int count = labels.max_id();
  NeighborGraph graph(count);
  if (count < 2) return graph;

  // Per pixel, the ids present in its window; computed as a column sweep then a
  // row sweep over small sorted id lists.
  using Ids = std::vector<int>;
  auto merge = [](Ids& acc, const Ids& other) {
    Ids tmp;
    tmp.reserve(acc.size() + other.size());
    std::set_union(acc.begin(), acc.end(), other.begin(), other.end(), std::back_inserter(tmp));
    acc.swap(tmp);
  };
  std::vector<Ids> vert(static_cast<size_t>(h) * w);
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y) {
      Ids& ids = vert[static_cast<size_t>(y) * w + x];
      for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
        const int id = labels.at(yy, x);
        if (id != 0) {
          auto it = std::lower_bound(ids.begin(), ids.end(), id);
          if (it == ids.end() || *it != id) ids.insert(it, id);
        }
      }
    }
  Ids window;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = labels.at(y, x);
      if (id == 0) continue;
      window.clear();
      for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx)
        merge(window, vert[static_cast<size_t>(y) * w + xx]);
      for (int other : window) graph.connect(id, other);
    }
  return graph;
}

/// Complete graph: every pair of distinct instances is constrained.
inline NeighborGraph global_graph(const LabelMap& labels) {
  const int count = labels.max_id();
  NeighborGraph graph(count);
  for (int a = 1; a <= count; ++a)
    for (int b = a + 1; b <= count; ++b) graph.connect(a, b);
  return graph;
}

/// Default radius: 10 px at a 64 px side, scaled with the image side.
inline int default_neighbor_radius(int height, int width) {
  const double side = std::max(height, width);
  return std::max(1, static_cast<int>(std::lround(10.0 * side / 64.0)));
}

}  // namespace wnet
