#pragma once

// Basic raster types and the error hierarchy shared by every module.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or shape contract broken by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed file on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Scene generator could not satisfy its configuration.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) throw ContractViolation(concat(args...));
}

}  // namespace detail

/// Multi-channel raster, row-major with channels innermost.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> values;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c = 0) { return values[(static_cast<size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c = 0) const {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
  bool operator==(const Image&) const = default;
};

/// Instance-id raster. Id 0 is background.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int32_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, int32_t fill = 0) : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  int32_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
  int32_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }
  size_t pixels() const { return ids.size(); }
  bool operator==(const LabelMap&) const = default;

  /// Largest id present (C for a canonical map).
  int32_t max_id() const {
    int32_t m = 0;
    for (int32_t v : ids) m = std::max(m, v);
    return m;
  }
};

/// Boolean raster stored as bytes (0 / 1).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> on;

  Mask() = default;
  Mask(int h, int w, bool fill = false) : height(h), width(w), on(static_cast<size_t>(h) * w, fill ? 1 : 0) {}

  bool at(int y, int x) const { return on[static_cast<size_t>(y) * width + x] != 0; }
  bool operator==(const Mask&) const = default;
};

inline Mask foreground_of(const LabelMap& labels) {
  Mask m(labels.height, labels.width);
  for (size_t i = 0; i < labels.ids.size(); ++i) m.on[i] = labels.ids[i] != 0 ? 1 : 0;
  return m;
}

/// Result of relabelling: the compacted map plus original id -> new id.
struct Canonicalized {
  LabelMap labels;
  std::map<int32_t, int32_t> mapping;
};

/// Relabels the distinct nonzero ids to 1..C in ascending order of the original id.
inline Canonicalized canonicalize(const LabelMap& in) {
  std::vector<int32_t> distinct;
  for (int32_t v : in.ids) {
    detail::require(v >= 0, "label ids must be non-negative, got ", v);
    if (v != 0) distinct.push_back(v);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  Canonicalized out;
  for (size_t i = 0; i < distinct.size(); ++i) out.mapping[distinct[i]] = static_cast<int32_t>(i + 1);
  out.labels = in;
  for (int32_t& v : out.labels.ids)
    if (v != 0) v = out.mapping.at(v);
  return out;
}

/// Relabels by order of first appearance in raster scan.
inline LabelMap canonicalize_by_scan(const LabelMap& in) {
  std::map<int32_t, int32_t> remap;
  LabelMap out = in;
  for (int32_t& v : out.ids) {
    if (v == 0) continue;
    auto [it, inserted] = remap.try_emplace(v, static_cast<int32_t>(remap.size() + 1));
    v = it->second;
  }
  return out;
}

inline bool is_canonical(const LabelMap& labels) {
  const int32_t c = labels.max_id();
  std::vector<char> seen(static_cast<size_t>(c) + 1, 0);
  for (int32_t v : labels.ids) {
    if (v < 0) return false;
    seen[v] = 1;
  }
  for (int32_t i = 1; i <= c; ++i)
    if (!seen[i]) return false;
  return true;
}

inline std::vector<int64_t> instance_areas(const LabelMap& labels) {
  std::vector<int64_t> area(static_cast<size_t>(labels.max_id()) + 1, 0);
  for (int32_t v : labels.ids) ++area[v];
  return area;
}

}  // namespace wnet
