#pragma once

// Ground-truth distance maps and seed extraction.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include "wnet/core.hpp"

namespace wnet {

/// Per-pixel distance to the instance boundary, normalized so every instance
/// peaks at 1. Background is 0.
struct DistMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  DistMap() = default;
  DistMap(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  bool operator==(const DistMap&) const = default;
};

struct Seed {
  int row = 0;
  int col = 0;
  float value = 0.0f;
  bool operator==(const Seed&) const = default;
};

using SeedList = std::vector<Seed>;

namespace detail {

constexpr int64_t kFar = std::numeric_limits<int64_t>::max() / 4;

// Squared distance transform of a sampled function along one line
// (lower envelope of parabolas). Entries equal to kFar are not sites.
inline void sq_distance_1d(const std::vector<int64_t>& f, std::vector<int64_t>& out, std::vector<int>& v,
                           std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  out.assign(n, kFar);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] >= kFar) continue;
    const double fq = static_cast<double>(f[q]) + static_cast<double>(q) * q;
    while (k >= 0) {
      const int p = v[k];
      const double s = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
    } else {
      const int p = v[k];
      const double s = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) / (2.0 * (q - p));
      ++k;
      v[k] = q;
      z[k] = s;
    }
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const int64_t d = q - v[j];
    out[q] = d * d + f[v[j]];
  }
}

}  // namespace detail

/// Exact Euclidean distance from each instance pixel to the nearest raster
/// pixel outside its instance, divided by the instance maximum.
///
/// Each instance is transformed inside its bounding box grown by one pixel
/// (clipped to the raster): clamping any outside pixel into that box moves it
/// strictly closer, so the nearest non-instance pixel always lies in the box.
inline DistMap compute_distmap(const LabelMap& labels) {
  const int h = labels.height, w = labels.width;
  DistMap out(h, w);
  const int32_t count = labels.max_id();
  if (count == 0) return out;

  struct Box {
    int y0 = std::numeric_limits<int>::max(), x0 = std::numeric_limits<int>::max(), y1 = -1, x1 = -1;
  };
  std::vector<Box> boxes(static_cast<size_t>(count) + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int32_t id = labels.at(y, x);
      if (id == 0) continue;
      auto& b = boxes[id];
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y);
      b.x1 = std::max(b.x1, x);
    }

  std::vector<int64_t> grid, line, line_out;
  std::vector<int> v;
  std::vector<double> z;
  for (int32_t id = 1; id <= count; ++id) {
    const auto& b = boxes[id];
    if (b.y1 < 0) continue;
    const int y0 = std::max(0, b.y0 - 1), x0 = std::max(0, b.x0 - 1);
    const int y1 = std::min(h - 1, b.y1 + 1), x1 = std::min(w - 1, b.x1 + 1);
    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    grid.assign(static_cast<size_t>(bh) * bw, 0);
    bool any_site = false;
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x) {
        const bool inside = labels.at(y0 + y, x0 + x) == id;
        grid[static_cast<size_t>(y) * bw + x] = inside ? detail::kFar : 0;
        any_site = any_site || !inside;
      }
    detail::require(any_site, "instance ", id, " covers the whole raster; its boundary distance is undefined");

    line.resize(bh);
    for (int x = 0; x < bw; ++x) {
      for (int y = 0; y < bh; ++y) line[y] = grid[static_cast<size_t>(y) * bw + x];
      detail::sq_distance_1d(line, line_out, v, z);
      for (int y = 0; y < bh; ++y) grid[static_cast<size_t>(y) * bw + x] = line_out[y];
    }
    line.resize(bw);
    for (int y = 0; y < bh; ++y) {
      for (int x = 0; x < bw; ++x) line[x] = grid[static_cast<size_t>(y) * bw + x];
      detail::sq_distance_1d(line, line_out, v, z);
      for (int x = 0; x < bw; ++x) grid[static_cast<size_t>(y) * bw + x] = line_out[x];
    }

    int64_t max_sq = 0;
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x)
        if (labels.at(y0 + y, x0 + x) == id) max_sq = std::max(max_sq, grid[static_cast<size_t>(y) * bw + x]);
    const double max_d = std::sqrt(static_cast<double>(max_sq));
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x)
        if (labels.at(y0 + y, x0 + x) == id)
          out.at(y0 + y, x0 + x) =
              static_cast<float>(std::sqrt(static_cast<double>(grid[static_cast<size_t>(y) * bw + x])) / max_d);
  }
  return out;
}

/// Thresholded local maxima of a distance map, strongest first.
///
/// A pixel is a candidate when its value reaches `threshold_frac` of the global
/// maximum and nothing inside its (2*window+1)^2 neighborhood is larger.
/// Connected runs of equal-valued candidates collapse to their top-left pixel,
/// then candidates closer than `window` (Chebyshev) to a stronger seed are dropped.
inline SeedList extract_seeds(const DistMap& dist, double threshold_frac = 0.7, int window = 5) {
  detail::require(threshold_frac > 0.0 && threshold_frac <= 1.0, "threshold_frac must be in (0, 1], got ",
                  threshold_frac);
  detail::require(window >= 1, "seed window must be >= 1, got ", window);
  const int h = dist.height, w = dist.width;
  float gmax = 0.0f;
  for (float v : dist.values) gmax = std::max(gmax, v);
  if (!(gmax > 0.0f)) return {};
  const double thr = threshold_frac * gmax;

  std::vector<uint8_t> cand(dist.values.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = dist.at(y, x);
      if (!(v > 0.0f) || v < thr) continue;
      bool is_max = true;
      for (int yy = std::max(0, y - window); yy <= std::min(h - 1, y + window) && is_max; ++yy)
        for (int xx = std::max(0, x - window); xx <= std::min(w - 1, x + window); ++xx)
          if (dist.at(yy, xx) > v) {
            is_max = false;
            break;
          }
      cand[static_cast<size_t>(y) * w + x] = is_max ? 1 : 0;
    }

  // Raster order visits the top-left pixel of each plateau first.
  SeedList seeds;
  std::vector<int> stack;
  for (int p = 0; p < h * w; ++p) {
    if (cand[p] != 1) continue;
    const float v = dist.values[p];
    seeds.push_back({p / w, p % w, v});
    cand[p] = 2;
    stack.push_back(p);
    while (!stack.empty()) {
      const int q = stack.back();
      stack.pop_back();
      const int qy = q / w, qx = q % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = qy + dy, nx = qx + dx;
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const int r = ny * w + nx;
          if (cand[r] == 1 && dist.values[r] == v) {
            cand[r] = 2;
            stack.push_back(r);
          }
        }
    }
  }

  std::stable_sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.value > b.value; });
  SeedList kept;
  for (const auto& s : seeds) {
    bool clear = true;
    for (const auto& k : kept)
      if (std::abs(k.row - s.row) <= window && std::abs(k.col - s.col) <= window) {
        clear = false;
        break;
      }
    if (clear) kept.push_back(s);
  }
  return kept;
}

namespace detail {

inline void put_u32le(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline uint32_t get_u32le(std::istream& is) {
  unsigned char b[4] = {};
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32le(std::ostream& os, std::span<const float> values) {
  static_assert(sizeof(float) == 4);
  for (float f : values) put_u32le(os, std::bit_cast<uint32_t>(f));
}

inline void get_f32le(std::istream& is, std::span<float> values) {
  for (float& f : values) f = std::bit_cast<float>(get_u32le(is));
}

}  // namespace detail

/// Flat float32 raster preceded by height and width as little-endian u32.
inline void save_distmap(const DistMap& dist, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  detail::put_u32le(os, static_cast<uint32_t>(dist.height));
  detail::put_u32le(os, static_cast<uint32_t>(dist.width));
  detail::put_f32le(os, dist.values);
  if (!os) throw Error("write to '" + path.string() + "' failed");
}

inline DistMap load_distmap(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  const uint32_t h = detail::get_u32le(is), w = detail::get_u32le(is);
  if (!is) throw FormatError("'" + path.string() + "': truncated distmap header");
  const auto expected = 8 + 4ull * h * w;
  if (std::filesystem::file_size(path) != expected)
    throw FormatError(detail::concat("'", path.string(), "': size does not match ", h, "x", w, " header"));
  DistMap dist(static_cast<int>(h), static_cast<int>(w));
  detail::get_f32le(is, dist.values);
  return dist;
}

}  // namespace wnet
