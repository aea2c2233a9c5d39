#pragma once

// Synthetic rosette / blob scenes and image standardization.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "json.hpp"
#include "wnet/core.hpp"

namespace wnet {

enum class ShapeFamily { rosette, blobs };

inline std::string to_string(ShapeFamily f) { return f == ShapeFamily::rosette ? "rosette" : "blobs"; }

inline ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "rosette") return ShapeFamily::rosette;
  if (s == "blobs") return ShapeFamily::blobs;
  throw ContractViolation("unknown shape family '" + s + "' (expected rosette or blobs)");
}

struct SceneConfig {
  int height = 64;
  int width = 64;
  int channels = 1;
  int min_objects = 6;
  int max_objects = 12;
  ShapeFamily shape = ShapeFamily::rosette;
  /// Minimum gap in pixels between any shape and the image border.
  int margin = 2;
  double noise = 0.05;
  uint64_t seed = 1;
  /// Instances smaller than this are rejected during placement.
  int min_instance_pixels = 8;
  int max_retries = 200;

  void validate() const {
    detail::require(height >= 8 && width >= 8, "scene must be at least 8x8, got ", height, "x", width);
    detail::require(channels == 1 || channels == 3, "channels must be 1 or 3, got ", channels);
    detail::require(min_objects >= 1, "object count must be >= 1");
    detail::require(max_objects >= min_objects, "max_objects < min_objects");
    detail::require(margin >= 0, "margin must be >= 0");
    detail::require(noise >= 0 && std::isfinite(noise), "noise must be finite and >= 0");
    detail::require(max_retries >= 1, "max_retries must be >= 1");
  }

  bool operator==(const SceneConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"height", c.height},           {"width", c.width},
                     {"channels", c.channels},       {"min_objects", c.min_objects},
                     {"max_objects", c.max_objects}, {"shape", to_string(c.shape)},
                     {"margin", c.margin},           {"noise", c.noise},
                     {"seed", c.seed},               {"min_instance_pixels", c.min_instance_pixels},
                     {"max_retries", c.max_retries}};
}

/// Missing keys keep their current value, so a partial document overrides defaults.
inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("height", c.height);
  get("width", c.width);
  get("channels", c.channels);
  get("min_objects", c.min_objects);
  get("max_objects", c.max_objects);
  if (j.contains("shape")) c.shape = shape_family_from_string(j.at("shape").get<std::string>());
  get("margin", c.margin);
  get("noise", c.noise);
  get("seed", c.seed);
  get("min_instance_pixels", c.min_instance_pixels);
  get("max_retries", c.max_retries);
}

struct Scene {
  Image image;
  LabelMap labels;
  Mask foreground;
};

namespace detail {

struct Ellipse {
  double cy, cx;   // center
  double a, b;     // semi-axes, a along `angle`
  double angle;    // radians
  double base;     // intensity
  bool vein;       // draw a dark midline along the major axis

  /// Returns normalized radius^2 and the minor-axis offset in pixels.
  std::pair<double, double> local(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return {(u * u) / (a * a) + (v * v) / (b * b), v};
  }
};

inline bool four_connected(const LabelMap& labels, int32_t id, int64_t area) {
  std::vector<int> stack;
  std::vector<uint8_t> seen(labels.pixels(), 0);
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    if (labels.ids[i] == id) {
      stack.push_back(static_cast<int>(i));
      seen[i] = 1;
      break;
    }
  }
  int64_t reached = 0;
  const int w = labels.width, h = labels.height;
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    ++reached;
    const int y = p / w, x = p % w;
    const std::array<std::pair<int, int>, 4> nb{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
    for (auto [ny, nx] : nb) {
      if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
      const int q = ny * w + nx;
      if (!seen[q] && labels.ids[q] == id) {
        seen[q] = 1;
        stack.push_back(q);
      }
    }
  }
  return reached == area;
}

inline std::vector<Ellipse> place_rosette(const SceneConfig& cfg, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(cfg.height, cfg.width);
  const double avail = side / 2.0 - cfg.margin - 1.0;
  const double jitter = 0.05 * side;
  const double cy = (cfg.height - 1) / 2.0 + (unit(rng) * 2 - 1) * jitter;
  const double cx = (cfg.width - 1) / 2.0 + (unit(rng) * 2 - 1) * jitter;
  const double reach = avail - jitter;
  const double theta0 = unit(rng) * 2 * std::numbers::pi;
  const double step = 2 * std::numbers::pi / n;
  std::vector<Ellipse> out;
  for (int i = 0; i < n; ++i) {
    Ellipse e{};
    e.a = (0.75 + 0.25 * unit(rng)) * reach / 2.05;
    const double rc = e.a * (0.95 + 0.1 * unit(rng));
    e.angle = theta0 + step * i + (unit(rng) * 2 - 1) * 0.15 * step;
    e.cy = cy + rc * std::sin(e.angle);
    e.cx = cx + rc * std::cos(e.angle);
    e.b = std::min(e.a * 0.8, std::max(2.5, (0.8 + 0.3 * unit(rng)) * std::numbers::pi * rc / n));
    e.base = 0.5 + 0.5 * unit(rng);
    e.vein = true;
    out.push_back(e);
  }
  return out;
}

inline std::vector<Ellipse> place_blobs(const SceneConfig& cfg, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(cfg.height, cfg.width);
  const double scale = std::min(side / 6.0, 0.6 * side / std::sqrt(static_cast<double>(n)));
  std::vector<Ellipse> out;
  for (int i = 0; i < n; ++i) {
    Ellipse e{};
    e.a = std::max(2.0, scale * (0.6 + 0.4 * unit(rng)));
    e.b = std::max(2.0, e.a * (0.5 + 0.5 * unit(rng)));
    e.angle = unit(rng) * std::numbers::pi;
    const double lo = cfg.margin + e.a, hi_y = cfg.height - 1 - cfg.margin - e.a, hi_x = cfg.width - 1 - cfg.margin - e.a;
    e.cy = hi_y > lo ? lo + (hi_y - lo) * unit(rng) : (cfg.height - 1) / 2.0;
    e.cx = hi_x > lo ? lo + (hi_x - lo) * unit(rng) : (cfg.width - 1) / 2.0;
    e.base = 0.5 + 0.5 * unit(rng);
    e.vein = false;
    out.push_back(e);
  }
  return out;
}

}  // namespace detail

/// Draws one scene. Later shapes occlude earlier ones; every instance ends up
/// 4-connected with at least `min_instance_pixels` pixels, or PlacementError is
/// thrown after `max_retries` attempts.
inline Scene synth_generate(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const int h = cfg.height, w = cfg.width;
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
    const int n = count_dist(rng);
    const auto shapes = cfg.shape == ShapeFamily::rosette ? detail::place_rosette(cfg, n, rng)
                                                          : detail::place_blobs(cfg, n, rng);
    LabelMap labels(h, w);
    for (int i = 0; i < n; ++i) {
      for (int y = cfg.margin; y < h - cfg.margin; ++y)
        for (int x = cfg.margin; x < w - cfg.margin; ++x)
          if (shapes[i].local(y, x).first <= 1.0) labels.at(y, x) = i + 1;
    }
    const auto area = instance_areas(labels);
    if (static_cast<int>(area.size()) != n + 1) continue;
    bool ok = true;
    for (int i = 1; i <= n && ok; ++i)
      ok = area[i] >= cfg.min_instance_pixels && detail::four_connected(labels, i, area[i]);
    if (!ok) continue;

    std::normal_distribution<double> noise(0.0, 1.0);
    Scene scene;
    scene.image = Image(h, w, cfg.channels);
    static constexpr std::array<double, 3> kLeafTint{0.35, 1.0, 0.45};
    static constexpr std::array<double, 3> kSoilTint{0.45, 0.35, 0.25};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int32_t id = labels.at(y, x);
        double value = 0.1;
        if (id != 0) {
          const auto& e = shapes[id - 1];
          const auto [rho2, v] = e.local(y, x);
          value = e.base * (0.55 + 0.45 * (1.0 - rho2));
          if (e.vein && std::abs(v) < 0.7) value *= 0.8;
        }
        for (int c = 0; c < cfg.channels; ++c) {
          const double tint = cfg.channels == 1 ? 1.0 : (id != 0 ? kLeafTint[c] : kSoilTint[c]);
          scene.image.at(y, x, c) = static_cast<float>(value * tint + cfg.noise * noise(rng));
        }
      }
    }
    scene.foreground = foreground_of(labels);
    scene.labels = std::move(labels);
    return scene;
  }
  throw PlacementError(detail::concat("could not place ", cfg.min_objects, "-", cfg.max_objects, " ",
                                      to_string(cfg.shape), " objects in a ", h, "x", w, " scene after ",
                                      cfg.max_retries, " attempts"));
}

/// Seed for the i-th scene of a dataset drawn from a master seed (splitmix64).
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Linear rescale to zero mean and unit variance over all pixel-channels.
/// A constant image maps to all zeros.
inline Image standardize_image(const Image& img) {
  detail::require(!img.values.empty(), "cannot standardize an empty image");
  double mean = 0.0;
  for (float v : img.values) {
    detail::require(std::isfinite(v), "image contains non-finite values");
    mean += v;
  }
  mean /= static_cast<double>(img.values.size());
  double var = 0.0;
  for (float v : img.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(img.values.size());
  Image out = img;
  if (var <= 0.0) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  const double inv_std = 1.0 / std::sqrt(var);
  for (float& v : out.values) v = static_cast<float>((v - mean) * inv_std);
  return out;
}

}  // namespace wnet
