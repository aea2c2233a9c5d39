#pragma once

// On-disk synthetic datasets: <split>/<id>_image.png (8-bit), <id>_labels.png
// and <id>_mask.png (16-bit), plus manifest.json at the root.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "wnet/experiments.hpp"
#include "wnet/png_io.hpp"

namespace wnet {

inline std::string scene_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

/// Generates `train_count + val_count` scenes from `master_seed` and writes them
/// under `dir`. Returns the manifest.
inline nlohmann::json write_synthetic_dataset(const std::filesystem::path& dir, const SceneConfig& scene,
                                              uint64_t master_seed, int train_count, int val_count) {
  namespace fs = std::filesystem;
  scene.validate();
  detail::require(train_count >= 0 && val_count >= 0 && train_count + val_count >= 1, "need at least one scene");
  nlohmann::json entries = nlohmann::json::array();
  for (int i = 0; i < train_count + val_count; ++i) {
    const std::string split = i < train_count ? "train" : "val";
    const std::string id = scene_id(i);
    SceneConfig c = scene;
    c.seed = derive_seed(master_seed, static_cast<uint64_t>(i));
    const auto s = synth_generate(c);
    fs::create_directories(dir / split);
    save_image_png(s.image, dir / split / (id + "_image.png"));
    save_label_map(s.labels, dir / split / (id + "_labels.png"));
    save_mask(s.foreground, dir / split / (id + "_mask.png"));
    entries.push_back({{"id", id},
                       {"split", split},
                       {"seed", c.seed},
                       {"instances", s.labels.max_id()},
                       {"image", split + "/" + id + "_image.png"},
                       {"labels", split + "/" + id + "_labels.png"},
                       {"mask", split + "/" + id + "_mask.png"}});
  }
  nlohmann::json manifest{{"scene", scene},
                          {"master_seed", master_seed},
                          {"train_count", train_count},
                          {"val_count", val_count},
                          {"entries", entries}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw Error("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
  return manifest;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw FormatError("no manifest.json in " + dir.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset manifest: " + std::string(e.what()));
  }
}

/// Loads every manifest entry of one split ("train" or "val").
inline Dataset load_dataset_split(const std::filesystem::path& dir, const std::string& split) {
  const auto manifest = read_manifest(dir);
  Dataset out;
  for (const auto& e : manifest.at("entries")) {
    if (e.at("split") != split) continue;
    Sample s;
    s.image = load_image_png(dir / e.at("image").get<std::string>());
    s.labels = load_label_map(dir / e.at("labels").get<std::string>()).labels;
    s.foreground = load_mask(dir / e.at("mask").get<std::string>());
    detail::require(s.image.height == s.labels.height && s.image.width == s.labels.width,
                    "image and labels differ in size for scene ", e.at("id").get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace wnet
