#pragma once

// Model checkpoints: a directory holding manifest.json plus one little-endian
// float32 file per tensor.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "wnet/distfield.hpp"
#include "wnet/network.hpp"

namespace wnet {

struct Checkpoint {
  TopologySpec spec;
  ModelParams<float> params;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::string tensor_file_name(size_t index) { return "tensor_" + std::to_string(index) + ".bin"; }

inline void save_checkpoint(const std::filesystem::path& dir, const TopologySpec& spec, const ModelParams<float>& params,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  const auto& entries = params.entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& v = entries[i].value;
    const std::string file = tensor_file_name(i);
    std::ofstream os(dir / file, std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / file).string());
    detail::put_f32le(os, v.data);
    if (!os) throw Error("write failed for " + (dir / file).string());
    tensors.push_back({{"name", entries[i].name}, {"shape", {v.n, v.h, v.w, v.c}}, {"file", file}});
  }
  nlohmann::json manifest{{"format", "wnet-checkpoint"}, {"version", 1}, {"spec", spec}, {"tensors", tensors}, {"extra", extra}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw Error("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

/// Reads a checkpoint and checks it against the parameter layout its spec implies.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != "wnet-checkpoint") throw FormatError("not a wnet checkpoint: " + dir.string());
  Checkpoint ck;
  m.at("spec").get_to(ck.spec);
  ck.spec.validate();
  ck.params = build_params<float>(ck.spec);
  ck.extra = m.value("extra", nlohmann::json::object());
  const auto& tensors = m.at("tensors");
  if (tensors.size() != ck.params.size())
    throw FormatError(detail::concat("checkpoint has ", tensors.size(), " tensors, topology needs ", ck.params.size()));
  for (const auto& t : tensors) {
    const std::string name = t.at("name");
    if (!ck.params.contains(name)) throw FormatError("checkpoint tensor '" + name + "' is not part of the topology");
    auto& v = ck.params.value(name);
    const auto shape = t.at("shape").get<std::vector<int>>();
    if (shape != std::vector<int>{v.n, v.h, v.w, v.c})
      throw FormatError("shape mismatch for '" + name + "': expected " + v.shape_string());
    const auto path = dir / t.at("file").get<std::string>();
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw FormatError("missing tensor file " + path.string());
    detail::get_f32le(bin, v.data);
    if (!bin) throw FormatError("truncated tensor file " + path.string());
    if (bin.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  }
  return ck;
}

}  // namespace wnet
