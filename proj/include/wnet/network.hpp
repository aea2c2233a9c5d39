#pragma once

// Two-head U-Net and W-Net topologies with the concatenative-layer variants.

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "json.hpp"
#include "wnet/losses.hpp"
#include "wnet/tape.hpp"

namespace wnet {

enum class Topology { unet_two_head, wnet };

inline std::string to_string(Topology t) { return t == Topology::wnet ? "wnet" : "unet_two_head"; }

inline Topology topology_from_string(const std::string& s) {
  if (s == "wnet" || s == "w-net") return Topology::wnet;
  if (s == "unet_two_head" || s == "unet" || s == "u-net") return Topology::unet_two_head;
  throw ContractViolation("unknown topology '" + s + "' (expected wnet or unet_two_head)");
}

enum class ConcatKind { none, coord, distmap, dfeat, efeat, dfeat_efeat };

/// What the first network forwards to the second, e.g. "dfeat.32" or
/// "dfeat.16+efeat.16".
struct ConcatVariant {
  ConcatKind kind = ConcatKind::dfeat;
  int dfeat_dim = 32;
  int efeat_dim = 0;

  std::string name() const {
    switch (kind) {
      case ConcatKind::none: return "none";
      case ConcatKind::coord: return "coord";
      case ConcatKind::distmap: return "distmap";
      case ConcatKind::dfeat: return "dfeat." + std::to_string(dfeat_dim);
      case ConcatKind::efeat: return "efeat." + std::to_string(efeat_dim);
      case ConcatKind::dfeat_efeat:
        return "dfeat." + std::to_string(dfeat_dim) + "+efeat." + std::to_string(efeat_dim);
    }
    return "?";
  }

  /// Channels appended to the second network's image input.
  int channels() const {
    switch (kind) {
      case ConcatKind::none:
      case ConcatKind::coord: return 0;
      case ConcatKind::distmap: return 1;
      case ConcatKind::dfeat: return dfeat_dim;
      case ConcatKind::efeat: return efeat_dim;
      case ConcatKind::dfeat_efeat: return dfeat_dim + efeat_dim;
    }
    return 0;
  }

  bool uses_efeat() const { return kind == ConcatKind::efeat || kind == ConcatKind::dfeat_efeat; }

  static ConcatVariant parse(const std::string& s) {
    auto dim_after = [&](const std::string& part, const std::string& prefix) {
      detail::require(part.rfind(prefix, 0) == 0 && part.size() > prefix.size(), "bad concat variant '", s, "'");
      const int d = std::stoi(part.substr(prefix.size()));
      detail::require(d >= 1, "concat dim must be >= 1 in '", s, "'");
      return d;
    };
    if (s == "none" || s == "baseline") return {ConcatKind::none, 0, 0};
    if (s == "coord" || s == "coordinate") return {ConcatKind::coord, 0, 0};
    if (s == "distmap") return {ConcatKind::distmap, 0, 0};
    if (const auto plus = s.find('+'); plus != std::string::npos)
      return {ConcatKind::dfeat_efeat, dim_after(s.substr(0, plus), "dfeat."), dim_after(s.substr(plus + 1), "efeat.")};
    if (s.rfind("dfeat.", 0) == 0) return {ConcatKind::dfeat, dim_after(s, "dfeat."), 0};
    if (s.rfind("efeat.", 0) == 0) return {ConcatKind::efeat, 0, dim_after(s, "efeat.")};
    throw ContractViolation("unknown concat variant '" + s + "'");
  }

  bool operator==(const ConcatVariant&) const = default;
};

struct TopologySpec {
  Topology kind = Topology::wnet;
  int depth = 2;
  int base_channels = 16;
  int convs_per_block = 2;
  /// Width of each U-Net's output feature map (D-feat / E-feat).
  int feature_channels = 32;
  int embedding_dim = 8;
  int input_channels = 1;
  ConcatVariant concat{};
  /// Stop embedding-loss gradients at the concatenative layer.
  bool detach_concat = false;

  void validate() const {
    detail::require(embedding_dim >= 2, "embedding_dim must be >= 2, got ", embedding_dim);
    detail::require(depth >= 1, "depth must be >= 1, got ", depth);
    detail::require(base_channels >= 1 && feature_channels >= 1, "channel counts must be >= 1");
    detail::require(convs_per_block == 1 || convs_per_block == 2, "convs_per_block must be 1 or 2");
    detail::require(input_channels == 1 || input_channels == 3, "input_channels must be 1 or 3");
    if (kind == Topology::unet_two_head)
      detail::require(concat.kind == ConcatKind::none || concat.kind == ConcatKind::coord, "concat variant '",
                      concat.name(), "' needs the wnet topology; unet_two_head supports only none or coord");
  }

  bool uses_coords() const { return concat.kind == ConcatKind::coord; }
  int image_input_channels() const { return input_channels + (uses_coords() ? 2 : 0); }
  int unet2_input_channels() const { return image_input_channels() + concat.channels(); }

  /// Spatial sides must be divisible by this.
  int size_multiple() const { return 1 << depth; }

  bool operator==(const TopologySpec&) const = default;
};

inline void to_json(nlohmann::json& j, const TopologySpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"depth", s.depth},
                     {"base_channels", s.base_channels},
                     {"convs_per_block", s.convs_per_block},
                     {"feature_channels", s.feature_channels},
                     {"embedding_dim", s.embedding_dim},
                     {"input_channels", s.input_channels},
                     {"concat", s.concat.name()},
                     {"detach_concat", s.detach_concat}};
}

inline void from_json(const nlohmann::json& j, TopologySpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("kind")) s.kind = topology_from_string(j.at("kind").get<std::string>());
  get("depth", s.depth);
  get("base_channels", s.base_channels);
  get("convs_per_block", s.convs_per_block);
  get("feature_channels", s.feature_channels);
  get("embedding_dim", s.embedding_dim);
  get("input_channels", s.input_channels);
  if (j.contains("concat")) s.concat = ConcatVariant::parse(j.at("concat").get<std::string>());
  get("detach_concat", s.detach_concat);
}

namespace detail {

template <typename T>
void add_conv(ModelParams<T>& p, const std::string& name, int k, int in, int out) {
  p.add(name + "/w", k, k, in, out);
  p.add(name + "/b", 1, 1, 1, out);
}

inline int level_channels(const TopologySpec& s, int level) { return s.base_channels << level; }

template <typename T>
void add_unet(ModelParams<T>& p, const TopologySpec& s, const std::string& prefix, int in_ch) {
  int ch = in_ch;
  for (int l = 0; l < s.depth; ++l) {
    const int c = level_channels(s, l);
    for (int i = 0; i < s.convs_per_block; ++i) {
      add_conv(p, prefix + "/enc" + std::to_string(l) + "/conv" + std::to_string(i), 3, ch, c);
      ch = c;
    }
  }
  const int cb = level_channels(s, s.depth);
  for (int i = 0; i < s.convs_per_block; ++i) {
    add_conv(p, prefix + "/bottom/conv" + std::to_string(i), 3, ch, cb);
    ch = cb;
  }
  for (int l = s.depth - 1; l >= 0; --l) {
    const int c = level_channels(s, l);
    const std::string dec = prefix + "/dec" + std::to_string(l);
    add_conv(p, dec + "/up", 3, ch, c);
    ch = 2 * c;
    for (int i = 0; i < s.convs_per_block; ++i) {
      add_conv(p, dec + "/conv" + std::to_string(i), 3, ch, c);
      ch = c;
    }
  }
}

template <typename T>
Var conv(Tape<T>& t, ModelParams<T>& p, Var x, const std::string& name) {
  return t.conv2d(x, t.parameter(p, name + "/w"), t.parameter(p, name + "/b"));
}

template <typename T>
Var conv_relu(Tape<T>& t, ModelParams<T>& p, Var x, const std::string& name) {
  return t.relu(conv(t, p, x, name));
}

/// Returns the decoder output (base_channels wide, full resolution).
template <typename T>
Var unet_forward(Tape<T>& t, ModelParams<T>& p, const TopologySpec& s, const std::string& prefix, Var x) {
  std::vector<Var> skips;
  Var h = x;
  for (int l = 0; l < s.depth; ++l) {
    for (int i = 0; i < s.convs_per_block; ++i)
      h = conv_relu(t, p, h, prefix + "/enc" + std::to_string(l) + "/conv" + std::to_string(i));
    skips.push_back(h);
    h = t.maxpool2(h);
  }
  for (int i = 0; i < s.convs_per_block; ++i) h = conv_relu(t, p, h, prefix + "/bottom/conv" + std::to_string(i));
  for (int l = s.depth - 1; l >= 0; --l) {
    const std::string dec = prefix + "/dec" + std::to_string(l);
    h = conv_relu(t, p, t.upsample2(h), dec + "/up");
    h = t.concat(skips[l], h);
    for (int i = 0; i < s.convs_per_block; ++i) h = conv_relu(t, p, h, dec + "/conv" + std::to_string(i));
  }
  return h;
}

}  // namespace detail

/// Allocates (zero-valued) parameters for a topology.
template <typename T>
ModelParams<T> build_params(const TopologySpec& s) {
  s.validate();
  ModelParams<T> p;
  const int F = s.feature_channels, E = s.embedding_dim;
  if (s.kind == Topology::unet_two_head) {
    detail::add_unet(p, s, "unet", s.image_input_channels());
    detail::add_conv(p, "unet/feature", 3, s.base_channels, F);
    detail::add_conv(p, "dist_head", 1, F, 1);
    detail::add_conv(p, "emb_head", 1, F, E);
    return p;
  }
  detail::add_unet(p, s, "unet1", s.image_input_channels());
  detail::add_conv(p, "unet1/dfeat", 3, s.base_channels, F);
  detail::add_conv(p, "dist_head", 1, F, 1);
  if (s.concat.uses_efeat()) {
    detail::add_conv(p, "unet1/efeat", 3, s.base_channels, F);
    detail::add_conv(p, "aux_emb_head", 1, F, E);
  }
  if (s.concat.kind == ConcatKind::dfeat || s.concat.kind == ConcatKind::dfeat_efeat)
    detail::add_conv(p, "concat/dfeat", 1, F, s.concat.dfeat_dim);
  if (s.concat.uses_efeat()) detail::add_conv(p, "concat/efeat", 1, F, s.concat.efeat_dim);
  detail::add_unet(p, s, "unet2", s.unet2_input_channels());
  detail::add_conv(p, "unet2/feature", 3, s.base_channels, F);
  detail::add_conv(p, "emb_head", 1, F, E);
  return p;
}

/// Kernels ~ Normal(0, 2 / fan_in) with fan_in = k * k * in; biases 0.
template <typename T, typename Rng>
void he_normal_init(ModelParams<T>& params, Rng& rng) {
  for (auto& e : params.entries()) {
    auto& v = e.value;
    const bool is_bias = e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, "/b") == 0;
    if (is_bias) {
      v.fill(T(0));
      continue;
    }
    const double fan_in = static_cast<double>(v.n) * v.h * v.w;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (T& x : v.data) x = static_cast<T>(normal(rng));
  }
}

/// Everything recorded by one forward pass; `tape` replays it backwards.
template <typename T>
struct ForwardResult {
  Tape<T> tape;
  Var distmap;          // [1, H, W, 1], ReLU output
  Var dist_features;    // D-feat (W-Net) or shared trunk (U-Net)
  Var embeddings;       // [1, H, W, E], unit norm per pixel
  Var aux_embeddings;   // intermediate embedding head (efeat variants only)
  Var concat_features;  // what the second network received besides the image
};

namespace detail {

template <typename T>
Var image_input(Tape<T>& t, const Tensor4<T>& img, const TopologySpec& s) {
  require(img.c == s.input_channels, "image has ", img.c, " channels, topology expects ", s.input_channels);
  require(img.h % s.size_multiple() == 0 && img.w % s.size_multiple() == 0, "image ", img.shape_string(),
          " must have sides divisible by ", s.size_multiple());
  if (!s.uses_coords()) return t.input(img);
  return t.input(concat_forward(img, coordinate_channels<T>(img.h, img.w, img.n)));
}

}  // namespace detail

template <typename T>
ForwardResult<T> forward_unet_two_head(const Tensor4<T>& img, ModelParams<T>& params, const TopologySpec& s) {
  detail::require(s.kind == Topology::unet_two_head, "forward_unet_two_head called with topology ",
                  to_string(s.kind));
  s.validate();
  ForwardResult<T> r;
  auto& t = r.tape;
  const Var x = detail::image_input(t, img, s);
  const Var trunk = detail::conv_relu(t, params, detail::unet_forward(t, params, s, "unet", x), "unet/feature");
  r.dist_features = trunk;
  r.distmap = detail::conv_relu(t, params, trunk, "dist_head");
  r.embeddings = t.l2_normalize(detail::conv(t, params, trunk, "emb_head"));
  return r;
}

template <typename T>
ForwardResult<T> forward_wnet(const Tensor4<T>& img, ModelParams<T>& params, const TopologySpec& s) {
  detail::require(s.kind == Topology::wnet, "forward_wnet called with topology ", to_string(s.kind));
  s.validate();
  ForwardResult<T> r;
  auto& t = r.tape;
  const Var x = detail::image_input(t, img, s);
  const Var dec1 = detail::unet_forward(t, params, s, "unet1", x);
  const Var dfeat = detail::conv_relu(t, params, dec1, "unet1/dfeat");
  r.dist_features = dfeat;
  r.distmap = detail::conv_relu(t, params, dfeat, "dist_head");
  Var efeat;
  if (s.concat.uses_efeat()) {
    efeat = detail::conv_relu(t, params, dec1, "unet1/efeat");
    r.aux_embeddings = t.l2_normalize(detail::conv(t, params, efeat, "aux_emb_head"));
  }

  Var forwarded;
  switch (s.concat.kind) {
    case ConcatKind::none:
    case ConcatKind::coord: break;
    case ConcatKind::distmap: forwarded = r.distmap; break;
    case ConcatKind::dfeat: forwarded = t.l2_normalize(detail::conv(t, params, dfeat, "concat/dfeat")); break;
    case ConcatKind::efeat: forwarded = t.l2_normalize(detail::conv(t, params, efeat, "concat/efeat")); break;
    case ConcatKind::dfeat_efeat:
      forwarded = t.concat(t.l2_normalize(detail::conv(t, params, dfeat, "concat/dfeat")),
                           t.l2_normalize(detail::conv(t, params, efeat, "concat/efeat")));
      break;
  }
  Var x2 = x;
  if (forwarded.valid()) {
    if (s.detach_concat) forwarded = t.detach(forwarded);
    r.concat_features = forwarded;
    x2 = t.concat(x, forwarded);
  }
  const Var dec2 = detail::unet_forward(t, params, s, "unet2", x2);
  const Var feat2 = detail::conv_relu(t, params, dec2, "unet2/feature");
  r.embeddings = t.l2_normalize(detail::conv(t, params, feat2, "emb_head"));
  return r;
}

template <typename T>
ForwardResult<T> forward(const Tensor4<T>& img, ModelParams<T>& params, const TopologySpec& s) {
  return s.kind == Topology::wnet ? forward_wnet(img, params, s) : forward_unet_two_head(img, params, s);
}

/// Upstream gradients for the supervised heads. Empty tensors mean "no loss".
template <typename T>
struct HeadGrads {
  Tensor4<T> distmap;
  Tensor4<T> embeddings;
  Tensor4<T> aux_embeddings;
};

/// Adds d(loss)/d(param) for every parameter into `params` grad buffers.
template <typename T>
void backward(ForwardResult<T>& fwd, HeadGrads<T> grads) {
  std::vector<std::pair<Var, Tensor4<T>>> seeds;
  if (!grads.distmap.empty()) seeds.emplace_back(fwd.distmap, std::move(grads.distmap));
  if (!grads.embeddings.empty()) seeds.emplace_back(fwd.embeddings, std::move(grads.embeddings));
  if (!grads.aux_embeddings.empty()) {
    detail::require(fwd.aux_embeddings.valid(), "aux embedding gradient given but topology has no aux head");
    seeds.emplace_back(fwd.aux_embeddings, std::move(grads.aux_embeddings));
  }
  fwd.tape.backward(std::move(seeds));
}

/// Views a single-image [1, H, W, E] tensor as an embedding field.
template <typename T>
EmbeddingField<T> to_embedding_field(const Tensor4<T>& t, bool normalized = true) {
  detail::require(t.n == 1, "expected a single-image tensor, got ", t.shape_string());
  EmbeddingField<T> f;
  f.height = t.h;
  f.width = t.w;
  f.dim = t.c;
  f.values = t.data;
  f.normalized = normalized;
  return f;
}

template <typename T>
Tensor4<T> from_embedding_field(const EmbeddingField<T>& f) {
  Tensor4<T> t(1, f.height, f.width, f.dim);
  t.data = f.values;
  return t;
}

template <typename T>
Tensor4<T> image_tensor(const Image& img) {
  Tensor4<T> t(1, img.height, img.width, img.channels);
  for (size_t i = 0; i < img.values.size(); ++i) t.data[i] = static_cast<T>(img.values[i]);
  return t;
}

}  // namespace wnet
