#pragma once

// Adam with exponential learning-rate decay, and the joint training loop
// (distance MSE + cosine embedding loss).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "json.hpp"
#include "wnet/pipeline.hpp"

namespace wnet {

struct TrainConfig {
  double base_lr = 1e-4;
  int decay_steps = 5000;
  double decay_rate = 0.9;
  bool staircase = false;
  /// Linear ramp of the learning rate over the first steps (0: off).
  int warmup_steps = 0;
  int batch_size = 4;
  int max_epochs = 500;
  int max_steps = 2000;
  double lambda = 1.0;
  bool include_intra = true;
  TopologySpec topology{};
  uint64_t seed = 1;
  /// 0 picks the image-size default.
  int neighbor_radius = 0;
  bool global_constraints = false;
  /// Steps at the start that train the distance head only.
  int pretrain_steps = 0;
  /// Validation every this many epochs (0: only after the last step).
  int eval_every_epochs = 1;
  ClusterConfig cluster{};

  void validate() const {
    detail::require(base_lr > 0 && std::isfinite(base_lr), "base lr must be > 0");
    detail::require(decay_steps >= 1, "decay_steps must be >= 1");
    detail::require(decay_rate > 0 && decay_rate <= 1, "decay_rate must be in (0, 1]");
    detail::require(warmup_steps >= 0, "warmup_steps must be >= 0");
    detail::require(batch_size >= 1, "batch size must be >= 1");
    detail::require(max_epochs >= 0 && max_steps >= 0, "epoch/step limits must be >= 0");
    detail::require(lambda >= 0 && std::isfinite(lambda), "lambda must be finite and >= 0");
    detail::require(neighbor_radius >= 0, "neighbor radius must be >= 0");
    topology.validate();
    cluster.validate();
  }
};

inline void to_json(nlohmann::json& j, const ClusterConfig& c) {
  j = nlohmann::json{{"delta_deg", c.delta_deg},           {"threshold_frac", c.threshold_frac},
                     {"seed_window", c.seed_window},       {"bandwidth", c.bandwidth},
                     {"max_iterations", c.max_iterations}, {"spatial_connectivity", c.spatial_connectivity}};
}

inline void from_json(const nlohmann::json& j, ClusterConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("delta_deg", c.delta_deg);
  get("threshold_frac", c.threshold_frac);
  get("seed_window", c.seed_window);
  get("bandwidth", c.bandwidth);
  get("max_iterations", c.max_iterations);
  get("spatial_connectivity", c.spatial_connectivity);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"base_lr", c.base_lr},
                     {"decay_steps", c.decay_steps},
                     {"decay_rate", c.decay_rate},
                     {"staircase", c.staircase},
                     {"warmup_steps", c.warmup_steps},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},
                     {"lambda", c.lambda},
                     {"include_intra", c.include_intra},
                     {"topology", c.topology},
                     {"seed", c.seed},
                     {"neighbor_radius", c.neighbor_radius},
                     {"global_constraints", c.global_constraints},
                     {"pretrain_steps", c.pretrain_steps},
                     {"eval_every_epochs", c.eval_every_epochs},
                     {"cluster", c.cluster}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("base_lr", c.base_lr);
  get("decay_steps", c.decay_steps);
  get("decay_rate", c.decay_rate);
  get("staircase", c.staircase);
  get("warmup_steps", c.warmup_steps);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("max_steps", c.max_steps);
  get("lambda", c.lambda);
  get("include_intra", c.include_intra);
  if (j.contains("topology")) from_json(j.at("topology"), c.topology);
  get("seed", c.seed);
  get("neighbor_radius", c.neighbor_radius);
  get("global_constraints", c.global_constraints);
  get("pretrain_steps", c.pretrain_steps);
  get("eval_every_epochs", c.eval_every_epochs);
  if (j.contains("cluster")) from_json(j.at("cluster"), c.cluster);
}

/// base * rate^(step / decay_steps); with `staircase` the exponent is floored.
/// During warmup the result is further scaled by (step + 1) / warmup_steps.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  detail::require(step >= 0, "step must be >= 0");
  double e = static_cast<double>(step) / cfg.decay_steps;
  if (cfg.staircase) e = std::floor(e);
  const double lr = cfg.base_lr * std::pow(cfg.decay_rate, e);
  if (step < cfg.warmup_steps) return lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  return lr;
}

template <typename T>
struct OptimState {
  std::vector<Tensor4<T>> m, v;
  int64_t t = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update applied in place to every parameter.
template <typename T>
void adam_step(ModelParams<T>& params, OptimState<T>& state, double lr, const AdamHyper& hp = {}) {
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.push_back(zeros_like(e.value));
      state.v.push_back(zeros_like(e.value));
    }
  }
  detail::require(state.m.size() == entries.size(), "optimizer state has ", state.m.size(), " slots for ",
                  entries.size(), " parameters");
  for (const auto& e : entries)
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].value.data;
    const auto& g = entries[i].grad.data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    detail::require(m.size() == p.size(), "optimizer state shape mismatch for '", entries[i].name, "'");
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      p[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
  }
}

struct LogRow {
  int64_t step = 0;
  double lr = 0.0;
  double d_loss = 0.0;
  double e_loss = 0.0;
  double val_msbd = std::numeric_limits<double>::quiet_NaN();  // NaN: not evaluated at this step
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<LogRow> log;
};

/// Thrown when a loss turns non-finite; carries the parameters from before the
/// failing step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, TrainResult last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const TrainResult& last_good() const { return last_good_; }

 private:
  TrainResult last_good_;
};

/// Ground truth derived once per training image.
struct PreparedSample {
  Tensor4<float> input;
  DistMap distmap;
  NeighborGraph graph;
  const Sample* source = nullptr;
};

inline std::vector<PreparedSample> prepare(const Dataset& data, const TrainConfig& cfg) {
  std::vector<PreparedSample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    PreparedSample p;
    p.input = image_tensor<float>(standardize_image(s.image));
    p.distmap = compute_distmap(s.labels);
    const int radius = cfg.neighbor_radius > 0 ? cfg.neighbor_radius : default_neighbor_radius(s.labels.height, s.labels.width);
    p.graph = cfg.global_constraints ? global_graph(s.labels) : build_neighbor_graph(s.labels, radius);
    p.source = &s;
    out.push_back(std::move(p));
  }
  return out;
}

struct StepLosses {
  double d_loss = 0.0;
  double e_loss = 0.0;
};

/// Forward + backward for one image, scaled by `weight`. Gradients add into `params`.
template <typename T>
StepLosses accumulate_gradients(const Tensor4<T>& input, const DistMap& gt_dist, const LabelMap& labels,
                                const NeighborGraph& graph, ModelParams<T>& params, const TopologySpec& spec,
                                const LossConfig& loss_cfg, bool train_embeddings, double weight) {
  auto fwd = forward(input, params, spec);
  const auto& dist = fwd.tape.value(fwd.distmap);
  StepLosses out;
  HeadGrads<T> grads;
  const std::span<const T> pred(dist.data);
  out.d_loss = static_cast<double>(distance_mse_loss(pred, std::span<const float>(gt_dist.values)));
  grads.distmap = zeros_like(dist);
  {
    auto g = distance_mse_grad(pred, std::span<const float>(gt_dist.values));
    for (size_t i = 0; i < g.size(); ++i) grads.distmap.data[i] = static_cast<T>(weight) * g[i];
  }
  auto embedding_head = [&](Var v) {
    auto lg = embedding_loss_and_grad(to_embedding_field(fwd.tape.value(v)), labels, graph, loss_cfg);
    out.e_loss += static_cast<double>(lg.loss);
    Tensor4<T> g = from_embedding_field(lg.grad);
    for (T& x : g.data) x *= static_cast<T>(weight);
    return g;
  };
  grads.embeddings = embedding_head(fwd.embeddings);
  if (fwd.aux_embeddings.valid()) grads.aux_embeddings = embedding_head(fwd.aux_embeddings);
  if (!train_embeddings) {
    grads.embeddings = Tensor4<T>();
    grads.aux_embeddings = Tensor4<T>();
  }
  backward(fwd, std::move(grads));
  return out;
}

using TrainCallback = std::function<void(const LogRow&, const ModelParams<float>&)>;

/// Trains from He-initialized weights. Deterministic for a fixed config and data.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                         const TrainCallback& on_log = nullptr) {
  cfg.validate();
  detail::require(!train_set.empty(), "training set is empty");
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.params = build_params<float>(cfg.topology);
  he_normal_init(result.params, rng);

  const int64_t n = static_cast<int64_t>(train_set.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total = std::min<int64_t>(cfg.max_steps, static_cast<int64_t>(cfg.max_epochs) * steps_per_epoch);
  if (total == 0) return result;

  const auto prepared = prepare(train_set, cfg);
  const LossConfig loss_cfg{cfg.lambda, cfg.include_intra, 1e-8};
  OptimState<float> state;
  std::vector<size_t> order(static_cast<size_t>(n));
  size_t cursor = order.size();
  TrainResult last_good;

  auto validate_now = [&]() {
    if (val_set.empty()) return std::numeric_limits<double>::quiet_NaN();
    return evaluate(val_set, result.params, cfg.topology, cfg.cluster).msbd;
  };

  for (int64_t step = 0; step < total; ++step) {
    result.params.zero_grad();
    const size_t b = static_cast<size_t>(cfg.batch_size);
    const double weight = 1.0 / static_cast<double>(b);
    StepLosses sum;
    for (size_t k = 0; k < b; ++k) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ps = prepared[order[cursor++]];
      const auto l = accumulate_gradients(ps.input, ps.distmap, ps.source->labels, ps.graph, result.params,
                                          cfg.topology, loss_cfg, step >= cfg.pretrain_steps, weight);
      sum.d_loss += l.d_loss * weight;
      sum.e_loss += l.e_loss * weight;
    }
    LogRow row;
    row.step = step;
    row.lr = lr_at(step, cfg);
    row.d_loss = sum.d_loss;
    row.e_loss = sum.e_loss;
    if (!std::isfinite(row.d_loss) || !std::isfinite(row.e_loss)) {
      if (last_good.params.size() == 0) last_good.params = result.params;
      last_good.log = result.log;
      throw TrainingAborted(detail::concat("loss became non-finite at step ", step), std::move(last_good));
    }
    last_good.params = result.params;
    try {
      adam_step(result.params, state, row.lr);
    } catch (const NumericError& e) {
      last_good.log = result.log;
      throw TrainingAborted(detail::concat("step ", step, ": ", e.what()), std::move(last_good));
    }

    const bool epoch_end = (step + 1) % steps_per_epoch == 0;
    const bool last = step + 1 == total;
    if (last || (cfg.eval_every_epochs > 0 && epoch_end && ((step + 1) / steps_per_epoch) % cfg.eval_every_epochs == 0))
      row.val_msbd = validate_now();
    result.log.push_back(row);
    if (on_log) on_log(row, result.params);
  }
  return result;
}

}  // namespace wnet
