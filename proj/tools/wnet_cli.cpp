// wnet: synth / train / predict / eval / ablate.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "wnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

template <typename Cfg>
Cfg config_from(const json& j, const char* what) {
  try {
    Cfg c = j.get<Cfg>();
    return c;
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad ") + what + " config: " + e.what());
  }
}

/// --out, else $WNET_OUTPUT_ROOT/<verb>, else ./wnet_out/<verb>.
fs::path output_dir(const std::string& flag, const std::string& verb) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("WNET_OUTPUT_ROOT"); root && *root) return fs::path(root) / verb;
  return fs::path("wnet_out") / verb;
}

std::string stem_of(const fs::path& image) {
  std::string s = image.stem().string();
  const std::string suffix = "_image";
  if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    s.erase(s.size() - suffix.size());
  return s;
}

/// Command-line overrides of training settings; unset options leave the config alone.
struct TrainFlags {
  std::optional<double> lr, lambda;
  std::optional<int> steps, epochs, batch, embedding_dim, warmup, pretrain, radius, depth, base, features;
  std::optional<uint64_t> seed;
  std::optional<std::string> topology, concat;
  bool global = false, detach = false, staircase = false, no_intra = false;

  void add_to(CLI::App* app) {
    app->add_option("--lr", lr, "base learning rate");
    app->add_option("--lambda", lambda, "weight of the between-instance term");
    app->add_option("--steps", steps, "maximum optimizer steps");
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--embedding-dim", embedding_dim, "embedding dimension E");
    app->add_option("--warmup-steps", warmup, "linear learning-rate warmup steps");
    app->add_option("--pretrain-steps", pretrain, "distance-only steps before joint training");
    app->add_option("--neighbor-radius", radius, "neighbor radius in pixels (0: image-size default)");
    app->add_option("--depth", depth, "U-Net depth");
    app->add_option("--base-channels", base, "channels of the first U-Net level");
    app->add_option("--feature-channels", features, "width of the U-Net output features");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--topology", topology, "wnet or unet_two_head");
    app->add_option("--concat", concat, "none, coord, distmap, dfeat.N, efeat.N, dfeat.N+efeat.M");
    app->add_flag("--global", global, "between-instance term over all pairs");
    app->add_flag("--detach", detach, "stop embedding gradients at the concatenation");
    app->add_flag("--staircase", staircase, "step-wise learning-rate decay");
    app->add_flag("--no-intra", no_intra, "train with the between-instance term only");
  }

  void apply(wnet::TrainConfig& c) const {
    if (lr) c.base_lr = *lr;
    if (lambda) c.lambda = *lambda;
    if (steps) c.max_steps = *steps;
    if (epochs) c.max_epochs = *epochs;
    if (batch) c.batch_size = *batch;
    if (embedding_dim) c.topology.embedding_dim = *embedding_dim;
    if (warmup) c.warmup_steps = *warmup;
    if (pretrain) c.pretrain_steps = *pretrain;
    if (radius) c.neighbor_radius = *radius;
    if (depth) c.topology.depth = *depth;
    if (base) c.topology.base_channels = *base;
    if (features) c.topology.feature_channels = *features;
    if (seed) c.seed = *seed;
    if (topology) c.topology.kind = wnet::topology_from_string(*topology);
    if (concat) c.topology.concat = wnet::ConcatVariant::parse(*concat);
    if (global) c.global_constraints = true;
    if (detach) c.topology.detach_concat = true;
    if (staircase) c.staircase = true;
    if (no_intra) c.include_intra = false;
  }
};

int cmd_synth(const std::string& config, const std::string& out_flag, std::optional<int> count,
              std::optional<int> train_count, std::optional<uint64_t> seed) {
  // Either {"scene": {...}, "count": ...} or a bare scene config.
  const json file = read_json_file(config);
  auto scene = config_from<wnet::SceneConfig>(file.contains("scene") ? file.at("scene") : file, "scene");
  int total = file.value("count", 250);
  int n_train = file.value("train_count", 200);
  uint64_t master = file.value("seed", scene.seed);
  if (count) total = *count;
  if (train_count) n_train = *train_count;
  if (seed) master = *seed;
  if (total < 1 || n_train < 0 || n_train > total) throw UsageError("need count >= 1 and 0 <= train count <= count");
  scene.validate();
  const fs::path out = output_dir(out_flag, "synth");
  const auto manifest = wnet::write_synthetic_dataset(out, scene, master, n_train, total - n_train);
  std::cout << "wrote " << manifest.at("entries").size() << " scenes (" << n_train << " train, " << total - n_train
            << " val) to " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config, const std::string& out_flag, bool fast,
              const TrainFlags& flags) {
  wnet::TrainConfig cfg;
  if (fast) {
    wnet::ExperimentSpec spec;
    wnet::apply_fast_profile(spec);
    cfg = spec.train;
  }
  const json file = read_json_file(config);
  if (!file.empty()) {
    json merged = cfg;
    merged.merge_patch(file);
    cfg = config_from<wnet::TrainConfig>(merged, "training");
  }
  flags.apply(cfg);
  cfg.validate();
  const auto train_set = wnet::load_dataset_split(data_dir, "train");
  const auto val_set = wnet::load_dataset_split(data_dir, "val");
  if (train_set.empty()) throw UsageError("no training scenes in " + data_dir);
  cfg.topology.input_channels = train_set.front().image.channels;
  const fs::path out = output_dir(out_flag, "train");
  fs::create_directories(out);
  std::ofstream(out / "train_config.json") << json(cfg).dump(2) << "\n";

  wnet::TrainResult result;
  int code = 0;
  try {
    result = wnet::train(train_set, val_set, cfg, [](const wnet::LogRow& r, const wnet::ModelParams<float>&) {
      if (!std::isnan(r.val_msbd))
        std::cerr << "step " << r.step << " d_loss " << r.d_loss << " e_loss " << r.e_loss << " val_msbd " << r.val_msbd
                  << "\n";
    });
  } catch (const wnet::TrainingAborted& e) {
    std::cerr << "error: training aborted: " << e.what() << " (keeping last good parameters)\n";
    result = e.last_good();
    code = kRuntime;
  }
  wnet::write_log_csv(out / "metrics.csv", result.log);
  wnet::save_checkpoint(out / "checkpoint", cfg.topology, result.params, {{"train_config", cfg}});
  std::cout << "checkpoint written to " << (out / "checkpoint").string() << "\n";
  return code;
}

int cmd_predict(const std::string& checkpoint, const std::vector<std::string>& images, const std::string& mask_path,
                const std::string& out_flag, const std::string& method, const std::string& config) {
  auto ck = wnet::load_checkpoint(checkpoint);
  wnet::ClusterConfig cc;
  if (ck.extra.contains("train_config")) cc = ck.extra["train_config"].get<wnet::TrainConfig>().cluster;
  const json file = read_json_file(config);
  if (!file.empty()) {
    json merged = cc;
    merged.merge_patch(file);
    cc = config_from<wnet::ClusterConfig>(merged, "cluster");
  }
  cc.validate();
  wnet::ClusterMethod m;
  if (method == "angular") m = wnet::ClusterMethod::angular;
  else if (method == "meanshift") m = wnet::ClusterMethod::mean_shift;
  else throw UsageError("unknown clustering method '" + method + "' (angular or meanshift)");
  if (!mask_path.empty() && images.size() != 1) throw UsageError("--mask needs exactly one --image");

  const fs::path out = output_dir(out_flag, "predict");
  fs::create_directories(out);
  for (const auto& path : images) {
    const auto image = wnet::load_image_png(path);
    std::optional<wnet::Mask> mask;
    if (!mask_path.empty()) mask = wnet::load_mask(mask_path);
    auto pred = wnet::predict(image, ck.params, ck.spec, cc, m, mask ? &*mask : nullptr);
    const std::string stem = stem_of(path);
    wnet::save_distmap(pred.distmap, out / (stem + "_distmap.bin"));
    {
      std::ofstream os(out / (stem + "_embeddings.bin"), std::ios::binary);
      if (!os) throw wnet::Error("cannot write embeddings for " + stem);
      wnet::detail::put_u32le(os, static_cast<uint32_t>(pred.embeddings.height));
      wnet::detail::put_u32le(os, static_cast<uint32_t>(pred.embeddings.width));
      wnet::detail::put_u32le(os, static_cast<uint32_t>(pred.embeddings.dim));
      wnet::detail::put_f32le(os, pred.embeddings.values);
    }
    wnet::save_label_map(pred.segmentation.labels, out / (stem + "_labels.png"));
    std::cout << stem << ": " << pred.segmentation.labels.max_id() << " instances\n";
  }
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_flag) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = "_labels.png";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw UsageError("no *_labels.png predictions in " + pred_dir);
  const auto thresholds = wnet::default_iou_thresholds();
  std::vector<wnet::LabelPair> pairs;
  const fs::path out = output_dir(out_flag, "eval");
  fs::create_directories(out);
  std::ofstream csv(out / "report.csv");
  if (!csv) throw wnet::Error("cannot write " + (out / "report.csv").string());
  csv << "# ap = TP/(TP+FP+FN) per IoU threshold, greedy one-to-one IoU matching\n";
  csv << "image_id,sbd";
  for (double t : thresholds) csv << ",ap@" << wnet::fmt(t, 2);
  csv << "\n";
  for (const auto& id : ids) {
    const fs::path gt_path = fs::path(gt_dir) / (id + "_labels.png");
    if (!fs::exists(gt_path)) throw UsageError("no ground truth for '" + id + "' in " + gt_dir);
    auto pred = wnet::load_label_map(fs::path(pred_dir) / (id + "_labels.png")).labels;
    auto gt = wnet::load_label_map(gt_path).labels;
    csv << id << ',' << wnet::fmt(wnet::symmetric_best_dice(pred, gt));
    for (double ap : wnet::average_precision(pred, gt, thresholds)) csv << ',' << wnet::fmt(ap);
    csv << "\n";
    pairs.emplace_back(std::move(pred), std::move(gt));
  }
  const double msbd = wnet::msbd(pairs), map = wnet::map_iou(pairs, thresholds);
  json summary{{"images", pairs.size()},
               {"msbd", msbd},
               {"map", map},
               {"iou_thresholds", thresholds},
               {"ap_convention", "TP/(TP+FP+FN), greedy one-to-one matching by IoU, averaged per image then over thresholds"}};
  std::ofstream(out / "report.json") << summary.dump(2) << "\n";
  std::cout << "images " << pairs.size() << "  mSBD " << wnet::fmt(msbd, 4) << "  mAP " << wnet::fmt(map, 4) << "\n";
  return 0;
}

int cmd_ablate(const std::string& experiment, const std::string& config, const std::string& out_flag, bool fast,
               std::optional<uint64_t> seed, std::optional<int> seeds, const TrainFlags& flags) {
  wnet::ExperimentSpec spec;
  spec.experiment = wnet::experiment_from_string(experiment);
  if (fast) wnet::apply_fast_profile(spec);
  const json file = read_json_file(config);
  if (file.contains("train")) {
    json merged = spec.train;
    merged.merge_patch(file["train"]);
    spec.train = config_from<wnet::TrainConfig>(merged, "training");
  }
  if (file.contains("scene")) {
    json merged = spec.data.scene;
    merged.merge_patch(file["scene"]);
    spec.data.scene = config_from<wnet::SceneConfig>(merged, "scene");
  }
  spec.data.train_count = file.value("train_count", spec.data.train_count);
  spec.data.val_count = file.value("val_count", spec.data.val_count);
  spec.master_seed = file.value("master_seed", spec.master_seed);
  spec.seeds = file.value("seeds", spec.seeds);
  flags.apply(spec.train);
  if (seed) spec.master_seed = *seed;
  if (seeds) spec.seeds = *seeds;
  spec.validate();

  const fs::path out = output_dir(out_flag, "ablate/" + experiment);
  fs::create_directories(out);
  const auto data = wnet::make_ablation_data(spec.data, spec.master_seed);
  wnet::ModelCache cache;
  const auto records = wnet::run_experiment(spec, data, &cache, [](const wnet::RunRecord& r) {
    std::cerr << r.spec.config << " seed " << r.seed_index << ": ";
    if (r.ok) std::cerr << "mSBD " << wnet::fmt(r.report.msbd, 4) << " mAP " << wnet::fmt(r.report.map, 4) << "\n";
    else std::cerr << "FAILED " << r.error << "\n";
  });
  wnet::write_ablation_outputs(out, spec, records);
  for (const auto& s : wnet::summarize(records))
    std::cout << s.config << "  median mSBD " << wnet::fmt(s.median_msbd, 4) << "  median mAP " << wnet::fmt(s.median_map, 4)
              << "  (" << s.runs << " runs)\n";
  const bool all_ok = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.ok; });
  if (!all_ok) std::cerr << "error: some runs failed; partial results in " << out.string() << "\n";
  return all_ok ? 0 : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance segmentation with distance regression and pixel embeddings"};
  app.require_subcommand(1);

  std::string config, out, data_dir, checkpoint, mask, method = "angular", pred_dir, gt_dir, experiment;
  std::vector<std::string> images;
  std::optional<int> count, train_count, seeds;
  std::optional<uint64_t> seed;
  bool fast = false;
  TrainFlags train_flags, ablate_flags;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config, "scene config JSON")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory");
  synth->add_option("--count", count, "number of scenes (default 250)");
  synth->add_option("--train-count", train_count, "scenes in the training split (default 200)");
  synth->add_option("--seed", seed, "master seed");

  auto* train = app.add_subcommand("train", "train a model on a synthetic dataset");
  train->add_option("--data", data_dir, "dataset directory written by synth")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", config, "training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory");
  train->add_flag("--fast", fast, "small network and short schedule");
  train_flags.add_to(train);

  auto* predict = app.add_subcommand("predict", "segment images with a trained checkpoint");
  predict->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--image", images, "input PNG (repeatable)")->required()->check(CLI::ExistingFile);
  predict->add_option("--mask", mask, "foreground mask PNG")->check(CLI::ExistingFile);
  predict->add_option("--method", method, "angular or meanshift");
  predict->add_option("--config", config, "clustering config JSON")->check(CLI::ExistingFile);
  predict->add_option("--out", out, "output directory");

  auto* eval = app.add_subcommand("eval", "score predicted label maps against ground truth");
  eval->add_option("--pred", pred_dir, "directory of <id>_labels.png predictions")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", gt_dir, "directory of <id>_labels.png ground truth")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run an ablation experiment");
  ablate->add_option("--experiment", experiment, "experiment name")
      ->required()
      ->check(CLI::IsMember(wnet::experiment_names()));
  ablate->add_option("--config", config, "experiment config JSON")->check(CLI::ExistingFile);
  ablate->add_option("--out", out, "output directory");
  ablate->add_flag("--fast", fast, "small images, small network, 300 steps");
  ablate->add_option("--master-seed", seed, "master seed for data and training");
  ablate->add_option("--seeds", seeds, "training seeds per configuration");
  ablate_flags.add_to(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return cmd_synth(config, out, count, train_count, seed);
    if (*train) return cmd_train(data_dir, config, out, fast, train_flags);
    if (*predict) return cmd_predict(checkpoint, images, mask, out, method, config);
    if (*eval) return cmd_eval(pred_dir, gt_dir, out);
    if (*ablate) return cmd_ablate(experiment, config, out, fast, seed, seeds, ablate_flags);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const wnet::ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
