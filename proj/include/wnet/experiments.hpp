#pragma once

// Ablation experiments: shared synthetic data, several configurations, a few
// training seeds each, CSV tables and simple SVG line plots.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wnet/trainer.hpp"

namespace wnet {

enum class Experiment { unet_vs_wnet, concat_variants, local_vs_global, dim_sweep, lambda_sweep, clustering_compare };

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"unet_vs_wnet", "concat_variants", "local_vs_global",
                                              "dim_sweep",    "lambda_sweep",    "clustering_compare"};
  return names;
}

inline std::string to_string(Experiment e) { return experiment_names()[static_cast<size_t>(e)]; }

inline Experiment experiment_from_string(const std::string& s) {
  const auto& names = experiment_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<Experiment>(i);
  throw ContractViolation("unknown experiment '" + s + "'");
}

/// Scenes generated for every configuration of an experiment.
struct DataConfig {
  SceneConfig scene{};
  int train_count = 200;
  int val_count = 50;
};

struct ExperimentSpec {
  Experiment experiment = Experiment::unet_vs_wnet;
  TrainConfig train{};
  DataConfig data{};
  uint64_t master_seed = 1;
  int seeds = 3;

  void validate() const {
    train.validate();
    data.scene.validate();
    detail::require(data.train_count >= 1 && data.val_count >= 1, "need at least one training and one validation scene");
    detail::require(seeds >= 1, "need at least one training seed");
  }
};

/// Small images, a slim network and a short schedule; the settings behind `--fast`.
inline void apply_fast_profile(ExperimentSpec& s) {
  s.data.scene.height = 32;
  s.data.scene.width = 32;
  s.data.scene.margin = 1;
  s.data.scene.min_objects = 6;
  s.data.scene.max_objects = 8;
  s.data.train_count = 200;
  s.data.val_count = 30;
  auto& t = s.train;
  t.base_lr = 2e-3;
  t.warmup_steps = 50;
  t.decay_steps = 5000;
  t.batch_size = 2;
  t.max_steps = 300;
  t.eval_every_epochs = 0;
  t.topology.depth = 2;
  t.topology.base_channels = 8;
  t.topology.convs_per_block = 1;
  t.topology.feature_channels = 16;
  t.cluster.seed_window = 3;
}

struct AblationData {
  Dataset train;
  Dataset val;
};

inline Dataset generate_dataset(const SceneConfig& base, uint64_t master_seed, int first_index, int count) {
  Dataset out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneConfig c = base;
    c.seed = derive_seed(master_seed, static_cast<uint64_t>(first_index + i));
    auto scene = synth_generate(c);
    out.push_back({std::move(scene.image), std::move(scene.labels), std::move(scene.foreground)});
  }
  return out;
}

inline AblationData make_ablation_data(const DataConfig& d, uint64_t master_seed) {
  const uint64_t data_seed = derive_seed(master_seed, 0x5ce7e);
  return {generate_dataset(d.scene, data_seed, 0, d.train_count),
          generate_dataset(d.scene, data_seed, d.train_count, d.val_count)};
}

/// One configuration of an experiment.
struct RunSpec {
  std::string config;  // row label
  std::string value;   // swept variable as printed on the plot axis
  TrainConfig train;
  ClusterMethod method = ClusterMethod::angular;
};

/// Configurations in table order. The base config supplies everything not swept.
inline std::vector<RunSpec> experiment_runs(Experiment e, const TrainConfig& base) {
  std::vector<RunSpec> runs;
  auto wnet_with = [&](const std::string& concat) {
    TrainConfig c = base;
    c.topology.kind = Topology::wnet;
    c.topology.concat = ConcatVariant::parse(concat);
    return c;
  };
  auto unet_with = [&](const std::string& concat) {
    TrainConfig c = base;
    c.topology.kind = Topology::unet_two_head;
    c.topology.concat = ConcatVariant::parse(concat);
    return c;
  };
  switch (e) {
    case Experiment::unet_vs_wnet:
      runs.push_back({"unet_two_head", "unet", unet_with("none"), ClusterMethod::angular});
      runs.push_back({"wnet_dfeat.32", "wnet", wnet_with("dfeat.32"), ClusterMethod::angular});
      break;
    case Experiment::concat_variants:
      runs.push_back({"none", "none", unet_with("none"), ClusterMethod::angular});
      runs.push_back({"coordinate", "coordinate", unet_with("coord"), ClusterMethod::angular});
      for (const char* v : {"distmap", "dfeat.8", "dfeat.32", "efeat.32", "dfeat.16+efeat.16"})
        runs.push_back({v, v, wnet_with(v), ClusterMethod::angular});
      break;
    case Experiment::local_vs_global:
      for (bool global : {false, true}) {
        TrainConfig c = wnet_with("dfeat.32");
        c.topology.embedding_dim = 4;
        c.global_constraints = global;
        runs.push_back({global ? "global_E4" : "local_E4", global ? "global" : "local", c, ClusterMethod::angular});
      }
      break;
    case Experiment::dim_sweep:
      for (int d : {4, 8, 16, 32, 64}) {
        TrainConfig c = wnet_with("dfeat.32");
        c.topology.embedding_dim = d;
        runs.push_back({"E=" + std::to_string(d), std::to_string(d), c, ClusterMethod::angular});
      }
      break;
    case Experiment::lambda_sweep:
      for (const char* l : {"0.5", "1", "10", "100", "500", "only"}) {
        TrainConfig c = wnet_with("dfeat.32");
        if (std::string(l) == "only") {
          c.lambda = 1.0;
          c.include_intra = false;
        } else {
          c.lambda = std::stod(l);
        }
        runs.push_back({std::string("lambda=") + l, l, c, ClusterMethod::angular});
      }
      break;
    case Experiment::clustering_compare:
      runs.push_back({"angular", "angular", wnet_with("dfeat.32"), ClusterMethod::angular});
      runs.push_back({"meanshift", "meanshift", wnet_with("dfeat.32"), ClusterMethod::mean_shift});
      break;
  }
  return runs;
}

/// True when some pair of distinct ground-truth instances has mean embeddings
/// within `max_angle_deg` of each other.
template <typename T>
bool has_colliding_means(const EmbeddingField<T>& emb, const LabelMap& gt, double max_angle_deg = 45.0) {
  const auto stats = instance_stats(emb, gt);
  const double min_cos = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  for (int a = 1; a <= stats.count; ++a) {
    if (stats.pixels[a] == 0) continue;
    for (int b = a + 1; b <= stats.count; ++b) {
      if (stats.pixels[b] == 0) continue;
      if (static_cast<double>(cosine_similarity(stats.mean(a), stats.mean(b))) >= min_cos) return true;
    }
  }
  return false;
}

struct RunRecord {
  RunSpec spec;
  int seed_index = 0;
  uint64_t seed = 0;
  bool ok = true;
  std::string error;
  EvalReport report;
  /// Validation images with at least one pair of gt instance means within 45 degrees.
  int colliding_images = 0;
  double final_d_loss = std::numeric_limits<double>::quiet_NaN();
  double final_e_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::vector<LogRow> log;
};

/// Trained models keyed by (config, seed) so that configurations shared between
/// experiments train once.
class ModelCache {
 public:
  struct Entry {
    ModelParams<float> params;
    std::vector<LogRow> log;
  };

  static std::string key(const TrainConfig& c) { return nlohmann::json(c).dump(); }

  const Entry* find(const TrainConfig& c) const {
    auto it = entries_.find(key(c));
    return it == entries_.end() ? nullptr : &it->second;
  }

  const Entry& put(const TrainConfig& c, Entry e) { return entries_[key(c)] = std::move(e); }

 private:
  std::map<std::string, Entry> entries_;
};

using RunCallback = std::function<void(const RunRecord&)>;

/// Trains (or reuses) and evaluates every configuration for every seed. A failing
/// run is recorded with ok = false and does not stop the others.
inline std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, const AblationData& data,
                                             ModelCache* cache = nullptr, const RunCallback& on_run = nullptr) {
  spec.validate();
  std::vector<RunRecord> records;
  for (const auto& run : experiment_runs(spec.experiment, spec.train)) {
    for (int k = 0; k < spec.seeds; ++k) {
      RunRecord rec;
      rec.spec = run;
      rec.seed_index = k;
      rec.seed = derive_seed(spec.master_seed, 1000 + static_cast<uint64_t>(k));
      rec.spec.train.seed = rec.seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        const ModelCache::Entry* hit = cache ? cache->find(rec.spec.train) : nullptr;
        ModelCache::Entry trained;
        if (!hit) {
          auto result = train(data.train, {}, rec.spec.train);
          trained = {std::move(result.params), std::move(result.log)};
          if (cache) hit = &cache->put(rec.spec.train, std::move(trained));
          else hit = &trained;
        }
        ModelParams<float> params = hit->params;
        rec.log = hit->log;
        if (!rec.log.empty()) {
          rec.final_d_loss = rec.log.back().d_loss;
          rec.final_e_loss = rec.log.back().e_loss;
        }
        const auto& topo = rec.spec.train.topology;
        rec.report = evaluate(data.val, params, topo, rec.spec.train.cluster, run.method);
        for (const auto& s : data.val) {
          auto fwd = forward(image_tensor<float>(standardize_image(s.image)), params, topo);
          rec.colliding_images += has_colliding_means(to_embedding_field(fwd.tape.value(fwd.embeddings)), s.labels);
        }
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (on_run) on_run(rec);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  detail::require(!v.empty(), "mean of an empty sample");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Per-configuration medians over seeds, in table order. Failed runs are skipped.
struct ConfigSummary {
  std::string config;
  std::string value;
  int runs = 0;
  double median_msbd = std::numeric_limits<double>::quiet_NaN();
  double median_map = std::numeric_limits<double>::quiet_NaN();
  double median_intra = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<ConfigSummary> summarize(const std::vector<RunRecord>& records) {
  std::vector<ConfigSummary> out;
  std::map<std::string, size_t> slot;
  std::vector<std::vector<double>> msbd, map, intra;
  for (const auto& r : records) {
    if (!slot.count(r.spec.config)) {
      slot[r.spec.config] = out.size();
      out.push_back({r.spec.config, r.spec.value});
      msbd.emplace_back();
      map.emplace_back();
      intra.emplace_back();
    }
    if (!r.ok) continue;
    const size_t i = slot[r.spec.config];
    msbd[i].push_back(r.report.msbd);
    map[i].push_back(r.report.map);
    intra[i].push_back(mean_of(r.report.intra_consistency));
  }
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].runs = static_cast<int>(msbd[i].size());
    if (msbd[i].empty()) continue;
    out[i].median_msbd = median(msbd[i]);
    out[i].median_map = median(map[i]);
    out[i].median_intra = median(intra[i]);
  }
  return out;
}

inline std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Quotes a CSV field when needed.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "step,lr,d_loss,e_loss,val_msbd\n";
  for (const auto& r : log) {
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.9g", r.lr);
    os << r.step << ',' << lr << ',' << fmt(r.d_loss, 8) << ',' << fmt(r.e_loss, 8) << ',' << fmt(r.val_msbd) << '\n';
  }
}

struct PlotSeries {
  std::string name;
  std::vector<double> values;  // NaN leaves a gap
};

/// Line chart over categorical x positions.
inline std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                 const std::vector<std::string>& x_ticks, const std::vector<PlotSeries>& series) {
  const double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 60;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-9) lo -= 0.05, hi += 0.05;
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  const size_t n = x_ticks.size();
  auto xpos = [&](size_t i) { return n <= 1 ? left + (W - left - right) / 2 : left + (W - left - right) * i / (n - 1.0); };
  auto ypos = [&](double v) { return top + (H - top - bottom) * (hi - v) / (hi - lo); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << ypos(v) + 4 << "\" text-anchor=\"end\">" << fmt(v, 3) << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << ypos(v) << "\" x2=\"" << W - right << "\" y2=\"" << ypos(v)
       << "\" stroke=\"#ddd\"/>\n";
  }
  for (size_t i = 0; i < n; ++i)
    os << "<text x=\"" << xpos(i) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << esc(x_ticks[i]) << "</text>\n";
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << esc(x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 5];
    std::string pts;
    for (size_t i = 0; i < series[s].values.size() && i < n; ++i) {
      const double v = series[s].values[i];
      if (!std::isfinite(v)) continue;
      pts += fmt(xpos(i), 1) + "," + fmt(ypos(v), 1) + " ";
      os << "<circle cx=\"" << fmt(xpos(i), 1) << "\" cy=\"" << fmt(ypos(v), 1) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    os << "<text x=\"" << W - right - 4 << "\" y=\"" << top + 14 * (s + 1) << "\" text-anchor=\"end\" fill=\"" << color
       << "\">" << esc(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// results.csv (one row per run), summary.csv (medians per configuration),
/// logs/<config>_seed<k>.csv, plot.svg for sweeps, and timings.json with wall
/// times (kept out of the CSVs so they stay reproducible).
inline void write_ablation_outputs(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                   const std::vector<RunRecord>& records) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "logs");
  {
    std::ofstream os(dir / "results.csv");
    if (!os) throw Error("cannot write " + (dir / "results.csv").string());
    os << "experiment,config,value,seed_index,seed,status,msbd,map,intra_consistency,colliding_images,final_d_loss,"
          "final_e_loss\n";
    for (const auto& r : records) {
      os << to_string(spec.experiment) << ',' << csv_field(r.spec.config) << ',' << csv_field(r.spec.value) << ','
         << r.seed_index << ',' << r.seed << ',' << (r.ok ? "ok" : csv_field("failed: " + r.error)) << ',';
      if (r.ok)
        os << fmt(r.report.msbd) << ',' << fmt(r.report.map) << ',' << fmt(mean_of(r.report.intra_consistency)) << ','
           << r.colliding_images << ',' << fmt(r.final_d_loss) << ',' << fmt(r.final_e_loss) << '\n';
      else
        os << "nan,nan,nan,0,nan,nan\n";
    }
  }
  const auto summary = summarize(records);
  {
    std::ofstream os(dir / "summary.csv");
    if (!os) throw Error("cannot write " + (dir / "summary.csv").string());
    os << "experiment,config,value,runs,median_msbd,median_map,median_intra_consistency\n";
    for (const auto& s : summary)
      os << to_string(spec.experiment) << ',' << csv_field(s.config) << ',' << csv_field(s.value) << ',' << s.runs << ','
         << fmt(s.median_msbd) << ',' << fmt(s.median_map) << ',' << fmt(s.median_intra) << '\n';
  }
  for (const auto& r : records) {
    std::string name = r.spec.config;
    for (char& c : name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-') c = '_';
    write_log_csv(dir / "logs" / (name + "_seed" + std::to_string(r.seed_index) + ".csv"), r.log);
  }
  if (spec.experiment == Experiment::dim_sweep || spec.experiment == Experiment::lambda_sweep) {
    std::vector<std::string> ticks;
    PlotSeries msbd{"mSBD (median)", {}}, map{"mAP (median)", {}};
    for (const auto& s : summary) {
      ticks.push_back(s.value);
      msbd.values.push_back(s.median_msbd);
      map.values.push_back(s.median_map);
    }
    const bool dims = spec.experiment == Experiment::dim_sweep;
    std::ofstream os(dir / "plot.svg");
    os << line_plot_svg(dims ? "mSBD vs embedding dimension" : "mSBD vs loss weight lambda",
                        dims ? "embedding dimension E" : "lambda", "score", ticks, {msbd, map});
  }
  nlohmann::json timings = nlohmann::json::array();
  for (const auto& r : records)
    timings.push_back({{"config", r.spec.config}, {"seed_index", r.seed_index}, {"seconds", r.seconds}});
  std::ofstream(dir / "timings.json") << timings.dump(2) << "\n";
}

}  // namespace wnet
