#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "gradcheck.hpp"
#include "wnet.hpp"

using namespace wnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> configs(Experiment e) {
  std::vector<std::string> out;
  for (const auto& r : experiment_runs(e, TrainConfig{})) out.push_back(r.config);
  return out;
}

ExperimentSpec tiny_spec() {
  ExperimentSpec s;
  s.data.scene.height = 16;
  s.data.scene.width = 16;
  s.data.scene.margin = 1;
  s.data.scene.min_objects = 2;
  s.data.scene.max_objects = 3;
  s.data.scene.min_instance_pixels = 4;
  s.data.train_count = 3;
  s.data.val_count = 2;
  s.seeds = 2;
  s.train.topology = gradcheck::tiny_topology(Topology::wnet, "dfeat.8");
  s.train.max_steps = 2;
  s.train.batch_size = 1;
  s.train.eval_every_epochs = 0;
  s.train.cluster.seed_window = 3;
  return s;
}

}  // namespace

TEST(Experiments, RunListsInTableOrder) {
  EXPECT_EQ(configs(Experiment::unet_vs_wnet), (std::vector<std::string>{"unet_two_head", "wnet_dfeat.32"}));
  EXPECT_EQ(configs(Experiment::concat_variants),
            (std::vector<std::string>{"none", "coordinate", "distmap", "dfeat.8", "dfeat.32", "efeat.32",
                                      "dfeat.16+efeat.16"}));
  EXPECT_EQ(configs(Experiment::local_vs_global), (std::vector<std::string>{"local_E4", "global_E4"}));
  EXPECT_EQ(configs(Experiment::dim_sweep), (std::vector<std::string>{"E=4", "E=8", "E=16", "E=32", "E=64"}));
  EXPECT_EQ(configs(Experiment::lambda_sweep).size(), 6u);
  EXPECT_EQ(configs(Experiment::clustering_compare), (std::vector<std::string>{"angular", "meanshift"}));

  const auto lambdas = experiment_runs(Experiment::lambda_sweep, TrainConfig{});
  EXPECT_EQ(lambdas[3].train.lambda, 100.0);
  EXPECT_TRUE(lambdas[3].train.include_intra);
  EXPECT_FALSE(lambdas[5].train.include_intra);
  const auto lg = experiment_runs(Experiment::local_vs_global, TrainConfig{});
  EXPECT_EQ(lg[0].train.topology.embedding_dim, 4);
  EXPECT_FALSE(lg[0].train.global_constraints);
  EXPECT_TRUE(lg[1].train.global_constraints);
  for (const auto& r : experiment_runs(Experiment::concat_variants, TrainConfig{})) EXPECT_NO_THROW(r.train.validate());
}

TEST(Experiments, NamesRoundTrip) {
  for (const auto& n : experiment_names()) EXPECT_EQ(to_string(experiment_from_string(n)), n);
  EXPECT_THROW(experiment_from_string("nope"), ContractViolation);
}

TEST(Experiments, CollidingMeans) {
  LabelMap l(1, 2);
  l.ids = {1, 2};
  EmbeddingField<float> f(1, 2, 2);
  f.pixel(0)[0] = 1;
  f.pixel(1)[1] = 1;
  EXPECT_FALSE(has_colliding_means(f, l));
  f.pixel(1)[0] = 1.1f;  // about 42 degrees apart
  EXPECT_TRUE(has_colliding_means(f, l));
}

TEST(Stats, MedianAndFormatting) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), ContractViolation);
  EXPECT_EQ(fmt(0.5, 3), "0.500");
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(Stats, SummarySkipsFailedRuns) {
  std::vector<RunRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].spec.config = "c";
    recs[i].report.msbd = 0.1 * (i + 1);
    recs[i].report.intra_consistency = {1.0};
  }
  recs[2].ok = false;
  const auto s = summarize(recs);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].runs, 2);
  EXPECT_NEAR(s[0].median_msbd, 0.15, 1e-15);
}

TEST(Plot, SvgIsWellFormed) {
  const auto svg = line_plot_svg("t <1>", "x", "y", {"a", "b", "c"}, {{"s", {0.1, std::nan(""), 0.3}}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("t &lt;1&gt;"), std::string::npos);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
}

TEST(Experiments, RunWritesReproducibleOutputs) {
  auto spec = tiny_spec();
  spec.experiment = Experiment::clustering_compare;
  const auto data = make_ablation_data(spec.data, spec.master_seed);
  ModelCache cache;
  int trained_calls = 0;
  const auto a = run_experiment(spec, data, &cache, [&](const RunRecord&) { ++trained_calls; });
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(trained_calls, 4);
  for (const auto& r : a) EXPECT_TRUE(r.ok) << r.error;
  // Both methods share the trained model for each seed.
  EXPECT_EQ(a[0].log.back().d_loss, a[2].log.back().d_loss);
  EXPECT_EQ(a[0].seed, a[2].seed);
  EXPECT_NE(a[0].seed, a[1].seed);

  const auto root = fs::temp_directory_path() / ("wnet_test_ablate_" + std::to_string(::getpid()));
  fs::remove_all(root);
  write_ablation_outputs(root / "one", spec, a);
  const auto b = run_experiment(spec, data);  // no cache: trains again
  write_ablation_outputs(root / "two", spec, b);
  for (const char* f : {"results.csv", "summary.csv", "logs/angular_seed0.csv", "logs/meanshift_seed1.csv"})
    EXPECT_EQ(slurp(root / "one" / f), slurp(root / "two" / f)) << f;
  EXPECT_TRUE(fs::exists(root / "one" / "timings.json"));
  EXPECT_FALSE(fs::exists(root / "one" / "plot.svg"));
  const auto results = slurp(root / "one" / "results.csv");
  EXPECT_EQ(results.rfind("experiment,config,value,seed_index,seed,status,msbd", 0), 0u);
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 5);
  fs::remove_all(root);
}

TEST(Experiments, FailedRunIsRecorded) {
  auto spec = tiny_spec();
  spec.seeds = 1;
  spec.experiment = Experiment::unet_vs_wnet;
  auto data = make_ablation_data(spec.data, spec.master_seed);
  data.val[0].image = Image(10, 10, 1);  // not divisible by 4: forward pass throws
  data.val[0].labels = LabelMap(10, 10);
  data.val[0].foreground = Mask(10, 10);
  const auto recs = run_experiment(spec, data);
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& r : recs) {
    EXPECT_FALSE(r.ok);
    EXPECT_FALSE(r.error.empty());
  }
  const auto root = fs::temp_directory_path() / ("wnet_test_failed_" + std::to_string(::getpid()));
  write_ablation_outputs(root, spec, recs);
  EXPECT_NE(slurp(root / "results.csv").find("failed: "), std::string::npos);
  fs::remove_all(root);
}

TEST(Experiments, SweepWritesPlot) {
  auto spec = tiny_spec();
  spec.experiment = Experiment::dim_sweep;
  std::vector<RunRecord> recs;
  for (const auto& run : experiment_runs(spec.experiment, spec.train)) {
    RunRecord r;
    r.spec = run;
    r.report.msbd = 0.5;
    r.report.intra_consistency = {0.9};
    recs.push_back(r);
  }
  const auto root = fs::temp_directory_path() / ("wnet_test_plot_" + std::to_string(::getpid()));
  write_ablation_outputs(root, spec, recs);
  const auto svg = slurp(root / "plot.svg");
  EXPECT_NE(svg.find("embedding dimension"), std::string::npos);
  EXPECT_NE(svg.find(">64<"), std::string::npos);
  fs::remove_all(root);
}
