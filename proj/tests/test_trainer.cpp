#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "wnet.hpp"

using namespace wnet;

namespace {

Dataset tiny_data(int count, uint64_t seed) {
  SceneConfig sc;
  sc.height = 16;
  sc.width = 16;
  sc.margin = 1;
  sc.min_objects = 2;
  sc.max_objects = 3;
  sc.min_instance_pixels = 4;
  return generate_dataset(sc, seed, 0, count);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.topology = gradcheck::tiny_topology(Topology::wnet, "dfeat.4");
  c.base_lr = 2e-3;
  c.warmup_steps = 5;
  c.batch_size = 2;
  c.max_steps = 6;
  c.eval_every_epochs = 0;
  c.cluster.seed_window = 3;
  return c;
}

bool rel_close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol * std::abs(b); }

}  // namespace

TEST(LearningRate, ExponentialDecay) {
  TrainConfig c;
  EXPECT_TRUE(rel_close(lr_at(0, c), 1e-4));
  EXPECT_TRUE(rel_close(lr_at(5000, c), 9e-5));
  EXPECT_TRUE(rel_close(lr_at(10000, c), 8.1e-5));
  EXPECT_TRUE(rel_close(lr_at(2500, c), 1e-4 * std::sqrt(0.9)));
  double prev = lr_at(0, c);
  for (int s = 1; s < 20000; s += 97) {
    const double lr = lr_at(s, c);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(lr_at(-1, c), ContractViolation);
}

TEST(LearningRate, Staircase) {
  TrainConfig c;
  c.staircase = true;
  EXPECT_EQ(lr_at(0, c), 1e-4);
  EXPECT_EQ(lr_at(4999, c), 1e-4);
  EXPECT_TRUE(rel_close(lr_at(5000, c), 9e-5));
  EXPECT_TRUE(rel_close(lr_at(9999, c), 9e-5));
}

TEST(LearningRate, WarmupRampsLinearly) {
  TrainConfig c;
  c.warmup_steps = 10;
  EXPECT_TRUE(rel_close(lr_at(0, c), 1e-5 * std::pow(0.9, 0.0)));
  EXPECT_TRUE(rel_close(lr_at(4, c), 5e-5 * std::pow(0.9, 4.0 / 5000)));
  EXPECT_TRUE(rel_close(lr_at(10, c), 1e-4 * std::pow(0.9, 10.0 / 5000)));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ModelParams<double> p;
  p.add("w", 1, 1, 1, 3).data = {1, -2, 3};
  OptimState<double> st;
  adam_step(p, st, 1e-3);
  EXPECT_EQ(p.value("w").data, (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ModelParams<double> p;
  p.add("w", 1, 1, 1, 3);
  p.grad("w").data = {0.5, -20.0, 1e-3};
  OptimState<double> st;
  adam_step(p, st, 1e-3);
  // Bias correction makes the first update lr * g / |g|.
  EXPECT_NEAR(p.value("w").data[0], -1e-3, 1e-10);
  EXPECT_NEAR(p.value("w").data[1], 1e-3, 1e-10);
  EXPECT_NEAR(p.value("w").data[2], -1e-3, 1e-7);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ModelParams<double> p;
  p.add("enc/w", 1, 1, 1, 2);
  p.add("head/b", 1, 1, 1, 1);
  p.grad("head/b").data[0] = std::nan("");
  OptimState<double> st;
  try {
    adam_step(p, st, 1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head/b"), std::string::npos);
  }
  EXPECT_EQ(st.t, 0);
}

TEST(Trainer, ZeroEpochsReturnsInitialParameters) {
  const auto data = tiny_data(3, 1);
  auto c = tiny_config();
  c.max_epochs = 0;
  const auto r = train(data, {}, c);
  EXPECT_TRUE(r.log.empty());
  auto expected = build_params<float>(c.topology);
  std::mt19937_64 rng(c.seed);
  he_normal_init(expected, rng);
  EXPECT_TRUE(r.params.values_equal(expected));
}

TEST(Trainer, StepCountRespectsEpochLimit) {
  const auto data = tiny_data(3, 2);
  auto c = tiny_config();
  c.max_epochs = 2;  // two steps per epoch at batch 2
  c.max_steps = 100;
  EXPECT_EQ(train(data, {}, c).log.size(), 4u);
}

TEST(Trainer, DeterministicForFixedSeed) {
  const auto data = tiny_data(4, 3);
  const auto c = tiny_config();
  const auto a = train(data, {}, c);
  const auto b = train(data, {}, c);
  EXPECT_TRUE(a.params.values_equal(b.params));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].d_loss, b.log[i].d_loss);
    EXPECT_EQ(a.log[i].e_loss, b.log[i].e_loss);
  }
  auto other = c;
  other.seed = 2;
  EXPECT_FALSE(train(data, {}, other).params.values_equal(a.params));
}

TEST(Trainer, LogsLearningRateAndValidation) {
  const auto data = tiny_data(4, 4);
  auto c = tiny_config();
  c.max_steps = 4;
  c.eval_every_epochs = 1;
  std::vector<LogRow> seen;
  const auto r = train(data, tiny_data(2, 40), c, [&](const LogRow& row, const ModelParams<float>&) { seen.push_back(row); });
  ASSERT_EQ(r.log.size(), 4u);
  ASSERT_EQ(seen.size(), 4u);
  for (size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, static_cast<int64_t>(i));
    EXPECT_EQ(r.log[i].lr, lr_at(static_cast<int64_t>(i), c));
  }
  // Two steps per epoch: validation after steps 1 and 3.
  EXPECT_TRUE(std::isnan(r.log[0].val_msbd));
  EXPECT_FALSE(std::isnan(r.log[1].val_msbd));
  EXPECT_FALSE(std::isnan(r.log[3].val_msbd));
}

TEST(Trainer, DetachChangesTheFirstNetwork) {
  const auto data = tiny_data(4, 5);
  auto c = tiny_config();
  const auto attached = train(data, {}, c);
  c.topology.detach_concat = true;
  const auto detached = train(data, {}, c);
  EXPECT_FALSE(attached.params.values_equal(detached.params));
  // The loss trajectory starts identically; only gradients differ.
  EXPECT_EQ(attached.log[0].d_loss, detached.log[0].d_loss);
}

TEST(Trainer, PretrainLeavesEmbeddingHeadUntouched) {
  const auto data = tiny_data(2, 6);
  auto c = tiny_config();
  c.pretrain_steps = 100;
  c.max_steps = 3;
  auto init = build_params<float>(c.topology);
  std::mt19937_64 rng(c.seed);
  he_normal_init(init, rng);
  const auto r = train(data, {}, c);
  EXPECT_EQ(r.params.value("emb_head/w").data, init.value("emb_head/w").data);
  EXPECT_NE(r.params.value("dist_head/w").data, init.value("dist_head/w").data);
}

TEST(Trainer, EmbeddingLossDecreases) {
  const auto data = tiny_data(4, 7);
  auto c = tiny_config();
  c.max_steps = 80;
  c.warmup_steps = 10;
  const auto r = train(data, {}, c);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.log[i].e_loss;
    last += r.log[r.log.size() - 1 - i].e_loss;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, DivergenceAbortsWithLastGoodState) {
  const auto data = tiny_data(2, 8);
  auto c = tiny_config();
  c.base_lr = 1e30;
  c.warmup_steps = 0;
  c.max_steps = 20;
  try {
    train(data, {}, c);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    const auto& good = e.last_good();
    ASSERT_GT(good.params.size(), 0u);
    for (const auto& entry : good.params.entries()) EXPECT_TRUE(entry.value.all_finite()) << entry.name;
    for (const auto& row : good.log) {
      EXPECT_TRUE(std::isfinite(row.d_loss));
      EXPECT_TRUE(std::isfinite(row.e_loss));
    }
  }
}

TEST(Trainer, RejectsBadConfig) {
  const auto data = tiny_data(1, 9);
  auto c = tiny_config();
  c.batch_size = 0;
  EXPECT_THROW(train(data, {}, c), ContractViolation);
  c = tiny_config();
  c.lambda = -1;
  EXPECT_THROW(train(data, {}, c), ContractViolation);
  EXPECT_THROW(train({}, {}, tiny_config()), ContractViolation);
}

TEST(TrainConfigJson, PartialDocumentOverridesDefaults) {
  const auto j = nlohmann::json::parse(R"({"base_lr": 0.01, "topology": {"embedding_dim": 16}, "cluster": {"delta_deg": 30}})");
  const auto c = j.get<TrainConfig>();
  EXPECT_EQ(c.base_lr, 0.01);
  EXPECT_EQ(c.topology.embedding_dim, 16);
  EXPECT_EQ(c.topology.depth, TopologySpec{}.depth);
  EXPECT_EQ(c.cluster.delta_deg, 30.0);
  EXPECT_EQ(c.decay_steps, 5000);
  const nlohmann::json back = c;
  EXPECT_EQ(back.get<TrainConfig>().base_lr, 0.01);
}
