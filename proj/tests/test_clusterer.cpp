#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "wnet.hpp"

using namespace wnet;

namespace {

// Left half along e_0, right half along e_1 (first two coordinates of an E-dim space).
EmbeddingField<float> orthogonal_halves(int h, int w, int e) {
  EmbeddingField<float> f(h, w, e);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f.pixel(static_cast<size_t>(y) * w + x)[x < w / 2 ? 0 : 1] = 1.0f;
  return f;
}

SeedList seeds_at(std::initializer_list<std::pair<int, int>> rc) {
  SeedList s;
  float v = 10.0f;
  for (auto [r, c] : rc) s.push_back({r, c, v--});
  return s;
}

// Rotation in the plane of coordinates (0, 1).
EmbeddingField<float> rotate(EmbeddingField<float> f, double angle) {
  const float c = static_cast<float>(std::cos(angle)), s = static_cast<float>(std::sin(angle));
  for (size_t p = 0; p < f.pixels(); ++p) {
    auto v = f.pixel(p);
    const float a = v[0], b = v[1];
    v[0] = c * a - s * b;
    v[1] = s * a + c * b;
  }
  return f;
}

}  // namespace

TEST(AngularCluster, NoSeedsLeavesEverythingUnassigned) {
  const auto f = orthogonal_halves(4, 6, 3);
  const auto r = angular_cluster(f, {});
  EXPECT_EQ(r.labels.max_id(), 0);
  EXPECT_EQ(r.unassigned, 24);
}

TEST(AngularCluster, OrthogonalHalvesSplitExactly) {
  const auto f = orthogonal_halves(4, 6, 3);
  const auto r = angular_cluster(f, seeds_at({{1, 1}, {2, 4}}));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(r.labels.at(y, x), x < 3 ? 1 : 2);
  EXPECT_EQ(r.unassigned, 0);
}

TEST(AngularCluster, ThresholdIsInclusiveAtDelta) {
  // Pixel 1 is at cos = 0.6 (53.1 deg) from the seed: outside 45 deg, inside 60 deg.
  EmbeddingField<float> f(1, 2, 2);
  f.pixel(0)[0] = 1.0f;
  f.pixel(1)[0] = 0.6f;
  f.pixel(1)[1] = 0.8f;
  ClusterConfig c;
  EXPECT_EQ(angular_cluster(f, seeds_at({{0, 0}}), c).labels.at(0, 1), 0);
  c.delta_deg = 60.0;
  EXPECT_EQ(angular_cluster(f, seeds_at({{0, 0}}), c).labels.at(0, 1), 1);
}

TEST(AngularCluster, StrongestSeedClaimsFirst) {
  // All pixels share one direction, so the first seed takes everything and the second is skipped.
  EmbeddingField<float> f(2, 2, 2, 1.0f);
  SeedList s{{0, 0, 1.0f}, {1, 1, 5.0f}};
  const auto r = angular_cluster(f, s);
  EXPECT_EQ(r.labels.max_id(), 1);
  ASSERT_EQ(r.seeds.size(), 1u);
  EXPECT_EQ(r.seeds[0].row, 1);
}

TEST(AngularCluster, SeedOutsideFieldThrows) {
  const auto f = orthogonal_halves(4, 6, 3);
  EXPECT_THROW(angular_cluster(f, seeds_at({{4, 0}})), ContractViolation);
  ClusterConfig c;
  c.delta_deg = 90.0;
  EXPECT_THROW(angular_cluster(f, {}, c), ContractViolation);
}

TEST(AngularCluster, SpatialConnectivityStopsAtGaps) {
  // Two separate blobs with the same embedding.
  EmbeddingField<float> f(1, 5, 2);
  for (int x : {0, 1, 3, 4}) f.pixel(static_cast<size_t>(x))[0] = 1.0f;
  f.pixel(2)[1] = 1.0f;
  ClusterConfig c;
  c.spatial_connectivity = true;
  const auto r = angular_cluster(f, seeds_at({{0, 0}}), c);
  EXPECT_EQ(r.labels.ids, (std::vector<int32_t>{1, 1, 0, 0, 0}));
  c.spatial_connectivity = false;
  EXPECT_EQ(angular_cluster(f, seeds_at({{0, 0}}), c).labels.ids, (std::vector<int32_t>{1, 1, 0, 1, 1}));
}

TEST(AngularCluster, InvariantToGlobalRotation) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto f = oracle::random_field<float>(rng, 8, 8, 2);
    SeedList seeds;
    for (int k = 0; k < 4; ++k)
      seeds.push_back({static_cast<int>(rng() % 8), static_cast<int>(rng() % 8), static_cast<float>(k)});
    const double angle = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
    const auto a = angular_cluster(f, seeds), b = angular_cluster(rotate(f, angle), seeds);
    // Pixels within float rounding of the 45 deg boundary may flip.
    size_t diff = 0;
    for (size_t p = 0; p < a.labels.ids.size(); ++p) diff += a.labels.ids[p] != b.labels.ids[p];
    EXPECT_LE(diff, 1u) << "trial " << t;
  }
}

TEST(MeanShift, TwoDirectionsGiveTwoClusters) {
  auto f = orthogonal_halves(4, 6, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> jitter(0.0f, 0.05f);
  for (float& v : f.values) v += jitter(rng);
  ClusterConfig c;
  c.bandwidth = 0.3;
  const auto r = mean_shift_cluster(f, c);
  EXPECT_EQ(r.labels.max_id(), 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(r.labels.at(y, x), x < 3 ? 1 : 2);
}

TEST(MeanShift, ConstantFieldIsOneCluster) {
  EmbeddingField<float> f(5, 5, 4, 0.5f);
  const auto r = mean_shift_cluster(f);
  EXPECT_EQ(r.labels.max_id(), 1);
  for (int32_t v : r.labels.ids) EXPECT_EQ(v, 1);
}

TEST(MeanShift, VisitOrderDoesNotMatter) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 10; ++t) {
    auto f = oracle::random_field<float>(rng, 6, 6, 3);
    std::vector<size_t> order(f.pixels());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    ClusterConfig c;
    c.bandwidth = 0.4;
    EXPECT_EQ(mean_shift_cluster(f, c).labels, mean_shift_cluster(f, c, nullptr, &order).labels) << "trial " << t;
  }
}

TEST(MeanShift, MaskRestrictsClusteredPixels) {
  auto f = orthogonal_halves(2, 4, 2);
  Mask m(2, 4);
  m.on = {1, 0, 1, 1, 1, 0, 1, 1};
  const auto r = mean_shift_cluster(f, {}, &m);
  EXPECT_EQ(r.labels.at(0, 1), 0);
  EXPECT_EQ(r.labels.at(1, 1), 0);
  EXPECT_EQ(r.labels.max_id(), 2);
  Mask none(2, 4);
  EXPECT_EQ(mean_shift_cluster(f, {}, &none).labels.max_id(), 0);
}

TEST(ForegroundMask, DropsAndCompacts) {
  SegmentationResult in;
  in.labels = LabelMap(1, 4);
  in.labels.ids = {1, 2, 3, 0};
  in.seeds = {{0, 0, 3.f}, {0, 1, 2.f}, {0, 2, 1.f}};
  Mask m(1, 4);
  m.on = {1, 0, 1, 1};
  const auto out = apply_foreground_mask(in, m);
  EXPECT_EQ(out.labels.ids, (std::vector<int32_t>{1, 0, 2, 0}));
  ASSERT_EQ(out.seeds.size(), 2u);
  EXPECT_EQ(out.seeds[1].col, 2);
  EXPECT_EQ(out.unassigned, 1);
  EXPECT_THROW(apply_foreground_mask(in, Mask(2, 2)), ContractViolation);
}

TEST(Pipeline, OrthogonalFixturesSegmentPerfectly) {
  // Ground-truth distance map seeds + ideal embeddings reproduce the labels.
  std::mt19937_64 rng(55);
  for (int t = 0; t < 10; ++t) {
    SceneConfig sc;
    sc.seed = rng();
    sc.min_objects = 3;
    sc.max_objects = 6;
    const auto scene = synth_generate(sc);
    const int c = scene.labels.max_id();
    EmbeddingField<float> f(sc.height, sc.width, c);
    for (size_t p = 0; p < scene.labels.pixels(); ++p)
      if (const int id = scene.labels.ids[p]) f.pixel(p)[id - 1] = 1.0f;
    ClusterConfig cc;
    const auto seg = apply_foreground_mask(
        angular_cluster(f, extract_seeds(compute_distmap(scene.labels), cc.threshold_frac, cc.seed_window), cc),
        scene.foreground);
    EXPECT_EQ(symmetric_best_dice(seg.labels, scene.labels), 1.0) << "trial " << t;
  }
}
