#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace wnet;

TEST(Layers, GradientsMatchFiniteDifferences) {
  uint64_t seed = 100;
  for (const auto& layer : gradcheck::primitive_layers()) {
    const auto rep = gradcheck::check_layer(layer, 100, ++seed);
    EXPECT_TRUE(rep.ok()) << rep.name << " max rel " << rep.max_rel;
  }
}

TEST(L2Normalize, KnownVectorAndZero) {
  Tensor4<double> x(1, 1, 2, 2);
  x.data = {3, 4, 0, 0};
  const auto y = l2_normalize_channels(x);
  EXPECT_NEAR(y.data[0], 0.6, 1e-15);
  EXPECT_NEAR(y.data[1], 0.8, 1e-15);
  EXPECT_EQ(y.data[2], 0.0);
  EXPECT_EQ(y.data[3], 0.0);
}

TEST(L2Normalize, Idempotent) {
  std::mt19937_64 rng(9);
  const auto x = oracle::random_tensor<double>(rng, 2, 5, 5, 6);
  const auto once = l2_normalize_channels(x);
  const auto twice = l2_normalize_channels(once);
  for (size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(once.data[i], twice.data[i], 1e-14);
}

TEST(CoordinateChannels, SpanUnitSquare) {
  const auto c = coordinate_channels<float>(4, 5);
  EXPECT_EQ(c.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(c.at(0, 3, 4, 0), 1.0f);
  EXPECT_EQ(c.at(0, 3, 4, 1), 1.0f);
  EXPECT_FLOAT_EQ(c.at(0, 2, 2, 0), 0.5f);
  EXPECT_FLOAT_EQ(c.at(0, 1, 0, 1), 1.0f / 3.0f);
  EXPECT_THROW(coordinate_channels<float>(1, 5), ContractViolation);
}

TEST(Relu, ClampsNegatives) {
  Tensor4<double> x(1, 1, 1, 4);
  x.data = {-2, -0.0, 0.5, 3};
  const auto y = relu_forward(x);
  EXPECT_EQ(y.data, (std::vector<double>{0, 0, 0.5, 3}));
  Tensor4<double> g(1, 1, 1, 4, 1.0);
  EXPECT_EQ(relu_backward(x, g).data, (std::vector<double>{0, 0, 1, 1}));
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor<double>(rng, 1, 5, 7, 2);
  Tensor4<double> w(3, 3, 2, 2), b(1, 1, 1, 2);
  w.at(1, 1, 0, 0) = 1;
  w.at(1, 1, 1, 1) = 1;
  const auto y = conv2d_forward(x, w, b);
  ASSERT_TRUE(y.same_shape(x));
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data[i], x.data[i]);
}

TEST(Conv2d, ZeroPaddingAtBorder) {
  Tensor4<double> x(1, 3, 3, 1, 1.0), w(3, 3, 1, 1, 1.0), b(1, 1, 1, 1, 0.5);
  const auto y = conv2d_forward(x, w, b);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.5);
  EXPECT_EQ(y.at(0, 1, 1, 0), 9.5);
  EXPECT_EQ(y.at(0, 0, 1, 0), 6.5);
}

TEST(Linear1x1, MixesChannels) {
  Tensor4<double> x(1, 1, 1, 2), w(1, 1, 2, 1), b(1, 1, 1, 1, 1.0);
  x.data = {2, 3};
  w.data = {10, 100};
  EXPECT_EQ(linear_1x1_forward(x, w, b).data[0], 321.0);
}

TEST(Layers, ShapeErrors) {
  Tensor4<double> x(1, 4, 4, 2), w(3, 3, 3, 1), b(1, 1, 1, 1);
  EXPECT_THROW(conv2d_forward(x, w, b), ContractViolation);
  Tensor4<double> odd(1, 3, 4, 1);
  EXPECT_THROW(maxpool2_forward(odd), ContractViolation);
  EXPECT_THROW(concat_forward(Tensor4<double>(1, 4, 4, 1), Tensor4<double>(1, 2, 2, 1)), ContractViolation);
  EXPECT_THROW(Tensor4<double>(0, 1, 1, 1), ContractViolation);
}

TEST(MaxPool, PicksMaximumAndRoutesGradient) {
  Tensor4<double> x(1, 2, 2, 1);
  x.data = {1, 4, 3, 2};
  const auto y = maxpool2_forward(x);
  EXPECT_EQ(y.data[0], 4.0);
  Tensor4<double> g(1, 1, 1, 1, 2.0);
  EXPECT_EQ(maxpool2_backward(x, g).data, (std::vector<double>{0, 2, 0, 0}));
}

TEST(Upsample, NearestNeighbor) {
  Tensor4<double> x(1, 1, 2, 1);
  x.data = {1, 2};
  const auto y = upsample2_forward(x);
  EXPECT_EQ(y.h, 2);
  EXPECT_EQ(y.w, 4);
  EXPECT_EQ(y.data, (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Tape, DetachBlocksGradient) {
  ModelParams<double> p;
  p.add("w", 1, 1, 1, 1).data[0] = 2.0;
  p.add("b", 1, 1, 1, 1);
  Tape<double> t;
  const Var x = t.input(Tensor4<double>(1, 2, 2, 1, 1.0));
  const Var y = t.detach(t.conv2d(x, t.parameter(p, "w"), t.parameter(p, "b")));
  EXPECT_FALSE(t.requires_grad(y));
  t.backward({{y, Tensor4<double>(1, 2, 2, 1, 1.0)}});
  EXPECT_EQ(p.grad("w").data[0], 0.0);
}

TEST(Tape, ReplaysOnce) {
  ModelParams<double> p;
  p.add("w", 1, 1, 1, 1).data[0] = 2.0;
  p.add("b", 1, 1, 1, 1);
  Tape<double> t;
  EXPECT_THROW(t.backward({}), ContractViolation);
  const Var y = t.conv2d(t.input(Tensor4<double>(1, 2, 2, 1, 1.0)), t.parameter(p, "w"), t.parameter(p, "b"));
  t.backward({{y, Tensor4<double>(1, 2, 2, 1, 1.0)}});
  EXPECT_EQ(p.grad("w").data[0], 4.0);
  EXPECT_EQ(p.grad("b").data[0], 4.0);
  EXPECT_THROW(t.backward({{y, Tensor4<double>(1, 2, 2, 1, 1.0)}}), ContractViolation);
}
