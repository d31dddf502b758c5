#include <gtest/gtest.h>

#include <random>

#include "dmsa/ops.hpp"
#include "dmsa/parallel.hpp"
#include "oracles.hpp"

using namespace dmsa;

namespace {

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace

TEST(Shape, DefaultTagsFollowNchw) {
  const Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.numel(), 120);
  EXPECT_EQ(s.extent(Axis::channel), 3);
  EXPECT_EQ(s.extent(Axis::width), 5);
  EXPECT_EQ(s.str(), "2x3x4x5");
  const Shape v{7};
  EXPECT_EQ(v.extent(Axis::channel), 7);
  EXPECT_FALSE(v.find(Axis::batch).has_value());
  EXPECT_THROW(v.extent(Axis::height), ShapeMismatch);
}

TEST(Shape, RejectsBadExtentsAndRank) {
  EXPECT_THROW(Shape({2, 0, 3}), Error);
  EXPECT_THROW(Shape({1, 1, 1, 1, 1}), Error);
  EXPECT_THROW(Shape(std::vector<Index>{2, 3}, {Axis::channel}), Error);
}

TEST(Tensor, ConstructionAndIndexing) {
  TensorD t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 2), 6);
  t.at(0, 1) = 9;
  EXPECT_EQ(t[1], 9);
  EXPECT_THROW(TensorD(Shape{2, 2}, {1, 2, 3}), ShapeMismatch);
  EXPECT_TRUE(TensorD().empty());
  EXPECT_EQ(t.matrix(2, 3)(1, 0), 4);
}

TEST(Tensor, ReshapeCastAndIdentity) {
  auto rng = rng_for(1);
  const TensorD t = TensorD::normal(Shape{2, 3, 4, 4}, rng);
  const TensorD r = t.reshaped(Shape{6, 16});
  EXPECT_EQ(r.shape(), (Shape{6, 16}));
  EXPECT_EQ(r[17], t[17]);
  EXPECT_THROW(t.reshaped(Shape{5, 5}), ShapeMismatch);
  const TensorF f = t.cast<float>();
  EXPECT_FLOAT_EQ(f[3], static_cast<float>(t[3]));
  EXPECT_TRUE(t.identical(t.reshaped(t.shape())));
  TensorD u = t;
  u[0] = std::nextafter(u[0], 1e9);
  EXPECT_FALSE(t.identical(u));
}

TEST(Tensor, RandomIsDeterministicPerSeed) {
  auto a = rng_for(42), b = rng_for(42);
  EXPECT_TRUE(TensorD::normal(Shape{10}, a).identical(TensorD::normal(Shape{10}, b)));
}

TEST(Ops, MatmulMatchesOracle) {
  auto rng = rng_for(2);
  const TensorD a = TensorD::normal(Shape{7, 5}, rng), b = TensorD::normal(Shape{5, 3}, rng);
  EXPECT_LT(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
  EXPECT_THROW(matmul(a, a), ShapeMismatch);
}

struct ConvCase {
  Index cin, cout, k, stride, pad, groups, h;
  bool bias;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesDirectLoop) {
  const ConvCase c = GetParam();
  auto rng = rng_for(3);
  const TensorD x = TensorD::normal(Shape{2, c.cin, c.h, c.h + 1}, rng);
  const TensorD w = TensorD::normal(Shape{c.cout, c.cin / c.groups, c.k, c.k}, rng);
  const TensorD b = c.bias ? TensorD::normal(Shape{c.cout}, rng) : TensorD();
  const TensorD y = conv2d(x, w, b, c.stride, c.pad, c.groups);
  EXPECT_LT(oracle::max_abs_diff(y, oracle::conv2d(x, w, b, c.stride, c.pad, c.groups)), 1e-11);
}

INSTANTIATE_TEST_SUITE_P(Grid, ConvOracle,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 1, 5, true}, ConvCase{4, 6, 1, 1, 0, 2, 4, false},
                                           ConvCase{8, 8, 5, 2, 2, 4, 7, false}, ConvCase{6, 3, 7, 1, 3, 3, 6, true},
                                           ConvCase{4, 4, 3, 2, 0, 4, 9, false},
                                           ConvCase{2, 5, 9, 1, 4, 1, 3, false}));

TEST(Ops, ConvRejectsBadGroups) {
  const TensorD x(Shape{1, 6, 4, 4});
  EXPECT_THROW(conv2d(x, TensorD(Shape{4, 2, 1, 1}), TensorD(), 1, 0, 4), Error);
  EXPECT_THROW(conv2d(x, TensorD(Shape{4, 3, 1, 1}), TensorD(), 1, 0, 1), ShapeMismatch);
}

TEST(Ops, SoftmaxRowsSumToOneAndMatchOracle) {
  auto rng = rng_for(4);
  const TensorD x = TensorD::normal(Shape{3, 4, 9}, rng, 5.0);
  const TensorD y = softmax(x, -1);
  EXPECT_LT(oracle::max_abs_diff(y, oracle::softmax_last(x)), 1e-14);
  for (Index r = 0; r < 12; ++r) EXPECT_NEAR(y.vec().segment(r * 9, 9).sum(), 1.0, 1e-12);
}

TEST(Ops, SoftmaxMiddleAxisEqualsTransposedLastAxis) {
  auto rng = rng_for(5);
  const TensorD x = TensorD::normal(Shape{2, 5, 3}, rng);
  const TensorD y = softmax(x, 1);
  const TensorD ref = transpose(oracle::softmax_last(transpose(x, {0, 2, 1})), {0, 2, 1});
  EXPECT_LT(oracle::max_abs_diff(y, ref), 1e-14);
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  TensorD x(Shape{1, 3}, {1000.0, 1001.0, 999.0});
  const TensorD y = softmax(x, 1);
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y.vec().sum(), 1.0, 1e-12);
}

TEST(Ops, GlobalAvgPoolAndNormsMatchOracle) {
  auto rng = rng_for(6);
  const TensorD x = TensorD::normal(Shape{2, 4, 5, 3}, rng);
  EXPECT_LT(oracle::max_abs_diff(global_avg_pool(x), oracle::gap(x)), 1e-14);
  const TensorD g = TensorD::normal(Shape{4}, rng), b = TensorD::normal(Shape{4}, rng);
  EXPECT_LT(oracle::max_abs_diff(instance_norm(x, g, b), oracle::instance_norm(x, g, b)), 1e-12);
  // One channel per group reduces group norm to instance norm.
  EXPECT_LT(oracle::max_abs_diff(group_norm(x, 4, g, b), oracle::instance_norm(x, g, b)), 1e-12);
}

TEST(Ops, InstanceNormStandardizesPlanes) {
  auto rng = rng_for(7);
  const TensorD x = TensorD::normal(Shape{1, 3, 8, 8}, rng, 3.0);
  const TensorD y = instance_norm(x, TensorD::ones(Shape{3}), TensorD::zeros(Shape{3}), 1e-12);
  for (Index c = 0; c < 3; ++c) {
    const auto plane = y.vec().segment(c * 64, 64);
    EXPECT_NEAR(plane.mean(), 0.0, 1e-12);
    EXPECT_NEAR((plane.array() - plane.mean()).square().mean(), 1.0, 1e-10);
  }
}

TEST(Ops, BatchNormInferenceUsesRunningStats) {
  TensorD x(Shape{1, 2, 1, 2}, {1, 3, 5, 7});
  const TensorD y = batch_norm_inference(x, TensorD(Shape{2}, {2, 1}), TensorD(Shape{2}, {0, 1}),
                                         TensorD(Shape{2}, {1, 5}), TensorD(Shape{2}, {4, 1}), 1e-12);
  EXPECT_NEAR(y[0], 0.0, 1e-9);
  EXPECT_NEAR(y[1], 2.0, 1e-9);
  EXPECT_NEAR(y[2], 1.0, 1e-9);
  EXPECT_NEAR(y[3], 3.0, 1e-9);
  EXPECT_THROW(batch_norm_inference(x, x, x, x, x, 0.0), Error);
}

TEST(Ops, BroadcastingElementwise) {
  TensorD a(Shape{1, 2, 1, 2}, {1, 2, 3, 4});
  TensorD b(Shape{1, 2, 1, 1}, {10, 100});
  const TensorD s = add(a, b), p = mul(a, b);
  EXPECT_EQ(s[1], 12);
  EXPECT_EQ(s[2], 103);
  EXPECT_EQ(p[3], 400);
  EXPECT_THROW(add(a, TensorD(Shape{1, 3, 1, 1})), ShapeMismatch);
  EXPECT_EQ(scale(a, 2.0)[3], 8);
}

TEST(Ops, Activations) {
  TensorD x(Shape{4}, {-2, -0.0, 0.5, 3});
  const TensorD r = relu(x);
  EXPECT_EQ(r[0], 0);
  EXPECT_EQ(r[3], 3);
  const TensorD s = sigmoid(x);
  EXPECT_NEAR(s[2], oracle::sigmoid(0.5), 1e-15);
  EXPECT_NEAR(sigmoid(TensorD(Shape{1}, {-800.0}))[0], 0.0, 1e-300);
}

TEST(Ops, TransposeConcatSplitSlice) {
  auto rng = rng_for(8);
  const TensorD x = TensorD::normal(Shape{2, 3, 4, 5}, rng);
  const TensorD t = transpose(x, {0, 2, 3, 1});
  EXPECT_EQ(t.shape(), (Shape{2, 4, 5, 3}));
  EXPECT_EQ(t.at(1, 2, 3, 0), x.at(1, 0, 2, 3));
  const auto parts = split(x, 3, 1);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_TRUE(concat(parts, 1).identical(x));
  EXPECT_TRUE(slice(x, 1, 1, 1).identical(parts[1]));
  EXPECT_THROW(split(x, 2, 1), Error);
  EXPECT_TRUE(reshape(x, Shape{6, 20}).reshaped(x.shape()).identical(x));
}

TEST(Ops, MaxPoolIgnoresPadding) {
  TensorD x(Shape{1, 1, 2, 2}, {-4, -3, -2, -1});
  const TensorD y = max_pool2d(x, 3, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], -1);
  const TensorD z = max_pool2d(TensorD(Shape{1, 1, 112, 112}), 3, 2, 1);
  EXPECT_EQ(z.dim(2), 56);
}

TEST(Ops, FullyConnected) {
  TensorD x(Shape{1, 2}, {1, 2});
  TensorD w(Shape{2, 3}, {1, 0, 2, 0, 1, 3});
  const TensorD y = fully_connected(x, w, TensorD(Shape{3}, {0, 0, 1}));
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[1], 2);
  EXPECT_EQ(y[2], 9);
}

TEST(Parallel, ThreadCountDoesNotChangeResults) {
  auto rng = rng_for(9);
  const TensorD x = TensorD::normal(Shape{4, 8, 9, 9}, rng);
  const TensorD w = TensorD::normal(Shape{8, 4, 3, 3}, rng);
  const int saved = num_threads();
  set_num_threads(1);
  const TensorD one = conv2d(x, w, TensorD(), 1, 1, 2);
  set_num_threads(3);
  const TensorD three = conv2d(x, w, TensorD(), 1, 1, 2);
  set_num_threads(saved);
  EXPECT_TRUE(one.identical(three));
  Index total = 0;
  std::vector<int> hit(100, 0);
  parallel_for(100, [&](Index i) { hit[static_cast<std::size_t>(i)] += 1; });
  for (int h : hit) total += h;
  EXPECT_EQ(total, 100);
}
