#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "dmsa/grad_check.hpp"
#include "dmsa/train.hpp"
#include "oracles.hpp"

using namespace dmsa;

TEST(NumericGradient, SquareAtThreeIsSix) {
  TensorD x(Shape{1}, {3.0});
  ParamSet<double> set;
  set.add("x", x);
  const auto g = numeric_gradient([&] { return x[0] * x[0]; }, set);
  EXPECT_NEAR(g[0][0], 6.0, 1e-9);
  EXPECT_EQ(x[0], 3.0);
}

TEST(NumericGradient, RestoresEveryCoordinateBitExactly) {
  std::mt19937_64 rng(1);
  TensorD a = TensorD::normal(Shape{3, 4}, rng), b = TensorD::normal(Shape{5}, rng);
  const TensorD a0 = a, b0 = b;
  ParamSet<double> set;
  set.add("a", a);
  set.add("b", b);
  const auto g = numeric_gradient([&] { return std::sin(a.vec().sum()) * b.vec().squaredNorm(); }, set);
  EXPECT_TRUE(a.identical(a0));
  EXPECT_TRUE(b.identical(b0));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1].shape(), b.shape());
  EXPECT_THROW(set.add("a", b), InvalidConfig);
}

TEST(NumericGradient, RejectsNonFiniteObjectiveAndBadStep) {
  TensorD x(Shape{1}, {0.0});
  ParamSet<double> set;
  set.add("x", x);
  EXPECT_THROW(numeric_gradient([&] { return 1.0 / x[0]; }, set), NonFiniteObjective);
  EXPECT_THROW(numeric_gradient([&] { return x[0]; }, set, 0.0), InvalidConfig);
  x[0] = 1e-5;  // perturbation crosses the pole
  EXPECT_THROW(numeric_gradient([&] { return std::log(x[0]); }, set), NonFiniteObjective);
}

TEST(RelativeError, Definition) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(0.0, 1e-9), 0.1, 1e-15);
}

class PrimitiveSeeds : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveSeeds, EveryPrimitivePasses) {
  const GradCheckReport r = check_primitives(static_cast<std::uint64_t>(GetParam()));
  for (const auto& e : r.entries) {
    EXPECT_TRUE(e.passed()) << e.name << " rel " << e.max_rel;
    EXPECT_EQ(e.tolerance, kPrimitiveTolerance);
    EXPECT_GT(e.count, 0);
  }
}

TEST_P(PrimitiveSeeds, SmallestBlockPasses) {
  const GradCheckReport r = check_block(smallest_block_config(), 4, static_cast<std::uint64_t>(GetParam()));
  for (const auto& e : r.entries) EXPECT_TRUE(e.passed()) << e.name << " rel " << e.max_rel;
  EXPECT_EQ(r.entries.front().name, "dmsa.input");
}

TEST_P(PrimitiveSeeds, TinyNetworkPasses) {
  const GradCheckReport r = check_network(static_cast<std::uint64_t>(GetParam()));
  for (const auto& e : r.entries) EXPECT_TRUE(e.passed()) << e.name << " rel " << e.max_rel;
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveSeeds, ::testing::Range(0, 5));

TEST(GradCheck, PrimitiveCoverage) {
  std::set<std::string> names;
  for (const auto& c : primitive_grad_cases(0)) names.insert(c.name);
  for (const char* n : {"matmul", "conv2d", "conv2d_grouped", "softmax", "global_avg_pool", "instance_norm",
                        "group_norm", "batch_norm_inference", "relu", "sigmoid", "max_pool2d", "fully_connected",
                        "se_weight", "channel_branch", "spatial_branch", "sa_unit_instance", "channel_shuffle"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
}

TEST(GradCheck, InjectedFaultIsCaughtAndNamed) {
  for (const char* target : {"matmul.a", "softmax.x", "sa_unit_instance.w2"}) {
    GradCheckOptions opt;
    opt.inject_fault = target;
    const GradCheckReport r = check_primitives(0, opt);
    EXPECT_FALSE(r.passed()) << target;
    for (const auto& e : r.entries) EXPECT_EQ(e.passed(), e.name != target) << e.name;
  }
  GradCheckOptions opt;
  opt.inject_fault = "dmsa.spatial.alpha";
  const GradCheckReport b = check_block(smallest_block_config(), 4, 0, opt);
  EXPECT_FALSE(b.passed());
  EXPECT_EQ(b.worst()->name, "dmsa.spatial.alpha");
}

TEST(GradCheck, BrokenBackwardIsDetected) {
  std::mt19937_64 rng(2);
  GradCase c;
  c.name = "square";
  c.var_names = {"x"};
  c.vars = {TensorD::normal(Shape{6}, rng)};
  c.forward = [](const std::vector<TensorD>& v) { return mul(v[0], v[0]); };
  c.backward = [](const std::vector<TensorD>& v, const TensorD& dy) {
    return std::vector<TensorD>{mul(v[0], dy)};  // missing the factor 2
  };
  EXPECT_FALSE(run_grad_case(c, 0).passed());
  c.backward = [](const std::vector<TensorD>& v, const TensorD& dy) {
    return std::vector<TensorD>{scale(mul(v[0], dy), 2.0)};
  };
  EXPECT_TRUE(run_grad_case(c, 0).passed());
}

TEST(GradCheck, RichardsonExtrapolationAgreesOnAlpha) {
  // Four SE hidden units so the branch weights depend on alpha.
  DmsaConfig cfg = smallest_block_config();
  cfg.reduction = 4;
  std::mt19937_64 rng(3);
  auto p = DmsaParams<double>::random(cfg, rng);
  perturb_for_check(p, rng);
  const TensorD x = TensorD::normal(Shape{1, cfg.channels, 4, 4}, rng);
  const TensorD w = TensorD::uniform(Shape{1, cfg.channels, 4, 4}, rng);
  const auto objective = [&] { return dmsa_forward(x, cfg, p).vec().dot(w.vec()); };
  ParamSet<double> set;
  set.add("alpha", p.spatial.alpha);
  const double d1 = numeric_gradient(objective, set, 0.2)[0][0];
  const double d2 = numeric_gradient(objective, set, 0.1)[0][0];
  const double extrapolated = (4 * d2 - d1) / 3;
  DmsaTrace<double> trace;
  dmsa_forward(x, cfg, p, &trace);
  const double analytic = dmsa_backward(trace, cfg, p, w).dp.spatial.alpha[0];
  // Steps large enough that truncation error dominates rounding.
  EXPECT_GT(relative_error(d1, analytic), 1e-6);
  EXPECT_LT(relative_error(extrapolated, analytic), relative_error(d1, analytic) / 10);
  EXPECT_LT(relative_error(extrapolated, analytic), 1e-5);
}

TEST(Loss, SoftmaxCrossEntropy) {
  const TensorD logits(Shape{2, 2}, {0.0, 0.0, 3.0, -1.0});
  const auto r = softmax_cross_entropy(logits, {0, 1});
  const double expect = 0.5 * (std::log(2.0) + std::log1p(std::exp(4.0)));
  EXPECT_NEAR(r.loss, expect, 1e-12);
  EXPECT_NEAR(r.dlogits[0] + r.dlogits[1], 0.0, 1e-15);
  EXPECT_NEAR(r.dlogits[0], -0.25, 1e-15);
  EXPECT_THROW(softmax_cross_entropy(logits, {0}), ShapeMismatch);
  EXPECT_THROW(softmax_cross_entropy(logits, {0, 2}), Error);
}

TEST(Dataset, DeterministicBalancedAndSeparable) {
  const Dataset a = make_synthetic_dataset(500, 2, 8, 11);
  const Dataset b = make_synthetic_dataset(500, 2, 8, 11);
  const Dataset c = make_synthetic_dataset(500, 2, 8, 12);
  EXPECT_TRUE(a.train_x.identical(b.train_x));
  EXPECT_TRUE(a.test_x.identical(b.test_x));
  EXPECT_EQ(a.train_y, b.train_y);
  EXPECT_FALSE(a.train_x.identical(c.train_x));
  EXPECT_EQ(a.train_x.shape(), (Shape{400, 1, 8, 8}));
  EXPECT_EQ(a.test_x.shape(), (Shape{100, 1, 8, 8}));
  EXPECT_EQ(std::count(a.train_y.begin(), a.train_y.end(), 0), 200);
  EXPECT_EQ(std::count(a.test_y.begin(), a.test_y.end(), 1), 50);
  EXPECT_GE(oracle::centroid_accuracy(a.train_x, a.train_y, a.test_x, a.test_y, 2), 0.9);
  const Dataset three = make_synthetic_dataset(300, 3, 6, 1);
  EXPECT_EQ(three.classes, 3);
  EXPECT_EQ(std::count(three.train_y.begin(), three.train_y.end(), 2), 80);
  EXPECT_THROW(make_synthetic_dataset(100, 1, 8, 1), InvalidConfig);
  EXPECT_THROW(make_synthetic_dataset(1, 2, 8, 1), InvalidConfig);
}

TEST(TrainConfig, ScheduleAndValidation) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr_at(0), 0.1);
  EXPECT_DOUBLE_EQ(cfg.lr_at(99), 0.1);
  EXPECT_DOUBLE_EQ(cfg.lr_at(100), 0.01);
  EXPECT_NEAR(cfg.lr_at(150), 0.001, 1e-15);
  EXPECT_DOUBLE_EQ(TrainConfig::kAlternativeLr, 1e-4);
  cfg.lr = 0;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lr = -1;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg.lr = 0.1;
  cfg.decay_epochs = {150, 100};
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg.decay_epochs = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
}

namespace {

TinyNetConfig tiny() { return TinyNetConfig{}; }

TrainConfig short_run(Index epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.decay_epochs = {};
  return cfg;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesLossConstant) {
  const Dataset d = make_synthetic_dataset(100, 2, 6, 2);
  auto net = TinyDmsaNet<double>::random(tiny(), 3);
  TrainConfig cfg = short_run(4);
  cfg.lr = 0;
  const TrainResult r = train_toy(net, d, cfg);
  ASSERT_EQ(r.curve.size(), 4u);
  for (const auto& e : r.curve) EXPECT_EQ(e.train_loss, r.initial_train_loss);
}

TEST(Train, FullBatchGradientDescentIsMonotone) {
  const Dataset d = make_synthetic_dataset(100, 2, 6, 4);
  auto net = TinyDmsaNet<double>::random(tiny(), 5);
  TrainConfig cfg = short_run(50);
  cfg.lr = 1e-3;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  cfg.batch_size = 0;
  const TrainResult r = train_toy(net, d, cfg);
  double prev = r.initial_train_loss;
  for (const auto& e : r.curve) {
    EXPECT_LE(e.train_loss, prev) << "epoch " << e.epoch;
    prev = e.train_loss;
  }
  EXPECT_LT(r.curve.back().train_loss, r.initial_train_loss);
}

TEST(Train, WeightDecayShrinksTheParameters) {
  const Dataset d = make_synthetic_dataset(100, 2, 6, 6);
  auto plain = TinyDmsaNet<double>::random(tiny(), 7);
  auto decayed = plain;
  TrainConfig cfg = short_run(10);
  cfg.weight_decay = 0;
  const double no_wd = train_toy(plain, d, cfg).final_param_norm;
  cfg.weight_decay = 0.05;
  const double wd = train_toy(decayed, d, cfg).final_param_norm;
  EXPECT_LT(wd, no_wd);
  EXPECT_DOUBLE_EQ(parameter_norm(decayed), wd);
}

TEST(Train, DeterministicPerSeed) {
  const Dataset d = make_synthetic_dataset(100, 2, 6, 8);
  auto a = TinyDmsaNet<double>::random(tiny(), 9), b = TinyDmsaNet<double>::random(tiny(), 9);
  TrainConfig cfg = short_run(3);
  cfg.batch_size = 16;
  cfg.seed = 4;
  const TrainResult ra = train_toy(a, d, cfg), rb = train_toy(b, d, cfg);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].train_loss, rb.curve[i].train_loss);
  cfg.seed = 5;
  auto c = TinyDmsaNet<double>::random(tiny(), 9);
  EXPECT_NE(train_toy(c, d, cfg).curve.back().train_loss, ra.curve.back().train_loss);
}

TEST(Train, DivergenceIsReported) {
  const Dataset d = make_synthetic_dataset(100, 2, 6, 10);
  auto net = TinyDmsaNet<double>::random(tiny(), 11);
  TrainConfig cfg = short_run(30);
  cfg.lr = 1e6;
  EXPECT_THROW(train_toy(net, d, cfg), DivergenceDetected);
}

TEST(Train, StopLossEndsEarly) {
  const Dataset d = make_synthetic_dataset(200, 2, 8, 12);
  auto net = TinyDmsaNet<double>::random(tiny(), 13);
  TrainConfig cfg = short_run(100);
  cfg.stop_loss = 0.2;
  const TrainResult r = train_toy(net, d, cfg);
  EXPECT_LT(r.curve.size(), 100u);
  EXPECT_LT(r.curve.back().train_loss, 0.2);
}

TEST(Train, CurveCsv) {
  std::ostringstream os;
  write_curve_csv(os, {{1, 0.5, 0.25, 1.0}, {2, 0.125, 0.0625, 0.5}});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch,train_loss,test_loss,test_accuracy");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 6), "1,0.5,");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 1);
}

TEST(TinyNet, NamesAndGradientShapes) {
  auto net = TinyDmsaNet<double>::random(tiny(), 14);
  std::vector<std::string> names;
  net.for_each([&](const std::string& n, const TensorD&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "conv.weight");
  EXPECT_EQ(names.back(), "fc.bias");
  std::mt19937_64 rng(15);
  const TensorD x = TensorD::normal(Shape{3, 1, 6, 6}, rng);
  TinyDmsaNet<double>::Trace trace;
  const TensorD logits = net.forward(x, &trace);
  EXPECT_EQ(logits.shape(), (Shape{3, 2}));
  const auto g = net.backward(trace, TensorD::ones(logits.shape()));
  std::vector<Shape> shapes;
  net.for_each([&](const std::string&, const TensorD& t) { shapes.push_back(t.shape()); });
  std::size_t i = 0;
  g.for_each([&](const std::string&, const TensorD& t) { EXPECT_EQ(t.shape(), shapes[i++]); });
  EXPECT_EQ(i, shapes.size());
}
