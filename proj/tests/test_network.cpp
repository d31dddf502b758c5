#include <gtest/gtest.h>

#include <random>
#include <set>

#include "dmsa/network.hpp"

using namespace dmsa;

namespace {

Index category_flops(const CostReport& r, const std::string& cat) {
  Index f = 0;
  for (const auto& l : r.layers)
    if (l.category == cat) f += l.flops;
  return f;
}

}  // namespace

TEST(NetworkSpec, StageLayouts) {
  const NetworkSpec r50 = NetworkSpec::for_depth(50, BlockKind::plain_bottleneck);
  ASSERT_EQ(r50.stages.size(), 4u);
  EXPECT_EQ(r50.total_blocks(), 16);
  EXPECT_EQ(r50.stages[2].blocks, 6);
  EXPECT_EQ(r50.stages[3].out_width, 2048);
  const NetworkSpec r101 = NetworkSpec::for_depth(101, BlockKind::dmsa_bottleneck);
  EXPECT_EQ(r101.total_blocks(), 33);
  EXPECT_EQ(r101.stages[2].blocks, 23);
  EXPECT_THROW(NetworkSpec::for_depth(34, BlockKind::plain_bottleneck), InvalidConfig);
  EXPECT_EQ(parse_block_kind("plain"), BlockKind::plain_bottleneck);
  EXPECT_EQ(parse_block_kind("dmsa"), BlockKind::dmsa_bottleneck);
  EXPECT_THROW(parse_block_kind("basic"), UnknownVariant);
}

TEST(Cost, PlainDepth50MatchesTheKnownCount) {
  const auto net = build_network<float>(50, BlockKind::plain_bottleneck);
  const CostReport r = cost_report(net);
  EXPECT_EQ(r.total_params(), 25557032);
  EXPECT_NEAR(static_cast<double>(r.total_flops()) / 1e9, 4.12, 4.12 * 0.03);
}

TEST(Cost, PlainDepth101) {
  const auto net = build_network<float>(101, BlockKind::plain_bottleneck);
  const CostReport r = cost_report(net);
  EXPECT_EQ(r.total_params(), 44549160);
  EXPECT_NEAR(static_cast<double>(r.total_flops()) / 1e9, 7.85, 7.85 * 0.03);
  EXPECT_EQ(net.blocks.size(), 33u);
}

TEST(Cost, DmsaDepth50GoldenGap) {
  // Committed once computed; a change here is a change to the model.
  const auto net = build_network<float>(50, BlockKind::dmsa_bottleneck);
  const CostReport r = cost_report(net);
  EXPECT_EQ(r.total_params(), 24359480);
  EXPECT_EQ(r.total_flops(), 8965741641);
  const PublishedCost pub = published_cost(50, BlockKind::dmsa_bottleneck);
  const TargetGap params{static_cast<double>(r.total_params()) / 1e6, pub.params_millions};
  const TargetGap flops{static_cast<double>(r.total_flops()) / 1e9, pub.gflops};
  EXPECT_NEAR(params.signed_percent(), -7.20, 0.005);
  EXPECT_NEAR(flops.signed_percent(), 160.63, 0.005);
}

TEST(Cost, ParamSetAgreesWithReport) {
  for (auto kind : {BlockKind::plain_bottleneck, BlockKind::dmsa_bottleneck}) {
    auto net = build_network<float>(50, kind);
    EXPECT_EQ(net.params().total_elements(), cost_report(net).total_params()) << to_string(kind);
  }
}

TEST(Cost, FlopsScaleWithResolution) {
  const auto net = build_network<float>(50, BlockKind::plain_bottleneck);
  const CostReport a = cost_report(net, 224), b = cost_report(net, 448);
  EXPECT_EQ(category_flops(b, "conv"), 4 * category_flops(a, "conv"));
  const double ratio = static_cast<double>(b.total_flops()) / static_cast<double>(a.total_flops());
  EXPECT_NEAR(ratio, 4.0, 0.01);
  EXPECT_EQ(a.total_params(), b.total_params());
}

TEST(Cost, TwoFlopConventionDoublesMultiplyAccumulates) {
  const auto net = build_network<float>(50, BlockKind::dmsa_bottleneck);
  const CostReport mac = cost_report(net, 224, FlopConvention::mac);
  const CostReport two = cost_report(net, 224, FlopConvention::two_flop);
  EXPECT_EQ(category_flops(two, "conv"), 2 * category_flops(mac, "conv"));
  // Bias adds and residual terms are per-element and stay as they are.
  for (const char* cat : {"fc", "attention"}) {
    EXPECT_GT(category_flops(two, cat), category_flops(mac, cat));
    EXPECT_LT(category_flops(two, cat), 2 * category_flops(mac, cat));
  }
  for (const char* cat : {"norm", "act", "softmax", "pool"}) EXPECT_EQ(category_flops(two, cat), category_flops(mac, cat));
}

TEST(Cost, BlockCostMatchesItsParameters) {
  DmsaConfig cfg;
  std::mt19937_64 rng(1);
  const auto p = DmsaParams<float>::random(cfg, rng);
  const CostReport r = dmsa_block_cost(cfg, 56);
  EXPECT_EQ(r.total_params(), bundle_numel(p));
  std::set<std::string> names;
  for (const auto& l : r.layers) names.insert(l.name);
  for (const char* n : {"dmsa.extract.0", "dmsa.spatial.attn", "dmsa.channel.attn", "dmsa.se", "dmsa.aggregate"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  // Spatial attention grows with the square of the position count.
  const auto attn = [](const CostReport& c) {
    for (const auto& l : c.layers)
      if (l.name == "dmsa.spatial.attn") return l.flops;
    return Index(0);
  };
  const double ratio = static_cast<double>(attn(r)) / static_cast<double>(attn(dmsa_block_cost(cfg, 28)));
  EXPECT_NEAR(ratio, 16.0, 0.05);
}

TEST(Cost, CompareReportAlignsRows) {
  const auto a = build_network<float>(50, BlockKind::plain_bottleneck);
  const auto b = build_network<float>(50, BlockKind::dmsa_bottleneck);
  const CostReport ra = cost_report(a), rb = cost_report(b);
  const ReportDiff d = compare_report(ra, rb);
  EXPECT_EQ(d.totals.params_a, ra.total_params());
  EXPECT_EQ(d.totals.params_b, rb.total_params());
  EXPECT_EQ(d.totals.flops_delta(), rb.total_flops() - ra.total_flops());
  Index sum = 0;
  for (const auto& row : d.rows) sum += row.params_delta();
  EXPECT_EQ(sum, d.totals.params_delta());
  const ReportDiff same = compare_report(ra, ra);
  for (const auto& row : same.rows) EXPECT_EQ(row.flops_delta(), 0);
  EXPECT_EQ(same.rows.size(), ra.layers.size());
}

TEST(Cost, PublishedTargets) {
  EXPECT_DOUBLE_EQ(published_cost(50, BlockKind::plain_bottleneck).params_millions, 25.56);
  EXPECT_DOUBLE_EQ(published_cost(101, BlockKind::plain_bottleneck).gflops, 7.85);
  EXPECT_DOUBLE_EQ(published_cost(50, BlockKind::dmsa_bottleneck).gflops, 3.44);
  EXPECT_THROW(published_cost(101, BlockKind::dmsa_bottleneck), InvalidConfig);
  EXPECT_NEAR((TargetGap{25.557, 25.56}.signed_percent()), -0.0117, 1e-3);
}

TEST(Network, ParameterNamesAreUniqueAndOrdered) {
  const auto net = build_network<float>(50, BlockKind::dmsa_bottleneck);
  std::vector<std::string> names;
  net.for_each_state([&](const std::string& n, const TensorF&) { names.push_back(n); });
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(names.front(), "stem.conv.weight");
  EXPECT_EQ(names.back(), "head.fc.bias");
  const auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  EXPECT_TRUE(has("stage1.block0.dmsa.extract.0.weight"));
  EXPECT_TRUE(has("stage1.block0.downsample.conv.weight"));
  EXPECT_TRUE(has("stage4.block2.bn3.running_var"));
  EXPECT_FALSE(has("stage1.block0.conv2.weight"));
  Index learnable = 0;
  net.for_each([&](const std::string& n, const TensorF&) {
    EXPECT_EQ(n.find("running_"), std::string::npos);
    ++learnable;
  });
  EXPECT_LT(learnable, static_cast<Index>(names.size()));
}

TEST(Network, PlainForwardShapesAt224) {
  const auto net = build_network<float>(50, BlockKind::plain_bottleneck, {}, 3);
  std::mt19937_64 rng(2);
  const TensorF x = TensorF::normal(Shape{1, 3, 224, 224}, rng);
  std::vector<Activation<float>> trace;
  const TensorF y = net.forward(x, &trace);
  const std::vector<std::pair<std::string, std::string>> expect{
      {"stem", "1x64x112x112"},   {"pool", "1x64x56x56"},    {"stage1", "1x256x56x56"}, {"stage2", "1x512x28x28"},
      {"stage3", "1x1024x14x14"}, {"stage4", "1x2048x7x7"}, {"logits", "1x1000"}};
  ASSERT_EQ(trace.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_EQ(trace[i].name, expect[i].first);
    EXPECT_EQ(trace[i].value.shape().str(), expect[i].second);
  }
  EXPECT_TRUE(y.all_finite());
}

TEST(Network, DmsaForwardIsDeterministicPerSeed) {
  const auto a = build_network<float>(50, BlockKind::dmsa_bottleneck, {}, 7);
  const auto b = build_network<float>(50, BlockKind::dmsa_bottleneck, {}, 7);
  const auto c = build_network<float>(50, BlockKind::dmsa_bottleneck, {}, 8);
  std::mt19937_64 rng(3);
  const TensorF x = TensorF::normal(Shape{2, 3, 64, 64}, rng);
  const TensorF ya = a.forward(x);
  EXPECT_EQ(ya.shape(), (Shape{2, 1000}));
  EXPECT_TRUE(ya.all_finite());
  EXPECT_TRUE(ya.identical(b.forward(x)));
  EXPECT_FALSE(ya.identical(c.forward(x)));
}

TEST(Network, BottleneckWithIdentityDmsaMatchesShuffledPlainPath) {
  // Stride-1 block with a fresh DMSA and identity extraction: conv2 is
  // replaced by a channel shuffle, so the block output is defined by the
  // surrounding 1x1 convolutions alone.
  auto net = build_network<double>(50, BlockKind::dmsa_bottleneck, {}, 4);
  Bottleneck<double> blk = net.blocks[1];
  ASSERT_FALSE(blk.has_downsample);
  blk.dmsa.make_identity_extraction(blk.dmsa_cfg);
  std::mt19937_64 rng(5);
  const TensorD x = TensorD::normal(Shape{1, 256, 6, 6}, rng);
  const TensorD y = blk.forward(x);
  const TensorD h = relu(blk.bn1(blk.conv1(x)));
  const TensorD m = relu(blk.bn2(channel_shuffle(h, blk.dmsa_cfg.sa_groups)));
  const TensorD ref = relu(add(blk.bn3(blk.conv3(m)), x));
  EXPECT_TRUE(y.identical(ref));
}

TEST(Network, RejectsWrongInputChannels) {
  const auto net = build_network<float>(50, BlockKind::plain_bottleneck);
  EXPECT_THROW(net.forward(TensorF(Shape{1, 1, 32, 32})), ShapeMismatch);
}
