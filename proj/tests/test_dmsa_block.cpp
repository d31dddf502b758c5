#include <gtest/gtest.h>

#include <random>

#include "dmsa/dmsa_block.hpp"
#include "dmsa/grad_check.hpp"
#include "oracles.hpp"

using namespace dmsa;

namespace {

DmsaConfig config(Index c, Index s, Index g, Index r = 16) {
  DmsaConfig cfg;
  cfg.channels = c;
  cfg.splits = s;
  cfg.sa_groups = g;
  cfg.reduction = r;
  return cfg;
}

// Every learnable tensor moved off its initial value.
DmsaParams<double> busy_params(const DmsaConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = DmsaParams<double>::random(cfg, rng);
  p.channel.beta[0] = 0.4;
  p.spatial.alpha[0] = -0.7;
  p.sa.for_each([&](const std::string&, TensorD& t) { t = TensorD::normal(t.shape(), rng, 0.8); });
  return p;
}

}  // namespace

TEST(DmsaConfig, ScheduleExtensionAndClipping) {
  DmsaConfig cfg = config(64, 4, 8);
  EXPECT_EQ(cfg.kernels(), (std::vector<Index>{3, 5, 7, 9}));
  EXPECT_EQ(cfg.conv_groups(), (std::vector<Index>{1, 1, 2, 4}));
  cfg.splits = 2;
  EXPECT_EQ(cfg.kernels(), (std::vector<Index>{3, 5}));
  cfg.channels = 96;
  cfg.splits = 6;
  EXPECT_EQ(cfg.kernels(), (std::vector<Index>{3, 5, 7, 9, 11, 13}));
  EXPECT_EQ(cfg.conv_groups(), (std::vector<Index>{1, 1, 2, 4, 4, 4}));
  DmsaConfig narrow = config(8, 4, 2);
  EXPECT_EQ(narrow.conv_groups(), (std::vector<Index>{1, 1, 2, 2}));
}

TEST(DmsaConfig, ValidationNamesTheBrokenRule) {
  EXPECT_NO_THROW(config(64, 4, 8).validate());
  EXPECT_NO_THROW(config(16, 2, 2).validate());
  EXPECT_THROW(config(64, 3, 8).validate(), InvalidConfig);
  EXPECT_THROW(config(64, 4, 5).validate(), InvalidConfig);
  EXPECT_THROW(config(16, 2, 16).validate(), InvalidConfig);  // C/G must hold two halves
  EXPECT_THROW(config(64, 4, 8, 7).validate(), InvalidConfig);
  DmsaConfig even_kernel = config(16, 2, 2);
  even_kernel.kernel_schedule = {3, 4};
  EXPECT_THROW(even_kernel.validate(), InvalidConfig);
  DmsaConfig bad_groups = config(16, 2, 2);
  bad_groups.conv_groups_schedule = {1, 3};
  EXPECT_THROW(bad_groups.validate(), InvalidConfig);
}

TEST(DmsaBlock, MatchesStagedOracle) {
  for (const DmsaConfig& cfg : {config(16, 2, 2), config(32, 4, 4, 8), config(24, 2, 3, 4)}) {
    const auto p = busy_params(cfg, 1);
    std::mt19937_64 rng(2);
    const TensorD x = TensorD::normal(Shape{2, cfg.channels, 5, 4}, rng);
    const TensorD y = dmsa_forward(x, cfg, p);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_LT(oracle::max_abs_diff(y, oracle::dmsa_block(x, cfg, p)), 1e-11) << cfg.channels;
  }
}

TEST(DmsaBlock, StridedExtractionMatchesOracle) {
  DmsaConfig cfg = config(16, 2, 2);
  cfg.stride = 2;
  const auto p = busy_params(cfg, 3);
  std::mt19937_64 rng(4);
  const TensorD x = TensorD::normal(Shape{1, 16, 8, 8}, rng);
  const TensorD y = dmsa_forward(x, cfg, p);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 4, 4}));
  EXPECT_LT(oracle::max_abs_diff(y, oracle::dmsa_block(x, cfg, p)), 1e-11);
}

TEST(DmsaBlock, StagesExposeIntermediateShapes) {
  const DmsaConfig cfg = config(32, 4, 4, 8);
  const auto p = busy_params(cfg, 5);
  std::mt19937_64 rng(6);
  const TensorD x = TensorD::normal(Shape{1, 32, 6, 6}, rng);
  const auto parts = multi_scale_extract(x, cfg, p);
  ASSERT_EQ(parts.size(), 4u);
  for (const auto& t : parts) EXPECT_EQ(t.shape(), (Shape{1, 8, 6, 6}));
  const TensorD a = fuse_splits(parts);
  EXPECT_EQ(a.shape(), x.shape());
  const TensorD enhanced = enhance_subfeatures(a, cfg, p);
  // First half of each group passes through untouched.
  for (Index g = 0; g < 4; ++g)
    for (Index k = 0; k < 4; ++k)
      for (Index q = 0; q < 36; ++q) EXPECT_EQ(enhanced[(g * 8 + k) * 36 + q], a[(g * 8 + k) * 36 + q]);
  DmsaTrace<double> trace;
  dmsa_forward(x, cfg, p, &trace);
  EXPECT_TRUE(trace.fused.identical(a));
  EXPECT_TRUE(trace.enhanced.identical(enhanced));
  EXPECT_EQ(trace.e1.shape(), x.shape());
}

TEST(DmsaBlock, RejectsMismatchedInput) {
  const DmsaConfig cfg = config(16, 2, 2);
  const auto p = busy_params(cfg, 7);
  EXPECT_THROW(dmsa_forward(TensorD(Shape{1, 8, 4, 4}), cfg, p), ShapeMismatch);
  EXPECT_THROW(dmsa_forward(TensorD(Shape{16, 4}), cfg, p), ShapeMismatch);
  EXPECT_THROW(dmsa_forward(TensorD(Shape{1, 16, 4, 4}), config(16, 4, 2), p), InvalidConfig);
}

TEST(BranchAttention, WeightsSumToOneAndTieIsHalf) {
  std::mt19937_64 rng(8);
  const TensorD z1 = TensorD::normal(Shape{3, 10, 1, 1}, rng, 4.0), z2 = TensorD::normal(Shape{3, 10, 1, 1}, rng, 4.0);
  const auto [a1, a2] = branch_attention(z1, z2);
  for (Index i = 0; i < a1.numel(); ++i) EXPECT_NEAR(a1[i] + a2[i], 1.0, 1e-15);
  const auto [t1, t2] = branch_attention(z1, z1);
  for (Index i = 0; i < t1.numel(); ++i) {
    EXPECT_EQ(t1[i], 0.5);
    EXPECT_EQ(t2[i], 0.5);
  }
  const TensorD e = TensorD::normal(Shape{3, 10, 2, 2}, rng);
  EXPECT_TRUE(aggregate_weighted(e, e, z1, z1).identical(e));
}

TEST(BranchAttention, ConcatHalveStartsAtTheMean) {
  DmsaConfig cfg = config(8, 2, 2, 4);
  cfg.branch_agg = BranchAgg::concat_halve;
  std::mt19937_64 rng(9);
  const auto p = DmsaParams<double>::random(cfg, rng);
  EXPECT_EQ(p.agg.shape(), (Shape{8, 16, 1, 1}));
  const TensorD e1 = TensorD::normal(Shape{1, 8, 3, 3}, rng), e2 = TensorD::normal(Shape{1, 8, 3, 3}, rng);
  const TensorD y = aggregate_branches(e1, e2, p, cfg);
  for (Index i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], 0.5 * (e1[i] + e2[i]), 1e-15);
  EXPECT_EQ(parse_branch_agg("concat_halve"), BranchAgg::concat_halve);
  EXPECT_THROW(parse_branch_agg("sum"), UnknownVariant);
}

struct GridPoint {
  Index channels, groups;
};

class IdentityAtInit : public ::testing::TestWithParam<GridPoint> {};

TEST_P(IdentityAtInit, BlockReducesToChannelShuffle) {
  const auto [c, g] = GetParam();
  const DmsaConfig cfg = config(c, 4, g, 4);
  std::mt19937_64 rng(static_cast<std::uint64_t>(c * 10 + g));
  auto p = DmsaParams<double>::random(cfg, rng);
  p.make_identity_extraction(cfg);
  ASSERT_EQ(p.channel.beta[0], 0.0);
  ASSERT_EQ(p.spatial.alpha[0], 0.0);
  const TensorD x = TensorD::normal(Shape{2, c, 5, 5}, rng);
  EXPECT_TRUE(dmsa_forward(x, cfg, p).identical(channel_shuffle(x, g)));
}

INSTANTIATE_TEST_SUITE_P(Grid, IdentityAtInit,
                         ::testing::Values(GridPoint{16, 1}, GridPoint{16, 2}, GridPoint{16, 4}, GridPoint{16, 8},
                                           GridPoint{32, 1}, GridPoint{32, 2}, GridPoint{32, 4}, GridPoint{32, 8},
                                           GridPoint{64, 1}, GridPoint{64, 2}, GridPoint{64, 4},
                                           GridPoint{64, 8}),
                         [](const auto& info) {
                           return "C" + std::to_string(info.param.channels) + "_G" +
                                  std::to_string(info.param.groups);
                         });

TEST(Ablations, VariantsConfigureTheGate) {
  const DmsaConfig base = config(16, 2, 2);
  EXPECT_EQ(ablation_variants().size(), 6u);
  EXPECT_EQ(make_ablation(base, "origin").norm_variant, NormVariant::instance);
  EXPECT_EQ(make_ablation(base, "w_bn").norm_variant, NormVariant::batch);
  EXPECT_EQ(make_ablation(base, "w_gn").norm_variant, NormVariant::group);
  EXPECT_EQ(make_ablation(base, "w_sn").norm_variant, NormVariant::shuffle);
  EXPECT_EQ(make_ablation(base, "wo_fc").fc_variant, FcVariant::none);
  EXPECT_EQ(make_ablation(base, "conv1x1_fc").fc_variant, FcVariant::conv1x1);
  EXPECT_THROW(make_ablation(base, "w_ln"), UnknownVariant);
}

TEST(Ablations, EveryVariantRunsAndDiffers) {
  std::mt19937_64 rng(10);
  const TensorD x = TensorD::normal(Shape{1, 32, 6, 6}, rng);
  std::vector<TensorD> outs;
  for (const auto& v : ablation_variants()) {
    const DmsaConfig cfg = make_ablation(config(32, 4, 4, 8), v);
    auto p = busy_params(cfg, 11);
    const TensorD y = dmsa_forward(x, cfg, p);
    EXPECT_TRUE(y.all_finite()) << v;
    EXPECT_EQ(y.shape(), x.shape()) << v;
    outs.push_back(y);
  }
  for (std::size_t i = 1; i < outs.size(); ++i) EXPECT_FALSE(outs[0].identical(outs[i])) << ablation_variants()[i];
}

TEST(Ablations, ParameterCountsOrder) {
  std::mt19937_64 rng(12);
  const DmsaConfig base = config(64, 4, 8);
  const auto count = [&](const char* v) { return bundle_numel(DmsaParams<double>::random(make_ablation(base, v), rng)); };
  const Index origin = count("origin");
  EXPECT_GT(count("conv1x1_fc"), origin);
  EXPECT_LT(count("wo_fc"), origin);
  EXPECT_EQ(count("w_bn"), origin);
}

TEST(Ablations, EveryVariantPassesGradientCheck) {
  for (const auto& v : ablation_variants()) {
    const GradCheckReport r = check_block(make_ablation(smallest_block_config(), v), 4, 0);
    EXPECT_TRUE(r.passed()) << v << " worst " << r.worst()->name << " " << r.worst()->max_rel;
  }
  DmsaConfig halve = smallest_block_config();
  halve.branch_agg = BranchAgg::concat_halve;
  EXPECT_TRUE(check_block(halve, 4, 1).passed());
}

TEST(DmsaParams, DeterministicPerSeedAndNamed) {
  const DmsaConfig cfg = config(32, 4, 4, 8);
  std::mt19937_64 a(13), b(13);
  const auto pa = DmsaParams<double>::random(cfg, a), pb = DmsaParams<double>::random(cfg, b);
  std::vector<std::string> names;
  std::vector<const TensorD*> ta;
  pa.for_each([&](const std::string& n, const TensorD& t) {
    names.push_back(n);
    ta.push_back(&t);
  });
  std::size_t i = 0;
  pb.for_each([&](const std::string&, const TensorD& t) { EXPECT_TRUE(t.identical(*ta[i++])); });
  EXPECT_EQ(names.front(), "extract.0.weight");
  EXPECT_NE(std::find(names.begin(), names.end(), "spatial.alpha"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "sa.w2"), names.end());
  const auto z = DmsaParams<double>::zeros(cfg);
  EXPECT_EQ(bundle_numel(z), bundle_numel(pa));
  std::mt19937_64 rng(14);
  const TensorD x = TensorD::normal(Shape{1, 32, 4, 4}, rng);
  EXPECT_TRUE(dmsa_forward(x, cfg, pa).identical(dmsa_forward(x, cfg, pb)));
}

TEST(DmsaBlock, FloatTracksDouble) {
  const DmsaConfig cfg = config(16, 2, 2);
  const auto pd = busy_params(cfg, 15);
  DmsaParams<float> pf;
  pf = DmsaParams<float>::zeros(cfg);
  std::vector<const TensorD*> src;
  pd.for_each([&](const std::string&, const TensorD& t) { src.push_back(&t); });
  std::size_t i = 0;
  pf.for_each([&](const std::string&, TensorF& t) { t = src[i++]->cast<float>(); });
  std::mt19937_64 rng(16);
  const TensorD x = TensorD::normal(Shape{1, 16, 4, 4}, rng);
  const TensorD yd = dmsa_forward(x, cfg, pd);
  const TensorD yf = dmsa_forward(x.cast<float>(), cfg, pf).cast<double>();
  EXPECT_LT(oracle::max_abs_diff(yd, yf), 1e-4);
}
