#include "dmsa/dmsa_block.hpp"

#include <algorithm>

#include "dmsa/backward.hpp"

namespace dmsa {

const char* to_string(BranchAgg v) { return v == BranchAgg::softmax ? "softmax" : "concat_halve"; }

BranchAgg parse_branch_agg(std::string_view s) {
  if (s == "softmax") return BranchAgg::softmax;
  if (s == "concat_halve") return BranchAgg::concat_halve;
  throw UnknownVariant("unknown branch_agg '" + std::string(s) + "'");
}

std::vector<Index> DmsaConfig::kernels() const {
  std::vector<Index> ks;
  for (Index i = 0; i < splits; ++i) {
    if (i < static_cast<Index>(kernel_schedule.size())) {
      ks.push_back(kernel_schedule[static_cast<std::size_t>(i)]);
    } else {
      ks.push_back(ks.empty() ? 3 : ks.back() + 2);
    }
  }
  return ks;
}

std::vector<Index> DmsaConfig::conv_groups() const {
  std::vector<Index> gs;
  const Index width = std::max<Index>(split_width(), 1);
  for (Index i = 0; i < splits; ++i) {
    Index g = 1;
    if (i < static_cast<Index>(conv_groups_schedule.size())) {
      g = conv_groups_schedule[static_cast<std::size_t>(i)];
    } else if (!gs.empty()) {
      g = gs.back();
    }
    gs.push_back(std::min(g, width));
  }
  return gs;
}

void DmsaConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidConfig("dmsa config: " + msg); };
  const auto c = std::to_string(channels);
  if (channels < 1) fail("channels must be positive");
  if (splits < 1 || channels % splits != 0) fail("splits " + std::to_string(splits) + " must divide channels " + c);
  if (sa_groups < 1 || channels % (2 * sa_groups) != 0) {
    fail("2 * sa_groups = " + std::to_string(2 * sa_groups) + " must divide channels " + c);
  }
  if (reduction < 1 || channels % reduction != 0) {
    fail("reduction " + std::to_string(reduction) + " must divide channels " + c);
  }
  if (stride < 1) fail("stride must be positive");
  for (Index k : kernels()) {
    if (k < 1 || k % 2 == 0) fail("kernel sizes must be odd and positive, got " + std::to_string(k));
  }
  for (Index g : conv_groups()) {
    if (g < 1 || split_width() % g != 0) {
      fail("conv group " + std::to_string(g) + " must divide split width " + std::to_string(split_width()));
    }
  }
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"origin", "w_bn", "w_gn", "w_sn", "wo_fc", "conv1x1_fc"};
  return names;
}

DmsaConfig make_ablation(DmsaConfig cfg, std::string_view variant) {
  cfg.norm_variant = NormVariant::instance;
  cfg.fc_variant = FcVariant::affine_gate;
  if (variant == "origin") {
  } else if (variant == "w_bn") {
    cfg.norm_variant = NormVariant::batch;
  } else if (variant == "w_gn") {
    cfg.norm_variant = NormVariant::group;
  } else if (variant == "w_sn") {
    cfg.norm_variant = NormVariant::shuffle;
  } else if (variant == "wo_fc") {
    cfg.fc_variant = FcVariant::none;
  } else if (variant == "conv1x1_fc") {
    cfg.fc_variant = FcVariant::conv1x1;
  } else {
    throw UnknownVariant("unknown ablation variant '" + std::string(variant) + "'");
  }
  return cfg;
}

template <typename Scalar>
DmsaParams<Scalar> DmsaParams<Scalar>::zeros(const DmsaConfig& cfg) {
  cfg.validate();
  DmsaParams p;
  const Index w = cfg.split_width(), c = cfg.channels;
  const auto ks = cfg.kernels();
  const auto gs = cfg.conv_groups();
  for (std::size_t i = 0; i < ks.size(); ++i) p.extract.emplace_back(Shape{w, w / gs[i], ks[i], ks[i]});
  p.se.reduction = cfg.reduction;
  p.se.w0 = Tensor<Scalar>(Shape{c / cfg.reduction, c});
  p.se.w1 = Tensor<Scalar>(Shape{c, c / cfg.reduction});
  p.spatial.wb = Tensor<Scalar>(Shape{c, c, 1, 1});
  p.spatial.wc = Tensor<Scalar>(Shape{c, c, 1, 1});
  p.spatial.wd = Tensor<Scalar>(Shape{c, c, 1, 1});
  p.spatial.alpha = Tensor<Scalar>(Shape{1});
  p.channel = ChannelBranchParams<Scalar>::zero();
  p.sa = SaUnitParams<Scalar>::init(c / (2 * cfg.sa_groups), cfg.fc_variant);
  p.sa.for_each([](const std::string&, Tensor<Scalar>& t) { t.vec().setZero(); });
  if (cfg.branch_agg == BranchAgg::concat_halve) p.agg = Tensor<Scalar>(Shape{c, 2 * c, 1, 1});
  return p;
}

template <typename Scalar>
void DmsaParams<Scalar>::make_identity_extraction(const DmsaConfig& cfg) {
  cfg.validate();
  for (Tensor<Scalar>& w : extract) {
    w.vec().setZero();
    // Output channel o sits in group o / per_group and reads its local input o % per_group.
    const Index per_group = w.dim(1), k = w.dim(2);
    for (Index o = 0; o < w.dim(0); ++o) w.at(o, o % per_group, k / 2, k / 2) = Scalar(1);
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> multi_scale_extract(const Tensor<Scalar>& x, const DmsaConfig& cfg,
                                                const DmsaParams<Scalar>& p) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeMismatch("dmsa: expected [N," + std::to_string(cfg.channels) + ",H,W], got " + x.shape().str());
  }
  if (static_cast<Index>(p.extract.size()) != cfg.splits) {
    throw InvalidConfig("dmsa: " + std::to_string(p.extract.size()) + " extraction kernels for " +
                        std::to_string(cfg.splits) + " splits");
  }
  const auto ks = cfg.kernels();
  const auto gs = cfg.conv_groups();
  const auto inputs = split(x, cfg.splits, 1);
  std::vector<Tensor<Scalar>> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.push_back(conv2d(inputs[i], p.extract[i], Tensor<Scalar>(), cfg.stride, (ks[i] - 1) / 2, gs[i]));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> fuse_splits(const std::vector<Tensor<Scalar>>& parts) {
  return concat(parts, 1);
}

namespace {

// [N, C, H, W] viewed as [N*G, C/G, H, W]; groups are channel-contiguous.
template <typename Scalar>
Tensor<Scalar> as_groups(const Tensor<Scalar>& a, Index groups) {
  return a.reshaped(Shape{a.dim(0) * groups, a.dim(1) / groups, a.dim(2), a.dim(3)});
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> enhance_subfeatures(const Tensor<Scalar>& a, const DmsaConfig& cfg, const DmsaParams<Scalar>& p) {
  if (cfg.fc_variant == FcVariant::none) return a;
  const auto [xk1, xk2] = split_subfeature(as_groups(a, cfg.sa_groups));
  const Tensor<Scalar> gated = sa_spatial_unit(xk2, p.sa, cfg.norm_variant, cfg.fc_variant);
  return concat(std::vector<Tensor<Scalar>>{xk1, gated}, 1).reshaped(a.shape());
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> branch_attention(const Tensor<Scalar>& z1, const Tensor<Scalar>& z2) {
  if (z1.shape() != z2.shape()) {
    throw ShapeMismatch("branch_attention: " + z1.shape().str() + " vs " + z2.shape().str());
  }
  Tensor<Scalar> a1(z1.shape()), a2(z1.shape());
  for (Index i = 0; i < z1.numel(); ++i) {
    const Scalar m = std::max(z1[i], z2[i]);
    const Scalar u = std::exp(z1[i] - m), v = std::exp(z2[i] - m);
    a1[i] = u / (u + v);
    a2[i] = v / (u + v);
  }
  return {std::move(a1), std::move(a2)};
}

template <typename Scalar>
Tensor<Scalar> aggregate_weighted(const Tensor<Scalar>& e1, const Tensor<Scalar>& e2, const Tensor<Scalar>& z1,
                                  const Tensor<Scalar>& z2) {
  if (e1.shape() != e2.shape()) throw ShapeMismatch("aggregate: " + e1.shape().str() + " vs " + e2.shape().str());
  const auto [a1, a2] = branch_attention(z1, z2);
  return add(mul(e1, a1), mul(e2, a2));
}

template <typename Scalar>
Tensor<Scalar> aggregate_branches(const Tensor<Scalar>& e1, const Tensor<Scalar>& e2, const DmsaParams<Scalar>& p,
                                  const DmsaConfig& cfg) {
  if (e1.shape() != e2.shape()) throw ShapeMismatch("aggregate: " + e1.shape().str() + " vs " + e2.shape().str());
  if (cfg.branch_agg == BranchAgg::concat_halve) {
    return conv2d(concat(std::vector<Tensor<Scalar>>{e1, e2}, 1), p.agg, Tensor<Scalar>(), 1, 0, 1);
  }
  return aggregate_weighted(e1, e2, se_weight(e1, p.se), se_weight(e2, p.se));
}

template <typename Scalar>
Tensor<Scalar> dmsa_forward(const Tensor<Scalar>& x, const DmsaConfig& cfg, const DmsaParams<Scalar>& p,
                            DmsaTrace<Scalar>* trace) {
  auto parts = multi_scale_extract(x, cfg, p);
  Tensor<Scalar> fused = fuse_splits(parts);
  Tensor<Scalar> enhanced = enhance_subfeatures(fused, cfg, p);
  Tensor<Scalar> e1 = channel_branch(fused, p.channel);
  Tensor<Scalar> e2 = spatial_branch(enhanced, fused, p.spatial);
  Tensor<Scalar> y = channel_shuffle(aggregate_branches(e1, e2, p, cfg), cfg.sa_groups);
  if (trace != nullptr) {
    trace->input = x;
    trace->parts = std::move(parts);
    trace->fused = std::move(fused);
    trace->enhanced = std::move(enhanced);
    trace->e1 = std::move(e1);
    trace->e2 = std::move(e2);
  }
  return y;
}

template <typename Scalar>
DmsaGrad<Scalar> dmsa_backward(const DmsaTrace<Scalar>& t, const DmsaConfig& cfg, const DmsaParams<Scalar>& p,
                               const Tensor<Scalar>& dy) {
  DmsaGrad<Scalar> g;
  g.dp.channel = ChannelBranchParams<Scalar>::zero();
  const Tensor<Scalar> dmerged = channel_shuffle_backward(dy, cfg.sa_groups);

  Tensor<Scalar> de1, de2;
  if (cfg.branch_agg == BranchAgg::concat_halve) {
    const auto cg = conv2d_backward(concat(std::vector<Tensor<Scalar>>{t.e1, t.e2}, 1), p.agg, dmerged, 1, 0, 1, false);
    g.dp.agg = cg.dw;
    auto halves = split(cg.dx, 2, 1);
    de1 = std::move(halves[0]);
    de2 = std::move(halves[1]);
    g.dp.se.reduction = p.se.reduction;
    g.dp.se.w0 = Tensor<Scalar>(p.se.w0.shape());
    g.dp.se.w1 = Tensor<Scalar>(p.se.w1.shape());
  } else {
    const Tensor<Scalar> z1 = se_weight(t.e1, p.se), z2 = se_weight(t.e2, p.se);
    const auto [a1, a2] = branch_attention(z1, z2);
    de1 = mul(dmerged, a1);
    de2 = mul(dmerged, a2);
    const Index nc = z1.numel(), hw = t.e1.dim(2) * t.e1.dim(3);
    Tensor<Scalar> dz1(z1.shape()), dz2(z1.shape());
    for (Index i = 0; i < nc; ++i) {
      const auto dyi = dmerged.vec().segment(i * hw, hw);
      const Scalar da1 = dyi.dot(t.e1.vec().segment(i * hw, hw));
      const Scalar da2 = dyi.dot(t.e2.vec().segment(i * hw, hw));
      const Scalar mean = a1[i] * da1 + a2[i] * da2;
      dz1[i] = a1[i] * (da1 - mean);
      dz2[i] = a2[i] * (da2 - mean);
    }
    auto s1 = se_weight_backward(t.e1, p.se, dz1);
    auto s2 = se_weight_backward(t.e2, p.se, dz2);
    de1.vec() += s1.dx.vec();
    de2.vec() += s2.dx.vec();
    g.dp.se = std::move(s1.dp);
    g.dp.se.w0.vec() += s2.dp.w0.vec();
    g.dp.se.w1.vec() += s2.dp.w1.vec();
  }

  auto cb = channel_branch_backward(t.fused, p.channel, de1);
  g.dp.channel = std::move(cb.dp);
  Tensor<Scalar> dfused = std::move(cb.da);

  auto sb = spatial_branch_backward(t.enhanced, t.fused, p.spatial, de2);
  g.dp.spatial = std::move(sb.dp);
  dfused.vec() += sb.dresidual.vec();

  if (cfg.fc_variant == FcVariant::none) {
    dfused.vec() += sb.dsource.vec();
  } else {
    const Index groups = cfg.sa_groups;
    const auto xk2 = split_subfeature(as_groups(t.fused, groups)).second;
    auto halves = split_subfeature(as_groups(sb.dsource, groups));
    auto su = sa_spatial_unit_backward(xk2, p.sa, cfg.norm_variant, cfg.fc_variant, halves.second);
    g.dp.sa = std::move(su.dp);
    dfused.vec() += concat(std::vector<Tensor<Scalar>>{halves.first, su.dx}, 1).vec();
  }

  const auto ks = cfg.kernels();
  const auto gs = cfg.conv_groups();
  const auto inputs = split(t.input, cfg.splits, 1);
  const auto dparts = split(dfused, cfg.splits, 1);
  std::vector<Tensor<Scalar>> dx_parts;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto cg = conv2d_backward(inputs[i], p.extract[i], dparts[i], cfg.stride, (ks[i] - 1) / 2, gs[i], false);
    g.dp.extract.push_back(std::move(cg.dw));
    dx_parts.push_back(std::move(cg.dx));
  }
  g.dx = concat(dx_parts, 1);
  return g;
}

#define DMSA_INSTANTIATE_BLOCK(S)                                                                             \
  template struct DmsaParams<S>;                                                                              \
  template std::vector<Tensor<S>> multi_scale_extract(const Tensor<S>&, const DmsaConfig&, const DmsaParams<S>&); \
  template Tensor<S> fuse_splits(const std::vector<Tensor<S>>&);                                              \
  template Tensor<S> enhance_subfeatures(const Tensor<S>&, const DmsaConfig&, const DmsaParams<S>&);          \
  template std::pair<Tensor<S>, Tensor<S>> branch_attention(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> aggregate_weighted(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> aggregate_branches(const Tensor<S>&, const Tensor<S>&, const DmsaParams<S>&,             \
                                        const DmsaConfig&);                                                   \
  template Tensor<S> dmsa_forward(const Tensor<S>&, const DmsaConfig&, const DmsaParams<S>&, DmsaTrace<S>*);  \
  template DmsaGrad<S> dmsa_backward(const DmsaTrace<S>&, const DmsaConfig&, const DmsaParams<S>&, const Tensor<S>&);

DMSA_INSTANTIATE_BLOCK(float)
DMSA_INSTANTIATE_BLOCK(double)

}  // namespace dmsa
