#ifndef DMSA_DMSA_BLOCK_HPP
#define DMSA_DMSA_BLOCK_HPP

#include <string>
#include <string_view>
#include <vector>

#include "dmsa/attention.hpp"

namespace dmsa {

/// How the two branch outputs are merged back to C channels.
enum class BranchAgg { softmax, concat_halve };

const char* to_string(BranchAgg v);
BranchAgg parse_branch_agg(std::string_view s);

struct DmsaConfig {
  Index channels = 64;
  Index splits = 4;
  std::vector<Index> kernel_schedule{3, 5, 7, 9};
  std::vector<Index> conv_groups_schedule{1, 1, 2, 4};
  Index sa_groups = 8;
  Index reduction = 16;
  NormVariant norm_variant = NormVariant::instance;
  FcVariant fc_variant = FcVariant::affine_gate;
  BranchAgg branch_agg = BranchAgg::softmax;
  /// Stride of the extraction convolutions; 2 at a downsampling stage entry.
  Index stride = 1;

  Index split_width() const { return channels / splits; }
  /// kernel_schedule truncated to `splits`, or extended by +2 per extra split.
  std::vector<Index> kernels() const;
  /// conv_groups_schedule truncated to `splits` (extended by repeating its
  /// last entry), each entry clipped to the split width.
  std::vector<Index> conv_groups() const;

  /// Throws InvalidConfig naming the first violated divisibility rule.
  void validate() const;
};

/// Variant names: origin, w_bn, w_gn, w_sn, wo_fc, conv1x1_fc.
DmsaConfig make_ablation(DmsaConfig cfg, std::string_view variant);
const std::vector<std::string>& ablation_variants();

template <typename Scalar>
struct DmsaParams {
  std::vector<Tensor<Scalar>> extract;  // [C/S, C/(S g_i), k_i, k_i]
  SeDescriptorParams<Scalar> se;        // shared by both branch descriptors
  SpatialBranchParams<Scalar> spatial;
  ChannelBranchParams<Scalar> channel;
  SaUnitParams<Scalar> sa;
  Tensor<Scalar> agg;  // [C, 2C, 1, 1], concat_halve only

  /// He-normal extraction kernels, alpha = beta = 0, gate at its init.
  template <typename Rng>
  static DmsaParams random(const DmsaConfig& cfg, Rng& rng);
  /// All-zero tensors with the shapes `random` would produce.
  static DmsaParams zeros(const DmsaConfig& cfg);

  /// Replaces every extraction kernel by a centred per-group identity.
  void make_identity_extraction(const DmsaConfig& cfg);

  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    for (std::size_t i = 0; i < s.extract.size(); ++i) f("extract." + std::to_string(i) + ".weight", s.extract[i]);
    auto sub = [&f](const std::string& prefix, auto& bundle) {
      bundle.for_each([&](const std::string& name, auto& t) { f(prefix + name, t); });
    };
    sub("se.", s.se);
    sub("spatial.", s.spatial);
    sub("channel.", s.channel);
    sub("sa.", s.sa);
    if (!s.agg.empty()) f(std::string("agg.weight"), s.agg);
  }
};

template <typename Scalar>
std::vector<Tensor<Scalar>> multi_scale_extract(const Tensor<Scalar>& x, const DmsaConfig& cfg,
                                                const DmsaParams<Scalar>& p);

template <typename Scalar>
Tensor<Scalar> fuse_splits(const std::vector<Tensor<Scalar>>& parts);

/// A with each group's second half replaced by sa_spatial_unit of it.
template <typename Scalar>
Tensor<Scalar> enhance_subfeatures(const Tensor<Scalar>& a, const DmsaConfig& cfg, const DmsaParams<Scalar>& p);

/// Per (sample, channel) 2-way softmax of the branch descriptors.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> branch_attention(const Tensor<Scalar>& z1, const Tensor<Scalar>& z2);

/// att_1 * e1 + att_2 * e2 with att from branch_attention(z1, z2).
template <typename Scalar>
Tensor<Scalar> aggregate_weighted(const Tensor<Scalar>& e1, const Tensor<Scalar>& e2, const Tensor<Scalar>& z1,
                                  const Tensor<Scalar>& z2);

template <typename Scalar>
Tensor<Scalar> aggregate_branches(const Tensor<Scalar>& e1, const Tensor<Scalar>& e2, const DmsaParams<Scalar>& p,
                                  const DmsaConfig& cfg);

/// Intermediates of one forward pass, kept for the backward pass.
template <typename Scalar>
struct DmsaTrace {
  Tensor<Scalar> input;
  std::vector<Tensor<Scalar>> parts;
  Tensor<Scalar> fused, enhanced, e1, e2;
};

template <typename Scalar>
Tensor<Scalar> dmsa_forward(const Tensor<Scalar>& x, const DmsaConfig& cfg, const DmsaParams<Scalar>& p,
                            DmsaTrace<Scalar>* trace = nullptr);

template <typename Scalar>
struct DmsaGrad {
  Tensor<Scalar> dx;
  DmsaParams<Scalar> dp;
};

template <typename Scalar>
DmsaGrad<Scalar> dmsa_backward(const DmsaTrace<Scalar>& trace, const DmsaConfig& cfg, const DmsaParams<Scalar>& p,
                               const Tensor<Scalar>& dy);

// ---- Initialization --------------------------------------------------------

template <typename Scalar>
template <typename Rng>
DmsaParams<Scalar> DmsaParams<Scalar>::random(const DmsaConfig& cfg, Rng& rng) {
  cfg.validate();
  DmsaParams p;
  const Index w = cfg.split_width();
  const auto ks = cfg.kernels();
  const auto gs = cfg.conv_groups();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const Index fan_in = (w / gs[i]) * ks[i] * ks[i];
    p.extract.push_back(Tensor<Scalar>::normal(Shape{w, w / gs[i], ks[i], ks[i]}, rng,
                                               static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in)))));
  }
  p.se = SeDescriptorParams<Scalar>::random(cfg.channels, cfg.reduction, rng);
  p.spatial = SpatialBranchParams<Scalar>::random(cfg.channels, rng);
  p.channel = ChannelBranchParams<Scalar>::zero();
  p.sa = SaUnitParams<Scalar>::init(cfg.channels / (2 * cfg.sa_groups), cfg.fc_variant);
  if (cfg.branch_agg == BranchAgg::concat_halve) {
    const Index c = cfg.channels;
    p.agg = Tensor<Scalar>(Shape{c, 2 * c, 1, 1});
    for (Index o = 0; o < c; ++o) {
      p.agg.at(o, o, 0, 0) = Scalar(0.5);
      p.agg.at(o, c + o, 0, 0) = Scalar(0.5);
    }
  }
  return p;
}

}  // namespace dmsa

#endif  // DMSA_DMSA_BLOCK_HPP
