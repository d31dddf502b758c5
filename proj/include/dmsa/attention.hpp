#ifndef DMSA_ATTENTION_HPP
#define DMSA_ATTENTION_HPP

#include <cmath>
#include <string_view>
#include <utility>
#include <vector>

#include "dmsa/ops.hpp"

namespace dmsa {

/// Normalization used inside the spatial gate.
enum class NormVariant { instance, batch, group, shuffle };
/// What computes the gate logits from the normalized features.
enum class FcVariant { affine_gate, none, conv1x1 };

const char* to_string(NormVariant v);
const char* to_string(FcVariant v);
NormVariant parse_norm_variant(std::string_view s);
FcVariant parse_fc_variant(std::string_view s);

// Parameter bundles. `for_each(f)` calls f(name, tensor) for every set
// tensor in a fixed order; unset tensors are skipped.

/// Squeeze-and-excitation pair: w0 is [C/r, C], w1 is [C, C/r].
template <typename Scalar>
struct SeDescriptorParams {
  Tensor<Scalar> w0, w1;
  Index reduction = 1;

  template <typename Rng>
  static SeDescriptorParams random(Index channels, Index reduction, Rng& rng);

  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    f("w0", s.w0);
    f("w1", s.w1);
  }
};

/// 1x1 projections B, C, D (each [C, C, 1, 1]) and the residual scale alpha.
template <typename Scalar>
struct SpatialBranchParams {
  Tensor<Scalar> wb, wc, wd, alpha;

  template <typename Rng>
  static SpatialBranchParams random(Index channels, Rng& rng);

  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    f("wb", s.wb);
    f("wc", s.wc);
    f("wd", s.wd);
    f("alpha", s.alpha);
  }
};

template <typename Scalar>
struct ChannelBranchParams {
  Tensor<Scalar> beta;

  static ChannelBranchParams zero() { return {Tensor<Scalar>(Shape{1})}; }

  template <typename F>
  void for_each(F&& f) { f("beta", beta); }
  template <typename F>
  void for_each(F&& f) const { f("beta", beta); }
};

/// Gate parameters over a C/(2G)-channel sub-feature. Which tensors are
/// set depends on the FcVariant: affine_gate uses w2, b2 ([C/2G,1,1]);
/// conv1x1 uses fc_weight ([C/2G, C/2G, 1, 1]) and fc_bias; none uses
/// nothing. norm_gamma/norm_beta accompany every gated variant.
template <typename Scalar>
struct SaUnitParams {
  Tensor<Scalar> w2, b2, fc_weight, fc_bias, norm_gamma, norm_beta;

  /// Gate starts at sigmoid(1) on every channel: zero weights, unit bias.
  static SaUnitParams init(Index sub_channels, FcVariant fc);

  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    auto visit_set = [&f](const char* name, auto& t) {
      if (!t.empty()) f(name, t);
    };
    visit_set("w2", s.w2);
    visit_set("b2", s.b2);
    visit_set("fc_weight", s.fc_weight);
    visit_set("fc_bias", s.fc_bias);
    visit_set("norm_gamma", s.norm_gamma);
    visit_set("norm_beta", s.norm_beta);
  }
};

/// Splits the channel axis into G contiguous groups.
template <typename Scalar>
std::vector<Tensor<Scalar>> group_features(const Tensor<Scalar>& x, Index groups);

/// First half of the channels, second half.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_subfeature(const Tensor<Scalar>& xk);

/// sigmoid(W1 relu(W0 GAP(x))), shaped [N, C, 1, 1].
template <typename Scalar>
Tensor<Scalar> se_weight(const Tensor<Scalar>& x, const SeDescriptorParams<Scalar>& p);

/// [N, C, C]; entry (n, j, i) is softmax over i of <A_i, A_j>.
template <typename Scalar>
Tensor<Scalar> channel_attention_map(const Tensor<Scalar>& a);

/// beta * sum_i x_ji A_i + A_j
template <typename Scalar>
Tensor<Scalar> channel_branch(const Tensor<Scalar>& a, const ChannelBranchParams<Scalar>& p);

/// [N, HW, HW]; entry (n, j, i) is softmax over i of <B_i, C_j>.
template <typename Scalar>
Tensor<Scalar> spatial_attention_map(const Tensor<Scalar>& a, const SpatialBranchParams<Scalar>& p);

/// alpha * sum_i s_ji D_i + A_j
template <typename Scalar>
Tensor<Scalar> spatial_branch(const Tensor<Scalar>& a, const SpatialBranchParams<Scalar>& p);

/// Spatial branch whose B, C, D projections read `source` while the
/// residual term adds `residual`. With source == residual this is
/// spatial_branch.
template <typename Scalar>
Tensor<Scalar> spatial_branch(const Tensor<Scalar>& source, const Tensor<Scalar>& residual,
                              const SpatialBranchParams<Scalar>& p);

/// gate(norm(x)) * x with gate = sigmoid(w2 * . + b2) for the default variants.
template <typename Scalar>
Tensor<Scalar> sa_spatial_unit(const Tensor<Scalar>& xk2, const SaUnitParams<Scalar>& p,
                               NormVariant norm = NormVariant::instance, FcVariant fc = FcVariant::affine_gate);

/// Normalization step of the spatial gate, exposed for testing.
template <typename Scalar>
Tensor<Scalar> sa_normalize(const Tensor<Scalar>& x, const SaUnitParams<Scalar>& p, NormVariant norm);

/// Group count used by the group and shuffle normalization variants.
Index sa_norm_groups(Index sub_channels);

/// Output channel j * G + g takes input channel g * (C / G) + j.
template <typename Scalar>
Tensor<Scalar> channel_shuffle(const Tensor<Scalar>& x, Index groups);

// ---- Backward passes -------------------------------------------------------

template <typename Scalar>
struct SeGrad {
  Tensor<Scalar> dx;
  SeDescriptorParams<Scalar> dp;
};

template <typename Scalar>
SeGrad<Scalar> se_weight_backward(const Tensor<Scalar>& x, const SeDescriptorParams<Scalar>& p,
                                  const Tensor<Scalar>& dy);

template <typename Scalar>
struct ChannelBranchGrad {
  Tensor<Scalar> da;
  ChannelBranchParams<Scalar> dp;
};

template <typename Scalar>
ChannelBranchGrad<Scalar> channel_branch_backward(const Tensor<Scalar>& a, const ChannelBranchParams<Scalar>& p,
                                                  const Tensor<Scalar>& dy);

template <typename Scalar>
struct SpatialBranchGrad {
  Tensor<Scalar> dsource, dresidual;
  SpatialBranchParams<Scalar> dp;
};

template <typename Scalar>
SpatialBranchGrad<Scalar> spatial_branch_backward(const Tensor<Scalar>& source, const Tensor<Scalar>& residual,
                                                  const SpatialBranchParams<Scalar>& p, const Tensor<Scalar>& dy);

template <typename Scalar>
struct SaUnitGrad {
  Tensor<Scalar> dx;
  SaUnitParams<Scalar> dp;
};

template <typename Scalar>
SaUnitGrad<Scalar> sa_spatial_unit_backward(const Tensor<Scalar>& xk2, const SaUnitParams<Scalar>& p,
                                            NormVariant norm, FcVariant fc, const Tensor<Scalar>& dy);

template <typename Scalar>
Tensor<Scalar> channel_shuffle_backward(const Tensor<Scalar>& dy, Index groups);

// ---- Random initialization -------------------------------------------------

template <typename Scalar>
template <typename Rng>
SeDescriptorParams<Scalar> SeDescriptorParams<Scalar>::random(Index channels, Index reduction, Rng& rng) {
  if (reduction < 1 || channels % reduction != 0) {
    throw InvalidConfig("SE reduction " + std::to_string(reduction) + " does not divide " +
                        std::to_string(channels) + " channels");
  }
  const Index hidden = channels / reduction;
  SeDescriptorParams p;
  p.reduction = reduction;
  p.w0 = Tensor<Scalar>::normal(Shape{hidden, channels}, rng, static_cast<Scalar>(std::sqrt(2.0 / channels)));
  p.w1 = Tensor<Scalar>::normal(Shape{channels, hidden}, rng, static_cast<Scalar>(std::sqrt(1.0 / hidden)));
  return p;
}

template <typename Scalar>
template <typename Rng>
SpatialBranchParams<Scalar> SpatialBranchParams<Scalar>::random(Index channels, Rng& rng) {
  const auto sd = static_cast<Scalar>(std::sqrt(1.0 / channels));
  SpatialBranchParams p;
  p.wb = Tensor<Scalar>::normal(Shape{channels, channels, 1, 1}, rng, sd);
  p.wc = Tensor<Scalar>::normal(Shape{channels, channels, 1, 1}, rng, sd);
  p.wd = Tensor<Scalar>::normal(Shape{channels, channels, 1, 1}, rng, sd);
  p.alpha = Tensor<Scalar>(Shape{1});
  return p;
}

}  // namespace dmsa

#endif  // DMSA_ATTENTION_HPP
