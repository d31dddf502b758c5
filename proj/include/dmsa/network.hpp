#ifndef DMSA_NETWORK_HPP
#define DMSA_NETWORK_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dmsa/dmsa_block.hpp"
#include "dmsa/param_set.hpp"

namespace dmsa {

enum class BlockKind { plain_bottleneck, dmsa_bottleneck };

const char* to_string(BlockKind k);
BlockKind parse_block_kind(std::string_view s);

struct StageSpec {
  Index blocks;
  Index inner_width;
  Index out_width;
  Index spatial;  // output extent at 224x224 input
};

struct NetworkSpec {
  Index depth = 50;
  BlockKind kind = BlockKind::plain_bottleneck;
  Index stem_kernel = 7, stem_stride = 2, stem_width = 64;
  Index pool_kernel = 3, pool_stride = 2, pool_padding = 1;
  std::vector<StageSpec> stages;
  Index num_classes = 1000;
  Index in_channels = 3;

  /// Depth 50 or 101; anything else throws InvalidConfig.
  static NetworkSpec for_depth(Index depth, BlockKind kind);
  Index total_blocks() const;
};

template <typename Scalar>
struct ConvUnit {
  Tensor<Scalar> weight;
  Index stride = 1, padding = 0, groups = 1;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return conv2d(x, weight, Tensor<Scalar>(), stride, padding, groups);
  }
};

/// Inference-mode batch norm. Running statistics are buffers, not parameters.
template <typename Scalar>
struct BatchNorm {
  Tensor<Scalar> gamma, beta, running_mean, running_var;

  static BatchNorm identity(Index channels);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return batch_norm_inference(x, gamma, beta, running_mean, running_var);
  }
};

template <typename Scalar>
struct Bottleneck {
  std::string name;  // "stage1.block0"
  Index in_width = 0, inner_width = 0, out_width = 0, stride = 1;
  BlockKind kind = BlockKind::plain_bottleneck;
  ConvUnit<Scalar> conv1, conv2, conv3;  // conv2 is unset for DMSA blocks
  BatchNorm<Scalar> bn1, bn2, bn3;
  DmsaConfig dmsa_cfg;
  DmsaParams<Scalar> dmsa;
  bool has_downsample = false;
  ConvUnit<Scalar> down;
  BatchNorm<Scalar> down_bn;

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const;
};

/// A named activation captured during a traced forward pass.
template <typename Scalar>
struct Activation {
  std::string name;
  Tensor<Scalar> value;
};

template <typename Scalar>
class Network {
 public:
  NetworkSpec spec;
  DmsaConfig dmsa_template;
  ConvUnit<Scalar> stem;
  BatchNorm<Scalar> stem_bn;
  std::vector<Bottleneck<Scalar>> blocks;
  Tensor<Scalar> fc_weight;  // [2048, classes]
  Tensor<Scalar> fc_bias;

  /// Logits [N, classes]. With `trace`, records "stem", "pool",
  /// "stage1".."stage4" and "logits" in order.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, std::vector<Activation<Scalar>>* trace = nullptr) const;

  /// Learnable tensors in a fixed, name-unique order.
  template <typename F>
  void for_each(F&& f) { visit(*this, f, false); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f, false); }
  /// Learnable tensors followed by the batch-norm running statistics.
  template <typename F>
  void for_each_state(F&& f) { visit(*this, f, true); }
  template <typename F>
  void for_each_state(F&& f) const { visit(*this, f, true); }

  ParamSet<Scalar> params() { return collect_params<Scalar>(*this); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f, bool buffers);
};

/// Deterministic He-normal init for every convolution, N(0, 0.01) for the
/// classifier, unit/zero batch norm and the DMSA defaults.
template <typename Scalar>
Network<Scalar> build_network(const NetworkSpec& spec, const DmsaConfig& dmsa_template, std::uint64_t seed);

template <typename Scalar>
Network<Scalar> build_network(Index depth, BlockKind kind, const DmsaConfig& dmsa_template = {},
                              std::uint64_t seed = 0) {
  return build_network<Scalar>(NetworkSpec::for_depth(depth, kind), dmsa_template, seed);
}

// ---- Cost accounting -------------------------------------------------------

/// mac counts one multiply-accumulate as one operation; two_flop doubles
/// every multiply-accumulate term. Per-element rates are the same in both.
enum class FlopConvention { mac, two_flop };

/// Per-element operation rates used for non-GEMM layers.
struct CostRates {
  static constexpr Index norm = 2;     // scale and shift
  static constexpr Index act = 1;      // relu or sigmoid
  static constexpr Index softmax = 3;  // exp, accumulate, divide
  static constexpr Index eltwise = 1;  // add or mul
  static constexpr Index pool = 1;     // per input element of a window read
};

struct LayerCost {
  std::string name;
  std::string category;  // conv, fc, norm, act, pool, attention, softmax, eltwise
  Index params = 0;
  Index flops = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  Index input_resolution = 224;
  FlopConvention convention = FlopConvention::mac;

  Index total_params() const;
  Index total_flops() const;
  /// Totals per category, in first-seen order.
  std::vector<std::pair<std::string, Index>> flops_by_category() const;
};

template <typename Scalar>
CostReport cost_report(const Network<Scalar>& net, Index resolution = 224,
                       FlopConvention convention = FlopConvention::mac);

template <typename Scalar>
CostReport count_params(const Network<Scalar>& net) {
  return cost_report(net, 224);
}

template <typename Scalar>
CostReport count_flops(const Network<Scalar>& net, Index resolution, FlopConvention convention = FlopConvention::mac) {
  return cost_report(net, resolution, convention);
}

struct ReportRow {
  std::string name;
  Index params_a = 0, params_b = 0, flops_a = 0, flops_b = 0;
  Index params_delta() const { return params_b - params_a; }
  Index flops_delta() const { return flops_b - flops_a; }
};

struct ReportDiff {
  std::vector<ReportRow> rows;  // layer names of a, then names only in b
  ReportRow totals;
};

ReportDiff compare_report(const CostReport& a, const CostReport& b);

struct TargetGap {
  double actual = 0, target = 0;
  double signed_percent() const { return 100.0 * (actual - target) / target; }
};

/// Published totals: ResNet-50 25.56M / 4.12G, ResNet-101 44.55M / 7.85G,
/// DMSANet-50 26.25M / 3.44G.
struct PublishedCost {
  double params_millions;
  double gflops;
};
PublishedCost published_cost(Index depth, BlockKind kind);

/// Cost of the DMSA block alone at `spatial` x `spatial` output.
CostReport dmsa_block_cost(const DmsaConfig& cfg, Index in_spatial, const std::string& prefix = "dmsa",
                           FlopConvention convention = FlopConvention::mac);

// ---- Implementation --------------------------------------------------------

template <typename Scalar>
template <typename Self, typename F>
void Network<Scalar>::visit(Self& s, F& f, bool buffers) {
  auto bn = [&](const std::string& p, auto& b) {
    f(p + ".gamma", b.gamma);
    f(p + ".beta", b.beta);
    if (buffers) {
      f(p + ".running_mean", b.running_mean);
      f(p + ".running_var", b.running_var);
    }
  };
  f(std::string("stem.conv.weight"), s.stem.weight);
  bn("stem.bn", s.stem_bn);
  for (auto& b : s.blocks) {
    const std::string p = b.name + ".";
    f(p + "conv1.weight", b.conv1.weight);
    bn(p + "bn1", b.bn1);
    if (b.kind == BlockKind::plain_bottleneck) {
      f(p + "conv2.weight", b.conv2.weight);
    } else {
      b.dmsa.for_each([&](const std::string& n, auto& t) { f(p + "dmsa." + n, t); });
    }
    bn(p + "bn2", b.bn2);
    f(p + "conv3.weight", b.conv3.weight);
    bn(p + "bn3", b.bn3);
    if (b.has_downsample) {
      f(p + "downsample.conv.weight", b.down.weight);
      bn(p + "downsample.bn", b.down_bn);
    }
  }
  f(std::string("head.fc.weight"), s.fc_weight);
  f(std::string("head.fc.bias"), s.fc_bias);
}

}  // namespace dmsa

#endif  // DMSA_NETWORK_HPP
