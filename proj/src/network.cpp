#include "dmsa/network.hpp"

#include <random>

namespace dmsa {

const char* to_string(BlockKind k) { return k == BlockKind::plain_bottleneck ? "plain" : "dmsa"; }

BlockKind parse_block_kind(std::string_view s) {
  if (s == "plain" || s == "plain_bottleneck") return BlockKind::plain_bottleneck;
  if (s == "dmsa" || s == "dmsa_bottleneck") return BlockKind::dmsa_bottleneck;
  throw UnknownVariant("unknown block_kind '" + std::string(s) + "'");
}

NetworkSpec NetworkSpec::for_depth(Index depth, BlockKind kind) {
  NetworkSpec s;
  s.depth = depth;
  s.kind = kind;
  Index third;
  if (depth == 50) {
    third = 6;
  } else if (depth == 101) {
    third = 23;
  } else {
    throw InvalidConfig("unsupported depth " + std::to_string(depth) + " (expected 50 or 101)");
  }
  s.stages = {{3, 64, 256, 56}, {4, 128, 512, 28}, {third, 256, 1024, 14}, {3, 512, 2048, 7}};
  return s;
}

Index NetworkSpec::total_blocks() const {
  Index n = 0;
  for (const auto& st : stages) n += st.blocks;
  return n;
}

template <typename Scalar>
BatchNorm<Scalar> BatchNorm<Scalar>::identity(Index channels) {
  return {Tensor<Scalar>::ones(Shape{channels}), Tensor<Scalar>::zeros(Shape{channels}),
          Tensor<Scalar>::zeros(Shape{channels}), Tensor<Scalar>::ones(Shape{channels})};
}

template <typename Scalar>
Tensor<Scalar> Bottleneck<Scalar>::forward(const Tensor<Scalar>& x) const {
  Tensor<Scalar> h = relu(bn1(conv1(x)));
  h = kind == BlockKind::plain_bottleneck ? conv2(h) : dmsa_forward(h, dmsa_cfg, dmsa);
  h = bn3(conv3(relu(bn2(h))));
  const Tensor<Scalar> shortcut = has_downsample ? down_bn(down(x)) : x;
  return relu(add(h, shortcut));
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& x, std::vector<Activation<Scalar>>* trace) const {
  if (x.rank() != 4 || x.dim(1) != spec.in_channels) {
    throw ShapeMismatch("network input must be [N," + std::to_string(spec.in_channels) + ",H,W], got " +
                        x.shape().str());
  }
  auto record = [&](const char* name, const Tensor<Scalar>& t) {
    if (trace != nullptr) trace->push_back({name, t});
  };
  Tensor<Scalar> h = relu(stem_bn(stem(x)));
  record("stem", h);
  h = max_pool2d(h, spec.pool_kernel, spec.pool_stride, spec.pool_padding);
  record("pool", h);
  std::size_t next = 0;
  for (std::size_t st = 0; st < spec.stages.size(); ++st) {
    for (Index b = 0; b < spec.stages[st].blocks; ++b) h = blocks[next++].forward(h);
    const std::string name = "stage" + std::to_string(st + 1);
    record(name.c_str(), h);
  }
  const Tensor<Scalar> pooled = global_avg_pool(h);
  Tensor<Scalar> logits = fully_connected(pooled.reshaped(Shape{h.dim(0), h.dim(1)}), fc_weight, fc_bias);
  record("logits", logits);
  return logits;
}

template <typename Scalar>
Network<Scalar> build_network(const NetworkSpec& spec, const DmsaConfig& dmsa_template, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto he = [&](Shape s) {
    const Index fan_in = s[1] * s[2] * s[3];
    return Tensor<Scalar>::normal(std::move(s), rng, static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in))));
  };
  auto conv = [&](Index cout, Index cin, Index k, Index stride, Index pad) {
    return ConvUnit<Scalar>{he(Shape{cout, cin, k, k}), stride, pad, 1};
  };

  Network<Scalar> net;
  net.spec = spec;
  net.dmsa_template = dmsa_template;
  net.stem = conv(spec.stem_width, spec.in_channels, spec.stem_kernel, spec.stem_stride, (spec.stem_kernel - 1) / 2);
  net.stem_bn = BatchNorm<Scalar>::identity(spec.stem_width);
  Index in = spec.stem_width;
  for (std::size_t st = 0; st < spec.stages.size(); ++st) {
    const StageSpec& s = spec.stages[st];
    for (Index b = 0; b < s.blocks; ++b) {
      Bottleneck<Scalar> blk;
      blk.name = "stage" + std::to_string(st + 1) + ".block" + std::to_string(b);
      blk.kind = spec.kind;
      blk.in_width = in;
      blk.inner_width = s.inner_width;
      blk.out_width = s.out_width;
      blk.stride = (b == 0 && st > 0) ? 2 : 1;
      blk.conv1 = conv(s.inner_width, in, 1, 1, 0);
      blk.bn1 = BatchNorm<Scalar>::identity(s.inner_width);
      if (spec.kind == BlockKind::plain_bottleneck) {
        blk.conv2 = conv(s.inner_width, s.inner_width, 3, blk.stride, 1);
      } else {
        blk.dmsa_cfg = dmsa_template;
        blk.dmsa_cfg.channels = s.inner_width;
        blk.dmsa_cfg.stride = blk.stride;
        try {
          blk.dmsa_cfg.validate();
        } catch (const InvalidConfig& e) {
          throw InvalidConfig(blk.name + ": " + e.what());
        }
        blk.dmsa = DmsaParams<Scalar>::random(blk.dmsa_cfg, rng);
      }
      blk.bn2 = BatchNorm<Scalar>::identity(s.inner_width);
      blk.conv3 = conv(s.out_width, s.inner_width, 1, 1, 0);
      blk.bn3 = BatchNorm<Scalar>::identity(s.out_width);
      blk.has_downsample = blk.stride != 1 || in != s.out_width;
      if (blk.has_downsample) {
        blk.down = conv(s.out_width, in, 1, blk.stride, 0);
        blk.down_bn = BatchNorm<Scalar>::identity(s.out_width);
      }
      net.blocks.push_back(std::move(blk));
      in = s.out_width;
    }
  }
  net.fc_weight = Tensor<Scalar>::normal(Shape{in, spec.num_classes}, rng, Scalar(0.01));
  net.fc_bias = Tensor<Scalar>::zeros(Shape{spec.num_classes});
  return net;
}

// ---- Cost accounting -------------------------------------------------------

Index CostReport::total_params() const {
  Index n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

Index CostReport::total_flops() const {
  Index n = 0;
  for (const auto& l : layers) n += l.flops;
  return n;
}

std::vector<std::pair<std::string, Index>> CostReport::flops_by_category() const {
  std::vector<std::pair<std::string, Index>> out;
  for (const auto& l : layers) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == l.category; });
    if (it == out.end()) {
      out.emplace_back(l.category, l.flops);
    } else {
      it->second += l.flops;
    }
  }
  return out;
}

namespace {

class CostBuilder {
 public:
  CostBuilder(CostReport& r) : r_(r), mac_scale_(r.convention == FlopConvention::two_flop ? 2 : 1) {}

  void add(std::string name, const char* category, Index params, Index macs, Index elementwise = 0) {
    r_.layers.push_back({std::move(name), category, params, macs * mac_scale_ + elementwise});
  }

  void conv(const std::string& name, Index cout, Index cin_per_group, Index k, Index out_hw, Index params = -1) {
    const Index w = cout * cin_per_group * k * k;
    add(name, "conv", params < 0 ? w : params, w * out_hw);
  }
  void norm(const std::string& name, Index c, Index hw, Index params) {
    add(name, "norm", params, 0, CostRates::norm * c * hw);
  }
  void act(const std::string& name, Index elems) { add(name, "act", 0, 0, CostRates::act * elems); }

 private:
  CostReport& r_;
  Index mac_scale_;
};

Index spatial_after(Index in, Index k, Index stride, Index pad) { return detail::conv_out_extent(in, k, stride, pad); }

void dmsa_cost_into(CostBuilder& cb, const DmsaConfig& cfg, Index in_spatial, const std::string& p) {
  const DmsaParams<double> shapes = DmsaParams<double>::zeros(cfg);
  const Index c = cfg.channels, w = cfg.split_width();
  const auto ks = cfg.kernels();
  const auto gs = cfg.conv_groups();
  const Index side = spatial_after(in_spatial, ks[0], cfg.stride, (ks[0] - 1) / 2);
  const Index hw = side * side;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    cb.conv(p + ".extract." + std::to_string(i), w, w / gs[i], ks[i], hw);
  }
  if (cfg.fc_variant != FcVariant::none) {
    const Index half = c / 2;  // X_k2 halves over all groups
    const Index sub = c / (2 * cfg.sa_groups);
    cb.add(p + ".sa.norm", "norm", 2 * sub, 0, CostRates::norm * half * hw);
    if (cfg.fc_variant == FcVariant::affine_gate) {
      cb.add(p + ".sa.gate", "eltwise", 2 * sub, half * hw);
    } else {
      cb.add(p + ".sa.gate", "conv", sub * sub + sub, cfg.sa_groups * sub * sub * hw, half * hw);
    }
    cb.add(p + ".sa.sigmoid", "act", 0, 0, 2 * CostRates::act * half * hw);
  }
  cb.add(p + ".channel.attn", "attention", bundle_numel(shapes.channel), 2 * c * c * hw, 2 * c * hw);
  cb.add(p + ".channel.softmax", "softmax", 0, 0, CostRates::softmax * c * c);
  cb.add(p + ".spatial.proj", "conv", 3 * c * c, 3 * c * c * hw);
  cb.add(p + ".spatial.attn", "attention", 1, 2 * c * hw * hw, 2 * c * hw);
  cb.add(p + ".spatial.softmax", "softmax", 0, 0, CostRates::softmax * hw * hw);
  if (cfg.branch_agg == BranchAgg::concat_halve) {
    cb.conv(p + ".aggregate", c, 2 * c, 1, hw);
    // SE weights exist but are unused under concat_halve.
    cb.add(p + ".se", "fc", bundle_numel(shapes.se), 0);
  } else {
    const Index hidden = c / cfg.reduction;
    cb.add(p + ".se", "fc", bundle_numel(shapes.se), 2 * 2 * c * hidden, 2 * (CostRates::pool * c * hw + hidden + c));
    cb.add(p + ".aggregate", "eltwise", 0, 0, CostRates::softmax * 2 * c + 3 * CostRates::eltwise * c * hw);
  }
}

}  // namespace

CostReport dmsa_block_cost(const DmsaConfig& cfg, Index in_spatial, const std::string& prefix,
                           FlopConvention convention) {
  cfg.validate();
  CostReport r;
  r.input_resolution = in_spatial;
  r.convention = convention;
  CostBuilder cb(r);
  dmsa_cost_into(cb, cfg, in_spatial, prefix);
  return r;
}

template <typename Scalar>
CostReport cost_report(const Network<Scalar>& net, Index resolution, FlopConvention convention) {
  const NetworkSpec& s = net.spec;
  CostReport r;
  r.input_resolution = resolution;
  r.convention = convention;
  CostBuilder cb(r);

  Index side = spatial_after(resolution, s.stem_kernel, s.stem_stride, (s.stem_kernel - 1) / 2);
  cb.conv("stem.conv", s.stem_width, s.in_channels, s.stem_kernel, side * side);
  cb.norm("stem.bn", s.stem_width, side * side, 2 * s.stem_width);
  cb.act("stem.relu", s.stem_width * side * side);
  side = spatial_after(side, s.pool_kernel, s.pool_stride, s.pool_padding);
  cb.add("stem.pool", "pool", 0, 0, CostRates::pool * s.pool_kernel * s.pool_kernel * s.stem_width * side * side);

  for (const auto& b : net.blocks) {
    const std::string p = b.name + ".";
    const Index in_hw = side * side;
    const Index out_side = spatial_after(side, 3, b.stride, 1);
    const Index out_hw = out_side * out_side;
    cb.conv(p + "conv1", b.inner_width, b.in_width, 1, in_hw);
    cb.norm(p + "bn1", b.inner_width, in_hw, 2 * b.inner_width);
    cb.act(p + "relu1", b.inner_width * in_hw);
    if (b.kind == BlockKind::plain_bottleneck) {
      cb.conv(p + "conv2", b.inner_width, b.inner_width, 3, out_hw);
    } else {
      dmsa_cost_into(cb, b.dmsa_cfg, side, p + "dmsa");
    }
    cb.norm(p + "bn2", b.inner_width, out_hw, 2 * b.inner_width);
    cb.act(p + "relu2", b.inner_width * out_hw);
    cb.conv(p + "conv3", b.out_width, b.inner_width, 1, out_hw);
    cb.norm(p + "bn3", b.out_width, out_hw, 2 * b.out_width);
    if (b.has_downsample) {
      cb.conv(p + "downsample.conv", b.out_width, b.in_width, 1, out_hw);
      cb.norm(p + "downsample.bn", b.out_width, out_hw, 2 * b.out_width);
    }
    cb.add(p + "residual", "eltwise", 0, 0, CostRates::eltwise * b.out_width * out_hw);
    cb.act(p + "relu3", b.out_width * out_hw);
    side = out_side;
  }
  const Index feat = net.fc_weight.dim(0);
  cb.add("head.pool", "pool", 0, 0, CostRates::pool * feat * side * side);
  cb.add("head.fc", "fc", net.fc_weight.numel() + net.fc_bias.numel(), net.fc_weight.numel(), net.fc_bias.numel());
  return r;
}

ReportDiff compare_report(const CostReport& a, const CostReport& b) {
  ReportDiff d;
  auto find = [](const CostReport& r, const std::string& name) -> const LayerCost* {
    for (const auto& l : r.layers)
      if (l.name == name) return &l;
    return nullptr;
  };
  for (const auto& la : a.layers) {
    ReportRow row{la.name, la.params, 0, la.flops, 0};
    if (const LayerCost* lb = find(b, la.name)) {
      row.params_b = lb->params;
      row.flops_b = lb->flops;
    }
    d.rows.push_back(row);
  }
  for (const auto& lb : b.layers) {
    if (find(a, lb.name) == nullptr) d.rows.push_back({lb.name, 0, lb.params, 0, lb.flops});
  }
  d.totals = {"total", a.total_params(), b.total_params(), a.total_flops(), b.total_flops()};
  return d;
}

PublishedCost published_cost(Index depth, BlockKind kind) {
  if (depth == 50) return kind == BlockKind::plain_bottleneck ? PublishedCost{25.56, 4.12} : PublishedCost{26.25, 3.44};
  if (depth == 101 && kind == BlockKind::plain_bottleneck) return {44.55, 7.85};
  throw InvalidConfig("no published cost for depth " + std::to_string(depth) + " " + to_string(kind));
}

#define DMSA_INSTANTIATE_NETWORK(S)                                                              \
  template struct BatchNorm<S>;                                                                  \
  template struct Bottleneck<S>;                                                                 \
  template class Network<S>;                                                                     \
  template Network<S> build_network(const NetworkSpec&, const DmsaConfig&, std::uint64_t);       \
  template CostReport cost_report(const Network<S>&, Index, FlopConvention);

DMSA_INSTANTIATE_NETWORK(float)
DMSA_INSTANTIATE_NETWORK(double)

}  // namespace dmsa
