#include "dmsa/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmsa/backward.hpp"
#include "dmsa/train.hpp"

namespace dmsa {

std::vector<TensorD> numeric_gradient(const std::function<double()>& f, const ParamSet<double>& params, double step) {
  if (!(step > 0)) throw InvalidConfig("finite-difference step must be positive");
  const double base = f();
  if (!std::isfinite(base)) throw NonFiniteObjective("objective is not finite at the expansion point");
  std::vector<TensorD> grads;
  grads.reserve(params.size());
  for (const auto& e : params) {
    TensorD& t = *e.tensor;
    TensorD g(t.shape());
    for (Index i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = f();
      t[i] = saved - step;
      const double down = f();
      t[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteObjective("objective is not finite when perturbing " + e.name + "[" + std::to_string(i) + "]");
      }
      g[i] = (up - down) / (2 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double relative_error(double numeric, double analytic) {
  return std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed(); });
}

const GradCheckEntry* GradCheckReport::worst() const {
  const GradCheckEntry* w = nullptr;
  for (const auto& e : entries)
    if (w == nullptr || e.max_rel > w->max_rel) w = &e;
  return w;
}

void GradCheckReport::append(const GradCheckReport& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

GradCheckReport compare_gradients(const std::vector<std::string>& names, const std::vector<TensorD>& analytic,
                                  const std::vector<TensorD>& numeric, double tolerance,
                                  const GradCheckOptions& options) {
  if (names.size() != analytic.size() || names.size() != numeric.size()) {
    throw ShapeMismatch("compare_gradients: " + std::to_string(names.size()) + " names, " +
                        std::to_string(analytic.size()) + " analytic, " + std::to_string(numeric.size()) + " numeric");
  }
  GradCheckReport r;
  r.step = options.step;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (analytic[i].shape() != numeric[i].shape()) {
      throw ShapeMismatch("gradient of " + names[i] + ": analytic " + analytic[i].shape().str() + " vs numeric " +
                          numeric[i].shape().str());
    }
    TensorD a = analytic[i];
    if (!options.inject_fault.empty() && options.inject_fault == names[i]) {
      a.vec() *= 1.01;
      a[0] += 1e-3;
    }
    GradCheckEntry e{names[i], 0, 0, a.numel(), tolerance};
    for (Index j = 0; j < a.numel(); ++j) {
      e.max_rel = std::max(e.max_rel, relative_error(numeric[i][j], a[j]));
      e.max_abs = std::max(e.max_abs, std::abs(numeric[i][j] - a[j]));
    }
    r.entries.push_back(std::move(e));
  }
  return r;
}

GradCheckReport run_grad_case(GradCase c, std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const TensorD probe = c.forward(c.vars);
  const TensorD weights = TensorD::uniform(probe.shape(), rng);
  ParamSet<double> set;
  for (std::size_t i = 0; i < c.vars.size(); ++i) set.add(c.var_names[i], c.vars[i]);
  const auto objective = [&] { return c.forward(c.vars).vec().dot(weights.vec()); };
  const auto numeric = numeric_gradient(objective, set, options.step);
  const auto analytic = c.backward(c.vars, weights);
  std::vector<std::string> names;
  for (const auto& n : c.var_names) names.push_back(c.name + "." + n);
  return compare_gradients(names, analytic, numeric, c.tolerance, options);
}

namespace {

using Vars = std::vector<TensorD>;

TensorD randn(Shape s, std::mt19937_64& rng, double sd = 1.0) { return TensorD::normal(std::move(s), rng, sd); }

// Values whose magnitude stays away from the relu kink by more than the step.
TensorD away_from_zero(Shape s, std::mt19937_64& rng) {
  TensorD t = randn(std::move(s), rng);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (Index i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < 1e-2) t[i] = (t[i] < 0 ? -1 : 1) * u(rng);
  }
  return t;
}

// Distinct values spaced 0.05 apart so no pooling window has a near tie.
TensorD distinct_values(Shape s, std::mt19937_64& rng) {
  TensorD t(std::move(s));
  std::vector<Index> perm(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Index>(i);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (Index i = 0; i < t.numel(); ++i) t[i] = 0.05 * static_cast<double>(perm[static_cast<std::size_t>(i)]) - 1.0;
  return t;
}

TensorD positive(Shape s, std::mt19937_64& rng) {
  return TensorD::uniform(std::move(s), rng, 0.5, 1.5);
}

GradCase sa_case(const std::string& name, NormVariant norm, FcVariant fc, std::mt19937_64& rng) {
  const Index c = 4;
  SaUnitParams<double> p = SaUnitParams<double>::init(c, fc);
  p.for_each([&](const std::string&, TensorD& t) { t = randn(t.shape(), rng, 0.7); });
  GradCase g;
  g.name = name;
  g.var_names = {"x"};
  g.vars = {randn(Shape{2, c, 3, 3}, rng)};
  p.for_each([&](const std::string& n, TensorD& t) {
    g.var_names.push_back(n);
    g.vars.push_back(t);
  });
  auto unpack = [p](const Vars& v) {
    SaUnitParams<double> q = p;
    std::size_t i = 1;
    q.for_each([&](const std::string&, TensorD& t) { t = v[i++]; });
    return q;
  };
  g.forward = [=](const Vars& v) { return sa_spatial_unit(v[0], unpack(v), norm, fc); };
  g.backward = [=](const Vars& v, const TensorD& dy) {
    auto r = sa_spatial_unit_backward(v[0], unpack(v), norm, fc, dy);
    Vars out{r.dx};
    r.dp.for_each([&](const std::string&, TensorD& t) { out.push_back(t); });
    return out;
  };
  return g;
}

}  // namespace

std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCase> cases;

  cases.push_back({"matmul", {"a", "b"}, {randn(Shape{3, 4}, rng), randn(Shape{4, 5}, rng)},
                   [](const Vars& v) { return matmul(v[0], v[1]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = matmul_backward(v[0], v[1], dy);
                     return Vars{g.da, g.db};
                   }});

  cases.push_back({"conv2d_grouped", {"x", "w", "bias"},
                   {randn(Shape{2, 4, 5, 5}, rng), randn(Shape{6, 2, 3, 3}, rng, 0.5), randn(Shape{6}, rng)},
                   [](const Vars& v) { return conv2d(v[0], v[1], v[2], 2, 1, 2); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = conv2d_backward(v[0], v[1], dy, 2, 1, 2, true);
                     return Vars{g.dx, g.dw, g.dbias};
                   }});

  cases.push_back({"conv2d", {"x", "w"}, {randn(Shape{1, 3, 6, 6}, rng), randn(Shape{2, 3, 3, 3}, rng, 0.5)},
                   [](const Vars& v) { return conv2d(v[0], v[1], TensorD(), 1, 0, 1); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = conv2d_backward(v[0], v[1], dy, 1, 0, 1, false);
                     return Vars{g.dx, g.dw};
                   }});

  cases.push_back({"softmax", {"x"}, {randn(Shape{2, 5}, rng)}, [](const Vars& v) { return softmax(v[0], 1); },
                   [](const Vars& v, const TensorD& dy) { return Vars{softmax_backward(softmax(v[0], 1), dy, 1)}; }});

  cases.push_back({"softmax_mid_axis", {"x"}, {randn(Shape{2, 3, 4}, rng)},
                   [](const Vars& v) { return softmax(v[0], 1); },
                   [](const Vars& v, const TensorD& dy) { return Vars{softmax_backward(softmax(v[0], 1), dy, 1)}; }});

  cases.push_back({"global_avg_pool", {"x"}, {randn(Shape{2, 3, 4, 4}, rng)},
                   [](const Vars& v) { return global_avg_pool(v[0]); },
                   [](const Vars& v, const TensorD& dy) { return Vars{global_avg_pool_backward(v[0].shape(), dy)}; }});

  cases.push_back({"instance_norm", {"x", "gamma", "beta"},
                   {randn(Shape{2, 3, 4, 4}, rng), randn(Shape{3}, rng), randn(Shape{3}, rng)},
                   [](const Vars& v) { return instance_norm(v[0], v[1], v[2]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = instance_norm_backward(v[0], v[1], dy);
                     return Vars{g.dx, g.dgamma, g.dbeta};
                   }});

  cases.push_back({"group_norm", {"x", "gamma", "beta"},
                   {randn(Shape{2, 4, 3, 3}, rng), randn(Shape{4}, rng), randn(Shape{4}, rng)},
                   [](const Vars& v) { return group_norm(v[0], 2, v[1], v[2]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = group_norm_backward(v[0], 2, v[1], dy);
                     return Vars{g.dx, g.dgamma, g.dbeta};
                   }});

  {
    const TensorD mean = randn(Shape{3}, rng), var = positive(Shape{3}, rng);
    cases.push_back({"batch_norm_inference", {"x", "gamma", "beta"},
                     {randn(Shape{2, 3, 3, 3}, rng), randn(Shape{3}, rng), randn(Shape{3}, rng)},
                     [=](const Vars& v) { return batch_norm_inference(v[0], v[1], v[2], mean, var); },
                     [=](const Vars& v, const TensorD& dy) {
                       auto g = batch_norm_inference_backward(v[0], v[1], mean, var, dy);
                       return Vars{g.dx, g.dgamma, g.dbeta};
                     }});
  }

  cases.push_back({"add_broadcast", {"a", "b"}, {randn(Shape{2, 3, 4, 4}, rng), randn(Shape{1, 3, 1, 1}, rng)},
                   [](const Vars& v) { return add(v[0], v[1]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = add_backward(v[0].shape(), v[1].shape(), dy);
                     return Vars{g.da, g.db};
                   }});

  cases.push_back({"mul_broadcast", {"a", "b"}, {randn(Shape{2, 3, 4, 4}, rng), randn(Shape{1, 3, 1, 1}, rng)},
                   [](const Vars& v) { return mul(v[0], v[1]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = mul_backward(v[0], v[1], dy);
                     return Vars{g.da, g.db};
                   }});

  cases.push_back({"scale", {"x"}, {randn(Shape{2, 3}, rng)}, [](const Vars& v) { return scale(v[0], 0.7); },
                   [](const Vars&, const TensorD& dy) { return Vars{scale(dy, 0.7)}; }});

  cases.push_back({"relu", {"x"}, {away_from_zero(Shape{2, 3, 3, 3}, rng)}, [](const Vars& v) { return relu(v[0]); },
                   [](const Vars& v, const TensorD& dy) { return Vars{relu_backward(v[0], dy)}; }});

  cases.push_back({"sigmoid", {"x"}, {randn(Shape{2, 3, 3, 3}, rng, 2.0)},
                   [](const Vars& v) { return sigmoid(v[0]); },
                   [](const Vars& v, const TensorD& dy) { return Vars{sigmoid_backward(sigmoid(v[0]), dy)}; }});

  {
    const std::vector<Index> axes{2, 0, 1};
    cases.push_back({"transpose", {"x"}, {randn(Shape{2, 3, 4}, rng)},
                     [=](const Vars& v) { return transpose(v[0], axes); },
                     [=](const Vars&, const TensorD& dy) { return Vars{transpose_backward(axes, dy)}; }});
  }

  cases.push_back({"concat", {"a", "b"}, {randn(Shape{2, 2, 3, 3}, rng), randn(Shape{2, 3, 3, 3}, rng)},
                   [](const Vars& v) { return concat(v, 1); },
                   [](const Vars& v, const TensorD& dy) {
                     return concat_backward(std::vector<Shape>{v[0].shape(), v[1].shape()}, dy, 1);
                   }});

  cases.push_back({"max_pool2d", {"x"}, {distinct_values(Shape{1, 2, 5, 5}, rng)},
                   [](const Vars& v) { return max_pool2d(v[0], 3, 2, 1); },
                   [](const Vars& v, const TensorD& dy) { return Vars{max_pool2d_backward(v[0], dy, 3, 2, 1)}; }});

  cases.push_back({"fully_connected", {"x", "w", "b"},
                   {randn(Shape{3, 4}, rng), randn(Shape{4, 5}, rng), randn(Shape{5}, rng)},
                   [](const Vars& v) { return fully_connected(v[0], v[1], v[2]); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = fully_connected_backward(v[0], v[1], dy, true);
                     return Vars{g.dx, g.dw, g.db};
                   }});

  cases.push_back({"se_weight", {"x", "w0", "w1"},
                   {randn(Shape{2, 8, 3, 3}, rng), away_from_zero(Shape{2, 8}, rng), randn(Shape{8, 2}, rng)},
                   [](const Vars& v) {
                     SeDescriptorParams<double> p{v[1], v[2], 4};
                     return se_weight(v[0], p);
                   },
                   [](const Vars& v, const TensorD& dy) {
                     SeDescriptorParams<double> p{v[1], v[2], 4};
                     auto g = se_weight_backward(v[0], p, dy);
                     return Vars{g.dx, g.dp.w0, g.dp.w1};
                   }});

  cases.push_back({"channel_branch", {"a", "beta"}, {randn(Shape{2, 3, 4, 4}, rng, 0.5), TensorD(Shape{1}, {0.7})},
                   [](const Vars& v) { return channel_branch(v[0], ChannelBranchParams<double>{v[1]}); },
                   [](const Vars& v, const TensorD& dy) {
                     auto g = channel_branch_backward(v[0], ChannelBranchParams<double>{v[1]}, dy);
                     return Vars{g.da, g.dp.beta};
                   }});

  {
    auto unpack = [](const Vars& v) { return SpatialBranchParams<double>{v[2], v[3], v[4], v[5]}; };
    cases.push_back({"spatial_branch", {"source", "residual", "wb", "wc", "wd", "alpha"},
                     {randn(Shape{2, 3, 3, 3}, rng, 0.7), randn(Shape{2, 3, 3, 3}, rng),
                      randn(Shape{3, 3, 1, 1}, rng, 0.6), randn(Shape{3, 3, 1, 1}, rng, 0.6),
                      randn(Shape{3, 3, 1, 1}, rng, 0.6), TensorD(Shape{1}, {0.3})},
                     [=](const Vars& v) { return spatial_branch(v[0], v[1], unpack(v)); },
                     [=](const Vars& v, const TensorD& dy) {
                       auto g = spatial_branch_backward(v[0], v[1], unpack(v), dy);
                       return Vars{g.dsource, g.dresidual, g.dp.wb, g.dp.wc, g.dp.wd, g.dp.alpha};
                     }});
  }

  cases.push_back(sa_case("sa_unit_instance", NormVariant::instance, FcVariant::affine_gate, rng));
  cases.push_back(sa_case("sa_unit_batch", NormVariant::batch, FcVariant::affine_gate, rng));
  cases.push_back(sa_case("sa_unit_group", NormVariant::group, FcVariant::affine_gate, rng));
  cases.push_back(sa_case("sa_unit_shuffle", NormVariant::shuffle, FcVariant::affine_gate, rng));
  cases.push_back(sa_case("sa_unit_conv1x1", NormVariant::instance, FcVariant::conv1x1, rng));

  cases.push_back({"channel_shuffle", {"x"}, {randn(Shape{1, 6, 2, 2}, rng)},
                   [](const Vars& v) { return channel_shuffle(v[0], 2); },
                   [](const Vars&, const TensorD& dy) { return Vars{channel_shuffle_backward(dy, 2)}; }});
  return cases;
}

GradCheckReport check_primitives(std::uint64_t seed, const GradCheckOptions& options) {
  GradCheckReport r;
  r.step = options.step;
  for (auto& c : primitive_grad_cases(seed)) r.append(run_grad_case(std::move(c), seed, options));
  return r;
}

DmsaConfig smallest_block_config() {
  DmsaConfig c;
  c.channels = 16;
  c.splits = 2;
  c.sa_groups = 2;
  return c;
}

void perturb_for_check(DmsaParams<double>& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 0.8);
  std::bernoulli_distribution sign(0.5);
  auto signed_mag = [&] { return (sign(rng) ? 1.0 : -1.0) * mag(rng); };
  p.spatial.alpha[0] = signed_mag();
  p.channel.beta[0] = signed_mag();
  p.sa.for_each([&](const std::string& name, TensorD& t) {
    for (Index i = 0; i < t.numel(); ++i) t[i] = (name == "norm_gamma" ? 1.0 : 0.0) + signed_mag();
  });
}

namespace {

constexpr int kDrawAttempts = 64;

// Smallest |pre-activation| over every ReLU the objective passes through, and
// whether at least one SE hidden unit is live. Central differences straddling
// a kink, or a dead SE, make the comparison meaningless.
struct KinkProbe {
  double margin = std::numeric_limits<double>::infinity();
  bool se_live = true;

  void relu_input(const TensorD& pre) { margin = std::min(margin, pre.vec().cwiseAbs().minCoeff()); }
  void se_input(const TensorD& e, const SeDescriptorParams<double>& p) {
    const Index n = e.dim(0), c = e.dim(1), hidden = p.w0.dim(0);
    const TensorD gap = global_avg_pool(e);
    const TensorD::RowMatrix pre = gap.matrix(n, c) * p.w0.matrix(hidden, c).transpose();
    margin = std::min(margin, pre.cwiseAbs().minCoeff());
    se_live = se_live && pre.maxCoeff() > 0;
  }
  void block(const DmsaTrace<double>& t, const DmsaConfig& cfg, const DmsaParams<double>& p) {
    if (cfg.branch_agg != BranchAgg::softmax) return;
    se_input(t.e1, p.se);
    se_input(t.e2, p.se);
  }
  bool clear(double step) const { return se_live && margin > 10 * step; }
};

}  // namespace

GradCheckReport check_block(const DmsaConfig& cfg, Index spatial, std::uint64_t seed,
                            const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  DmsaParams<double> p;
  TensorD x, y0;
  for (int attempt = 0; attempt < kDrawAttempts; ++attempt) {
    p = DmsaParams<double>::random(cfg, rng);
    perturb_for_check(p, rng);
    x = TensorD::normal(Shape{1, cfg.channels, spatial, spatial}, rng);
    DmsaTrace<double> probe;
    y0 = dmsa_forward(x, cfg, p, &probe);
    KinkProbe k;
    k.block(probe, cfg, p);
    if (k.clear(options.step)) break;
  }
  const TensorD w = TensorD::uniform(y0.shape(), rng);

  ParamSet<double> set;
  set.add("dmsa.input", x);
  set.add_bundle("dmsa.", p);
  const auto numeric = numeric_gradient([&] { return dmsa_forward(x, cfg, p).vec().dot(w.vec()); }, set, options.step);

  DmsaTrace<double> trace;
  dmsa_forward(x, cfg, p, &trace);
  auto g = dmsa_backward(trace, cfg, p, w);
  std::vector<TensorD> analytic{g.dx};
  g.dp.for_each([&](const std::string&, TensorD& t) { analytic.push_back(t); });
  std::vector<std::string> names;
  for (const auto& e : set) names.push_back(e.name);
  return compare_gradients(names, analytic, numeric, kComposedTolerance, options);
}

GradCheckReport check_network(std::uint64_t seed, const GradCheckOptions& options) {
  TinyNetConfig cfg;
  auto net = TinyDmsaNet<double>::random(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  TensorD x;
  for (int attempt = 0; attempt < kDrawAttempts; ++attempt) {
    if (attempt > 0) net = TinyDmsaNet<double>::random(cfg, rng());
    perturb_for_check(net.dmsa, rng);
    net.conv_b = TensorD::normal(net.conv_b.shape(), rng, 0.1);
    x = TensorD::normal(Shape{2, cfg.in_channels, 6, 6}, rng);
    TinyDmsaNet<double>::Trace probe;
    net.forward(x, &probe);
    KinkProbe k;
    k.relu_input(probe.pre);
    k.block(probe.block, cfg.dmsa, net.dmsa);
    if (k.clear(options.step)) break;
  }
  const std::vector<int> labels{0, 1};

  ParamSet<double> set = collect_params<double>(net, "net.");
  const auto numeric =
      numeric_gradient([&] { return softmax_cross_entropy(net.forward(x), labels).loss; }, set, options.step);

  TinyDmsaNet<double>::Trace trace;
  const auto ce = softmax_cross_entropy(net.forward(x, &trace), labels);
  TinyDmsaNet<double> g = net.backward(trace, ce.dlogits);
  std::vector<TensorD> analytic;
  g.for_each([&](const std::string&, TensorD& t) { analytic.push_back(t); });
  std::vector<std::string> names;
  for (const auto& e : set) names.push_back(e.name);
  return compare_gradients(names, analytic, numeric, kComposedTolerance, options);
}

}  // namespace dmsa
