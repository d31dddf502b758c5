// dmsanet: cost reports, forward passes, gradient checks, toy training and
// weight files from the command line.
//
// Exit codes: 0 ok, 1 check failure, 2 config error, 3 shape error,
// 4 IO error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dmsa/grad_check.hpp"
#include "dmsa/io/config.hpp"
#include "dmsa/io/weights.hpp"
#include "dmsa/network.hpp"
#include "dmsa/parallel.hpp"
#include "dmsa/train.hpp"

namespace {

using namespace dmsa;

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kShapeError = 3, kIoError = 4 };

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

io::NetConfig config_or_default(const std::string& path) {
  return path.empty() ? io::NetConfig{} : io::load_net_config(path);
}

// ---- describe --------------------------------------------------------------

struct DescribeArgs {
  std::string config;
  double against = 0;
  Index resolution = 224;
  std::string convention = "mac";
  bool layers = true;
  bool compare = false;
};

int describe(const DescribeArgs& a) {
  const io::NetConfig cfg = config_or_default(a.config);
  const FlopConvention conv = a.convention == "2flop" ? FlopConvention::two_flop : FlopConvention::mac;
  const auto net = build_network<float>(cfg.depth, cfg.kind, cfg.dmsa, cfg.seed);
  const CostReport r = cost_report(net, a.resolution, conv);

  std::printf("network depth %ld, blocks %s, input %ldx%ld, convention %s\n", static_cast<long>(cfg.depth),
              to_string(cfg.kind), static_cast<long>(a.resolution), static_cast<long>(a.resolution),
              a.convention.c_str());
  if (a.layers) {
    std::printf("%-44s %-10s %12s %14s\n", "layer", "category", "params", "flops");
    for (const auto& l : r.layers) {
      std::printf("%-44s %-10s %12ld %14ld\n", l.name.c_str(), l.category.c_str(), static_cast<long>(l.params),
                  static_cast<long>(l.flops));
    }
  }
  std::printf("flops by category:\n");
  for (const auto& [cat, f] : r.flops_by_category()) {
    std::printf("  %-10s %s G\n", cat.c_str(), fmt("%.4f", static_cast<double>(f) / 1e9).c_str());
  }
  const double pm = static_cast<double>(r.total_params()) / 1e6;
  const double gf = static_cast<double>(r.total_flops()) / 1e9;
  std::printf("total params %ld (%sM)\n", static_cast<long>(r.total_params()), fmt("%.3f", pm).c_str());
  std::printf("total flops %ld (%sG)\n", static_cast<long>(r.total_flops()), fmt("%.3f", gf).c_str());
  try {
    const PublishedCost pub = published_cost(cfg.depth, cfg.kind);
    std::printf("gap vs published %sM params: %s%%\n", fmt("%.2f", pub.params_millions).c_str(),
                fmt("%+.2f", TargetGap{pm, pub.params_millions}.signed_percent()).c_str());
    if (a.resolution == 224 && conv == FlopConvention::mac) {
      std::printf("gap vs published %sG flops: %s%%\n", fmt("%.2f", pub.gflops).c_str(),
                  fmt("%+.2f", TargetGap{gf, pub.gflops}.signed_percent()).c_str());
    }
  } catch (const InvalidConfig&) {
  }
  if (a.against > 0) {
    std::printf("gap vs %sM params: %s%%\n", fmt("%.2f", a.against).c_str(),
                fmt("%+.2f", TargetGap{pm, a.against}.signed_percent()).c_str());
  }
  if (a.compare) {
    const auto base = build_network<float>(cfg.depth, BlockKind::plain_bottleneck, cfg.dmsa, cfg.seed);
    const ReportDiff d = compare_report(cost_report(base, a.resolution, conv), r);
    std::printf("comparison vs plain (changed rows):\n");
    for (const auto& row : d.rows) {
      if (row.params_delta() == 0 && row.flops_delta() == 0) continue;
      std::printf("  %-44s %+12ld %+14ld\n", row.name.c_str(), static_cast<long>(row.params_delta()),
                  static_cast<long>(row.flops_delta()));
    }
    std::printf("  %-44s %+12ld %+14ld\n", "total", static_cast<long>(d.totals.params_delta()),
                static_cast<long>(d.totals.flops_delta()));
  }
  return kOk;
}

// ---- forward / bench / init -----------------------------------------------

struct ForwardArgs {
  std::string config, weights, input = "random";
  std::optional<std::uint64_t> seed;
  Index resolution = 224;
  Index batch = 1;
  bool stats = false;
  Index iters = 10;
  std::string out;
  std::string precision = "f32";
};

Network<float> make_net(const ForwardArgs& a, const io::NetConfig& cfg) {
  auto net = build_network<float>(cfg.depth, cfg.kind, cfg.dmsa, a.seed.value_or(cfg.seed));
  if (!a.weights.empty()) {
    io::assign_from<float>(io::load_weights(a.weights), [&](auto&& f) { net.for_each_state(f); });
  }
  return net;
}

TensorF make_input(const ForwardArgs& a, const io::NetConfig& cfg) {
  if (a.input == "random") {
    std::mt19937_64 rng(a.seed.value_or(cfg.seed) + 0x5eed);
    return TensorF::normal(Shape{a.batch, 3, a.resolution, a.resolution}, rng);
  }
  const io::WeightFile f = io::load_weights(a.input);
  const io::NamedTensor* t = f.find("input");
  if (t == nullptr) throw ShapeMismatch("input file '" + a.input + "' has no tensor named 'input'");
  return std::visit([](const auto& v) { return v.template cast<float>(); }, t->value);
}

void print_activation(const std::string& name, const TensorF& t, bool stats) {
  std::printf("%-8s %s", name.c_str(), t.shape().str().c_str());
  if (stats) {
    const auto v = t.vec().cast<double>();
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().mean());
    std::printf(" mean=%s std=%s min=%s max=%s", fmt("%.6g", mean).c_str(), fmt("%.6g", sd).c_str(),
                fmt("%.6g", v.minCoeff()).c_str(), fmt("%.6g", v.maxCoeff()).c_str());
  }
  std::printf("\n");
}

int forward(const ForwardArgs& a) {
  const io::NetConfig cfg = config_or_default(a.config);
  const auto net = make_net(a, cfg);
  const TensorF x = make_input(a, cfg);
  std::vector<Activation<float>> trace;
  net.forward(x, &trace);
  for (const auto& act : trace) print_activation(act.name, act.value, a.stats);
  return kOk;
}

int bench(const ForwardArgs& a) {
  const io::NetConfig cfg = config_or_default(a.config);
  const auto net = make_net(a, cfg);
  const TensorF x = make_input(a, cfg);
  if (a.iters < 1) throw InvalidConfig("--iters must be positive");
  for (int i = 0; i < 3; ++i) net.forward(x);
  std::vector<double> ms;
  for (Index i = 0; i < a.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    net.forward(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    std::printf("iter %ld %s ms\n", static_cast<long>(i), fmt("%.3f", ms.back()).c_str());
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  const auto p95_idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size()))) - 1;
  std::printf("bench iters=%ld threads=%d median=%s ms p95=%s ms\n", static_cast<long>(a.iters), num_threads(),
              fmt("%.3f", median).c_str(), fmt("%.3f", ms[p95_idx]).c_str());
  return kOk;
}

int init(const ForwardArgs& a) {
  const io::NetConfig cfg = config_or_default(a.config);
  const std::uint64_t seed = a.seed.value_or(cfg.seed);
  io::WeightFile f;
  if (a.precision == "f64") {
    const auto net = build_network<double>(cfg.depth, cfg.kind, cfg.dmsa, seed);
    f = io::to_weight_file<double>([&](auto&& v) { net.for_each_state(v); });
  } else {
    const auto net = build_network<float>(cfg.depth, cfg.kind, cfg.dmsa, seed);
    f = io::to_weight_file<float>([&](auto&& v) { net.for_each_state(v); });
  }
  io::save_weights(a.out, f);
  std::printf("wrote %zu tensors to %s\n", f.tensors.size(), a.out.c_str());
  return kOk;
}

struct WeightsArgs {
  std::string path, out;
  bool list = false;
};

int weights(const WeightsArgs& a) {
  const io::WeightFile f = io::load_weights(a.path);
  Index total = 0;
  for (const auto& t : f.tensors) {
    total += t.shape().numel();
    if (a.list) std::printf("%-56s %s %s\n", t.name.c_str(), t.is_double() ? "f64" : "f32", t.shape().str().c_str());
  }
  std::printf("%zu tensors, %ld values\n", f.tensors.size(), static_cast<long>(total));
  if (!a.out.empty()) io::save_weights(a.out, f);
  return kOk;
}

// ---- gradcheck -------------------------------------------------------------

struct GradArgs {
  std::string config, scope = "op", fault;
  Index seeds = 5;
};

int gradcheck(const GradArgs& a) {
  if (a.scope != "op" && a.scope != "block" && a.scope != "network") {
    throw InvalidConfig("--scope must be op, block or network");
  }
  const io::NetConfig cfg = config_or_default(a.config);
  GradCheckOptions opt;
  opt.inject_fault = a.fault;
  GradCheckReport all;
  for (Index s = 0; s < a.seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    if (a.scope == "op") {
      all.append(check_primitives(seed, opt));
    } else if (a.scope == "block") {
      DmsaConfig c = smallest_block_config();
      c.norm_variant = cfg.dmsa.norm_variant;
      c.fc_variant = cfg.dmsa.fc_variant;
      c.branch_agg = cfg.dmsa.branch_agg;
      all.append(check_block(c, 4, seed, opt));
    } else {
      all.append(check_network(seed, opt));
    }
  }
  // Worst case per entry name across seeds, in first-seen order.
  std::vector<GradCheckEntry> worst;
  for (const auto& e : all.entries) {
    auto it = std::find_if(worst.begin(), worst.end(), [&](const auto& w) { return w.name == e.name; });
    if (it == worst.end()) {
      worst.push_back(e);
    } else if (e.max_rel > it->max_rel) {
      *it = e;
    }
  }
  if (!a.fault.empty() &&
      std::none_of(worst.begin(), worst.end(), [&](const auto& w) { return w.name == a.fault; })) {
    throw InvalidConfig("--inject-fault: no gradient entry named '" + a.fault + "' in scope " + a.scope);
  }
  for (const auto& e : worst) {
    std::printf("%s %-44s rel=%s abs=%s tol=%s\n", e.passed() ? "PASS" : "FAIL", e.name.c_str(),
                fmt("%.3e", e.max_rel).c_str(), fmt("%.3e", e.max_abs).c_str(), fmt("%.0e", e.tolerance).c_str());
  }
  const bool ok = all.passed();
  std::printf("gradcheck scope=%s seeds=%ld entries=%zu step=%s: %s\n", a.scope.c_str(), static_cast<long>(a.seeds),
              worst.size(), fmt("%.0e", opt.step).c_str(), ok ? "PASS" : "FAIL");
  if (!ok) {
    for (const auto& e : worst)
      if (!e.passed()) std::fprintf(stderr, "gradient mismatch in %s\n", e.name.c_str());
  }
  return ok ? kOk : kCheckFailed;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  TrainConfig train;
  Index samples = 500, resolution = 8, classes = 2;
  std::uint64_t seed = 0;
};

int train(TrainArgs a) {
  const io::NetConfig cfg = config_or_default(a.config);
  std::ofstream os(a.out, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + a.out + "' for writing");
  TinyNetConfig tc;
  tc.classes = a.classes;
  tc.dmsa.norm_variant = cfg.dmsa.norm_variant;
  tc.dmsa.fc_variant = cfg.dmsa.fc_variant;
  tc.dmsa.branch_agg = cfg.dmsa.branch_agg;
  const Dataset data = make_synthetic_dataset(a.samples, a.classes, a.resolution, a.seed);
  auto net = TinyDmsaNet<double>::random(tc, a.seed);
  a.train.seed = a.seed;
  const TrainResult r = train_toy(net, data, a.train);
  write_curve_csv(os, r.curve);
  if (!os) throw IoError("failed writing '" + a.out + "'");
  const EpochRecord& last = r.curve.back();
  std::printf("epochs %ld train_loss %s test_loss %s test_accuracy %s\n", static_cast<long>(last.epoch),
              fmt("%.6g", last.train_loss).c_str(), fmt("%.6g", last.test_loss).c_str(),
              fmt("%.4f", last.test_accuracy).c_str());
  return kOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const InvalidConfig& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const UnknownVariant& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const ShapeMismatch& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kShapeError;
  } catch (const InvalidGroups& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kShapeError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIoError;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIoError;
  } catch (const DivergenceDetected& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kCheckFailed;
  } catch (const NonFiniteObjective& e) {
    std::fprintf(stderr, "gradient check error: %s\n", e.what());
    return kCheckFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMSA network toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for tensor kernels")->check(CLI::PositiveNumber);

  std::function<int()> run;

  DescribeArgs da;
  auto* describe_cmd = app.add_subcommand("describe", "Per-layer parameter and FLOP report");
  describe_cmd->add_option("config", da.config, "Network config JSON");
  describe_cmd->add_option("--against", da.against, "Target parameter count in millions");
  describe_cmd->add_option("--resolution", da.resolution, "Input resolution")->check(CLI::PositiveNumber);
  describe_cmd->add_option("--convention", da.convention, "mac or 2flop")->check(CLI::IsMember({"mac", "2flop"}));
  describe_cmd->add_flag("!--no-layers", da.layers, "Print totals only");
  describe_cmd->add_flag("--compare", da.compare, "Diff against the plain network of the same depth");
  describe_cmd->callback([&] { run = [&] { return describe(da); }; });

  ForwardArgs fa;
  auto add_net_opts = [&](CLI::App* c) {
    c->add_option("config", fa.config, "Network config JSON");
    c->add_option("--weights", fa.weights, "Weight file to load");
    c->add_option("--seed", fa.seed, "Initialization and input seed");
    c->add_option("--input", fa.input, "'random' or a weight file holding a tensor named 'input'");
    c->add_option("--resolution", fa.resolution, "Input resolution")->check(CLI::PositiveNumber);
    c->add_option("--batch", fa.batch, "Batch size")->check(CLI::PositiveNumber);
  };
  auto* forward_cmd = app.add_subcommand("forward", "Run one forward pass");
  add_net_opts(forward_cmd);
  forward_cmd->add_flag("--stats", fa.stats, "Print mean, std, min and max per stage");
  forward_cmd->callback([&] { run = [&] { return forward(fa); }; });

  auto* bench_cmd = app.add_subcommand("bench", "Time forward passes after 3 warmups");
  add_net_opts(bench_cmd);
  bench_cmd->add_option("--iters", fa.iters, "Timed iterations");
  bench_cmd->callback([&] { run = [&] { return bench(fa); }; });

  auto* init_cmd = app.add_subcommand("init", "Write freshly initialized weights");
  init_cmd->add_option("config", fa.config, "Network config JSON");
  init_cmd->add_option("--seed", fa.seed, "Initialization seed");
  init_cmd->add_option("--out", fa.out, "Output weight file")->required();
  init_cmd->add_option("--precision", fa.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  init_cmd->callback([&] { run = [&] { return init(fa); }; });

  WeightsArgs wa;
  auto* weights_cmd = app.add_subcommand("weights", "Inspect or re-save a weight file");
  weights_cmd->add_option("path", wa.path, "Weight file")->required();
  weights_cmd->add_option("--out", wa.out, "Re-save to this path");
  weights_cmd->add_flag("--list", wa.list, "List tensors");
  weights_cmd->callback([&] { run = [&] { return weights(wa); }; });

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  grad_cmd->add_option("config", ga.config, "Network config JSON (block scope takes its variants)");
  grad_cmd->add_option("--scope", ga.scope, "op, block or network");
  grad_cmd->add_option("--seeds", ga.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--inject-fault", ga.fault, "Corrupt the analytic gradient of this entry (test hook)");
  grad_cmd->callback([&] { run = [&] { return gradcheck(ga); }; });

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the tiny DMSA network on synthetic blobs");
  train_cmd->add_option("config", ta.config, "Network config JSON (block variants only)");
  train_cmd->add_option("--out", ta.out, "Loss curve CSV")->required();
  train_cmd->add_option("--epochs", ta.train.epochs, "Epochs");
  train_cmd->add_option("--lr", ta.train.lr, "Initial learning rate");
  train_cmd->add_option("--momentum", ta.train.momentum, "Momentum");
  train_cmd->add_option("--weight-decay", ta.train.weight_decay, "Weight decay");
  train_cmd->add_option("--batch", ta.train.batch_size, "Batch size (0 = full batch)");
  train_cmd->add_option("--samples", ta.samples, "Dataset size");
  train_cmd->add_option("--resolution", ta.resolution, "Image side");
  train_cmd->add_option("--classes", ta.classes, "Number of classes");
  train_cmd->add_option("--seed", ta.seed, "Seed for data, init and shuffling");
  train_cmd->callback([&] { run = [&] { return train(ta); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  set_num_threads(threads);
  return guarded(run);
}
