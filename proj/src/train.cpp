#include "dmsa/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

#include "dmsa/backward.hpp"
#include "dmsa/param_set.hpp"

namespace dmsa {

DmsaConfig TinyNetConfig::default_dmsa() {
  DmsaConfig c;
  c.channels = 16;
  c.splits = 2;
  c.sa_groups = 2;
  c.reduction = 4;
  return c;
}

template <typename Scalar>
TinyDmsaNet<Scalar> TinyDmsaNet<Scalar>::random(const TinyNetConfig& cfg, std::uint64_t seed) {
  if (cfg.dmsa.channels != cfg.width) {
    throw InvalidConfig("tiny net: dmsa channels " + std::to_string(cfg.dmsa.channels) + " != width " +
                        std::to_string(cfg.width));
  }
  std::mt19937_64 rng(seed);
  TinyDmsaNet net;
  net.cfg = cfg;
  const double fan_in = static_cast<double>(cfg.in_channels * 9);
  net.conv_w = Tensor<Scalar>::normal(Shape{cfg.width, cfg.in_channels, 3, 3}, rng,
                                      static_cast<Scalar>(std::sqrt(2.0 / fan_in)));
  net.conv_b = Tensor<Scalar>::zeros(Shape{cfg.width});
  net.dmsa = DmsaParams<Scalar>::random(cfg.dmsa, rng);
  net.fc_w = Tensor<Scalar>::normal(Shape{cfg.width, cfg.classes}, rng,
                                    static_cast<Scalar>(std::sqrt(1.0 / static_cast<double>(cfg.width))));
  net.fc_b = Tensor<Scalar>::zeros(Shape{cfg.classes});
  return net;
}

template <typename Scalar>
Tensor<Scalar> TinyDmsaNet<Scalar>::forward(const Tensor<Scalar>& x, Trace* trace) const {
  Tensor<Scalar> pre = conv2d(x, conv_w, conv_b, 1, 1, 1);
  Tensor<Scalar> hidden = relu(pre);
  Tensor<Scalar> features = dmsa_forward(hidden, cfg.dmsa, dmsa, trace != nullptr ? &trace->block : nullptr);
  Tensor<Scalar> pooled = global_avg_pool(features).reshaped(Shape{x.dim(0), cfg.width});
  Tensor<Scalar> logits = fully_connected(pooled, fc_w, fc_b);
  if (trace != nullptr) {
    trace->input = x;
    trace->pre = std::move(pre);
    trace->hidden = std::move(hidden);
    trace->features = std::move(features);
    trace->pooled = std::move(pooled);
  }
  return logits;
}

template <typename Scalar>
TinyDmsaNet<Scalar> TinyDmsaNet<Scalar>::backward(const Trace& t, const Tensor<Scalar>& dlogits) const {
  TinyDmsaNet g;
  g.cfg = cfg;
  auto fc = fully_connected_backward(t.pooled, fc_w, dlogits, true);
  g.fc_w = std::move(fc.dw);
  g.fc_b = std::move(fc.db);
  const Index n = t.input.dim(0);
  const Tensor<Scalar> dfeatures =
      global_avg_pool_backward(t.features.shape(), fc.dx.reshaped(Shape{n, cfg.width, 1, 1}));
  auto block = dmsa_backward(t.block, cfg.dmsa, dmsa, dfeatures);
  g.dmsa = std::move(block.dp);
  const Tensor<Scalar> dpre = relu_backward(t.pre, block.dx);
  auto conv = conv2d_backward(t.input, conv_w, dpre, 1, 1, 1, true);
  g.conv_w = std::move(conv.dw);
  g.conv_b = std::move(conv.dbias);
  return g;
}

template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeMismatch("cross entropy: logits " + logits.shape().str() + " for " + std::to_string(labels.size()) +
                        " labels");
  }
  const Index n = logits.dim(0), k = logits.dim(1);
  LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(logits.shape())};
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InvalidConfig("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    const auto row = logits.vec().segment(i * k, k);
    const Scalar m = row.maxCoeff();
    const auto e = (row.array() - m).exp();
    const Scalar sum = e.sum();
    total += static_cast<double>(std::log(sum) + m - row[y]);
    auto d = r.dlogits.vec().segment(i * k, k);
    d = (e / (sum * static_cast<Scalar>(n))).matrix();
    d[y] -= Scalar(1) / static_cast<Scalar>(n);
  }
  r.loss = static_cast<Scalar>(total / static_cast<double>(n));
  return r;
}

Dataset make_synthetic_dataset(Index n, Index classes, Index resolution, std::uint64_t seed, double separation,
                               double noise) {
  if (n < classes || classes < 2 || resolution < 1) {
    throw InvalidConfig("synthetic dataset needs n >= classes >= 2 and a positive resolution");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);

  const double centre = static_cast<double>(resolution - 1) / 2.0;
  const double width = std::max(1.0, static_cast<double>(resolution) / 4.0);
  TensorD bump(Shape{resolution, resolution});
  for (Index r = 0; r < resolution; ++r) {
    for (Index c = 0; c < resolution; ++c) {
      const double d2 = (r - centre) * (r - centre) + (c - centre) * (c - centre);
      bump.at(r, c) = std::exp(-d2 / (2 * width * width));
    }
  }
  const double step = separation * noise / bump.vec().norm();

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(classes));
  for (Index i = 0; i < n; ++i) by_class[static_cast<std::size_t>(i % classes)].push_back(i);
  std::vector<Index> train_ids, test_ids;
  for (const auto& ids : by_class) {
    const auto cut = static_cast<std::size_t>(ids.size() * 4 / 5);
    train_ids.insert(train_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
    test_ids.insert(test_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  }
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());

  const Index plane = resolution * resolution;
  TensorD all(Shape{n, 1, resolution, resolution});
  for (Index i = 0; i < n; ++i) {
    const double amp = (static_cast<double>(i % classes) - static_cast<double>(classes - 1) / 2.0) * step;
    for (Index p = 0; p < plane; ++p) all[i * plane + p] = amp * bump[p] + gauss(rng);
  }

  Dataset d;
  d.classes = classes;
  auto take = [&](const std::vector<Index>& ids, TensorD& x, std::vector<int>& y) {
    x = TensorD(Shape{static_cast<Index>(ids.size()), 1, resolution, resolution});
    for (std::size_t j = 0; j < ids.size(); ++j) {
      x.vec().segment(static_cast<Index>(j) * plane, plane) = all.vec().segment(ids[j] * plane, plane);
      y.push_back(static_cast<int>(ids[j] % classes));
    }
  };
  take(train_ids, d.train_x, d.train_y);
  take(test_ids, d.test_x, d.test_y);
  return d;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidConfig("train config: " + m); };
  if (!(lr >= 0) || !(momentum >= 0) || !(weight_decay >= 0)) fail("lr, momentum and weight_decay must be >= 0");
  if (batch_size < 0) fail("batch_size must be positive (or 0 for full batch)");
  if (epochs < 1) fail("epochs must be positive");
  if (!(decay_factor > 0)) fail("decay_factor must be positive");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] < 1 || (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
      fail("decay epochs must be positive and strictly increasing");
    }
  }
}

double TrainConfig::lr_at(Index epoch) const {
  double r = lr;
  for (Index e : decay_epochs)
    if (epoch >= e) r /= decay_factor;
  return r;
}

namespace {

TensorD gather(const TensorD& x, const std::vector<Index>& ids) {
  const Index plane = x.numel() / x.dim(0);
  TensorD out(Shape{static_cast<Index>(ids.size()), x.dim(1), x.dim(2), x.dim(3)});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    out.vec().segment(static_cast<Index>(j) * plane, plane) = x.vec().segment(ids[j] * plane, plane);
  }
  return out;
}

struct Eval {
  double loss, accuracy;
};

Eval evaluate(const TinyDmsaNet<double>& net, const TensorD& x, const std::vector<int>& y) {
  const TensorD logits = net.forward(x);
  const auto ce = softmax_cross_entropy(logits, y);
  const Index k = logits.dim(1);
  Index correct = 0;
  for (Index i = 0; i < logits.dim(0); ++i) {
    Index best = 0;
    logits.vec().segment(i * k, k).maxCoeff(&best);
    if (best == y[static_cast<std::size_t>(i)]) ++correct;
  }
  return {ce.loss, static_cast<double>(correct) / static_cast<double>(logits.dim(0))};
}

}  // namespace

double parameter_norm(const TinyDmsaNet<double>& net) {
  double s = 0;
  net.for_each([&](const std::string&, const TensorD& t) { s += t.vec().squaredNorm(); });
  return std::sqrt(s);
}

TrainResult train_toy(TinyDmsaNet<double>& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const Index n = data.train_x.dim(0);
  if (net.cfg.classes < data.classes) throw InvalidConfig("network has fewer outputs than dataset classes");
  const Index batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);

  ParamSet<double> params = collect_params<double>(net);
  std::vector<TensorD> velocity;
  for (const auto& e : params) velocity.emplace_back(e.tensor->shape());

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  TrainResult result;
  result.initial_train_loss = evaluate(net, data.train_x, data.train_y).loss;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += batch) {
      const Index len = std::min(batch, n - start);
      std::vector<Index> ids(order.begin() + start, order.begin() + start + len);
      std::vector<int> labels;
      for (Index i : ids) labels.push_back(data.train_y[static_cast<std::size_t>(i)]);
      TinyDmsaNet<double>::Trace trace;
      const TensorD logits = net.forward(gather(data.train_x, ids), &trace);
      const auto ce = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(ce.loss)) {
        throw DivergenceDetected("non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      TinyDmsaNet<double> grads = net.backward(trace, ce.dlogits);
      ParamSet<double> gset = collect_params<double>(grads);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].tensor->vec();
        auto& v = velocity[i].vec();
        const auto& g = gset[i].tensor->vec();
        v = cfg.momentum * v + g + cfg.weight_decay * theta;
        theta -= lr * v;
      }
    }
    const Eval tr = evaluate(net, data.train_x, data.train_y);
    const Eval te = evaluate(net, data.test_x, data.test_y);
    if (!std::isfinite(tr.loss) || !std::isfinite(te.loss)) {
      throw DivergenceDetected("non-finite loss after epoch " + std::to_string(epoch + 1));
    }
    result.curve.push_back({epoch + 1, tr.loss, te.loss, te.accuracy});
    if (cfg.stop_loss > 0 && tr.loss < cfg.stop_loss) break;
  }
  result.final_param_norm = parameter_norm(net);
  return result;
}

namespace {

void put_double(std::ostream& os, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 10);
  os.write(buf, r.ptr - buf);
}

}  // namespace

void write_curve_csv(std::ostream& os, const std::vector<EpochRecord>& curve) {
  os << "epoch,train_loss,test_loss,test_accuracy\n";
  for (const auto& r : curve) {
    os << r.epoch << ',';
    put_double(os, r.train_loss);
    os << ',';
    put_double(os, r.test_loss);
    os << ',';
    put_double(os, r.test_accuracy);
    os << '\n';
  }
}

template struct TinyDmsaNet<float>;
template struct TinyDmsaNet<double>;
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, const std::vector<int>&);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, const std::vector<int>&);

}  // namespace dmsa
