#ifndef DMSA_TRAIN_HPP
#define DMSA_TRAIN_HPP

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "dmsa/dmsa_block.hpp"

namespace dmsa {

struct TinyNetConfig {
  Index in_channels = 1;
  Index width = 16;
  Index classes = 2;
  DmsaConfig dmsa = default_dmsa();

  /// C = 16, S = 2, G = 2, r = 4, kernels [3, 5].
  static DmsaConfig default_dmsa();
};

/// conv3x3(+bias) -> relu -> DMSA -> global average pool -> fully connected.
template <typename Scalar>
struct TinyDmsaNet {
  TinyNetConfig cfg;
  Tensor<Scalar> conv_w, conv_b;
  DmsaParams<Scalar> dmsa;
  Tensor<Scalar> fc_w, fc_b;

  static TinyDmsaNet random(const TinyNetConfig& cfg, std::uint64_t seed);

  struct Trace {
    Tensor<Scalar> input, pre, hidden, features, pooled;
    DmsaTrace<Scalar> block;
  };

  /// Logits [N, classes].
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Trace* trace = nullptr) const;
  /// Gradients in a network-shaped bundle (cfg copied, tensors are grads).
  TinyDmsaNet backward(const Trace& trace, const Tensor<Scalar>& dlogits) const;

  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    f(std::string("conv.weight"), s.conv_w);
    f(std::string("conv.bias"), s.conv_b);
    s.dmsa.for_each([&](const std::string& n, auto& t) { f("dmsa." + n, t); });
    f(std::string("fc.weight"), s.fc_w);
    f(std::string("fc.bias"), s.fc_b);
  }
};

template <typename Scalar>
struct LossResult {
  Scalar loss;
  Tensor<Scalar> dlogits;
};

/// Mean softmax cross entropy over the batch, with its logit gradient.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels);

struct Dataset {
  TensorD train_x, test_x;  // [n, 1, r, r]
  std::vector<int> train_y, test_y;
  Index classes = 2;
};

/// Class-conditional Gaussian blobs. Class c has mean a_c * b where b is a
/// centred Gaussian bump; a_c is spaced so adjacent class means sit
/// `separation` noise deviations apart. Labels are balanced and the split
/// is a stratified 80/20.
Dataset make_synthetic_dataset(Index n, Index classes, Index resolution, std::uint64_t seed,
                               double separation = 6.0, double noise = 1.0);

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  Index batch_size = 64;  // 0 means full batch
  Index epochs = 200;
  std::vector<Index> decay_epochs{100, 150};
  double decay_factor = 10.0;
  /// Stop once the train loss falls below this; 0 disables.
  double stop_loss = 0.0;
  std::uint64_t seed = 0;

  /// The alternative initial learning rate reading of the recipe.
  static constexpr double kAlternativeLr = 1e-4;

  /// Learning rate, momentum and weight decay may be zero; the rest must be
  /// positive and decay epochs strictly increasing.
  void validate() const;
  double lr_at(Index epoch) const;
};

struct EpochRecord {
  Index epoch;
  double train_loss, test_loss, test_accuracy;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  double initial_train_loss = 0;
  double final_param_norm = 0;
};

/// SGD with momentum and coupled weight decay (g += wd * t; v = m v + g;
/// t -= lr v). Losses are measured on the full split after every epoch.
/// Throws DivergenceDetected on a non-finite loss.
TrainResult train_toy(TinyDmsaNet<double>& net, const Dataset& data, const TrainConfig& cfg);

double parameter_norm(const TinyDmsaNet<double>& net);

/// epoch,train_loss,test_loss,test_accuracy
void write_curve_csv(std::ostream& os, const std::vector<EpochRecord>& curve);

}  // namespace dmsa

#endif  // DMSA_TRAIN_HPP
