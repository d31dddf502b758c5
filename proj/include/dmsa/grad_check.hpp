#ifndef DMSA_GRAD_CHECK_HPP
#define DMSA_GRAD_CHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmsa/dmsa_block.hpp"
#include "dmsa/param_set.hpp"

namespace dmsa {

inline constexpr double kGradStep = 1e-4;
inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kComposedTolerance = 1e-4;

/// Central differences (f(t + h) - f(t - h)) / 2h for every coordinate of
/// every tensor in `params`. `f` reads the tensors in place; each one is
/// restored bit-exactly after its perturbation. Throws NonFiniteObjective
/// when any evaluation is not finite.
std::vector<TensorD> numeric_gradient(const std::function<double()>& f, const ParamSet<double>& params,
                                      double step = kGradStep);

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double numeric, double analytic);

struct GradCheckEntry {
  std::string name;
  double max_rel = 0;
  double max_abs = 0;
  Index count = 0;
  double tolerance = kPrimitiveTolerance;
  bool passed() const { return max_rel <= tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = kGradStep;

  bool passed() const;
  /// Entry with the largest max_rel; null when empty.
  const GradCheckEntry* worst() const;
  void append(const GradCheckReport& other);
};

struct GradCheckOptions {
  double step = kGradStep;
  /// Entry name whose analytic gradient is deliberately corrupted before
  /// comparison. Exists so the failure path can be exercised end to end.
  std::string inject_fault;
};

/// Compares analytic gradients with numeric ones entry by entry.
GradCheckReport compare_gradients(const std::vector<std::string>& names, const std::vector<TensorD>& analytic,
                                  const std::vector<TensorD>& numeric, double tolerance,
                                  const GradCheckOptions& options = {});

/// One differentiable function of named tensors, checked through the
/// objective sum(w * forward(vars)) with fixed random weights w.
struct GradCase {
  std::string name;
  std::vector<std::string> var_names;
  std::vector<TensorD> vars;
  std::function<TensorD(const std::vector<TensorD>&)> forward;
  std::function<std::vector<TensorD>(const std::vector<TensorD>&, const TensorD& dy)> backward;
  double tolerance = kPrimitiveTolerance;
};

GradCheckReport run_grad_case(GradCase c, std::uint64_t seed, const GradCheckOptions& options = {});

/// Every primitive kernel and attention module, at 64-bit.
std::vector<GradCase> primitive_grad_cases(std::uint64_t seed);
GradCheckReport check_primitives(std::uint64_t seed, const GradCheckOptions& options = {});

/// Smallest valid block: C = 16, S = 2, G = 2 on a [1, 16, 4, 4] input.
DmsaConfig smallest_block_config();

/// Full block against central differences with alpha, beta and the gate
/// parameters moved off their identity initialization.
GradCheckReport check_block(const DmsaConfig& cfg, Index spatial, std::uint64_t seed,
                            const GradCheckOptions& options = {});

/// Tiny trainable network under the cross-entropy loss.
GradCheckReport check_network(std::uint64_t seed, const GradCheckOptions& options = {});

/// Moves alpha, beta and the gate parameters to random non-trivial values.
void perturb_for_check(DmsaParams<double>& p, std::mt19937_64& rng);

}  // namespace dmsa

#endif  // DMSA_GRAD_CHECK_HPP
