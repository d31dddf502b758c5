#ifndef DMSA_OPS_HPP
#define DMSA_OPS_HPP

#include <vector>

#include "dmsa/tensor.hpp"

// Primitive tensor kernels. All functions are pure: inputs are never
// modified and outputs are freshly allocated. Layouts are row-major NCHW.
namespace dmsa {

inline constexpr double kDefaultEps = 1e-5;

/// [m,k] x [k,n] -> [m,n]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Grouped 2-D cross-correlation. `w` is [Cout, Cin/groups, kh, kw]; pass an
/// unset tensor for `bias` to omit it. Output spatial extent is
/// floor((H + 2*padding - kh) / stride) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias, Index stride,
                      Index padding, Index groups);

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis);

/// [N,C,H,W] -> [N,C,1,1], the per-plane arithmetic mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                             double eps = kDefaultEps);

template <typename Scalar>
Tensor<Scalar> batch_norm_inference(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                    const Tensor<Scalar>& beta, const Tensor<Scalar>& running_mean,
                                    const Tensor<Scalar>& running_var, double eps = kDefaultEps);

/// Normalizes each (C/num_groups) x H x W block with population variance,
/// then applies the per-channel affine pair.
template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = kDefaultEps);

// Elementwise add/mul broadcast singleton axes of equal-rank operands.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);
/// out.dim(i) == x.dim(axes[i])
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x, const std::vector<Index>& axes);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis);
/// Equal-width split into `parts` pieces along `axis`.
template <typename Scalar>
std::vector<Tensor<Scalar>> split(const Tensor<Scalar>& x, Index parts, Index axis);
/// Elements [start, start+length) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length);

/// Padding cells never win the max.
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, Index kernel, Index stride, Index padding);

/// [N,K] x [K,M] + [M] -> [N,M]. `b` may be unset.
template <typename Scalar>
Tensor<Scalar> fully_connected(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b);

namespace detail {

inline Index conv_out_extent(Index in, Index kernel, Index stride, Index padding) {
  Index span = in + 2 * padding - kernel;
  if (stride < 1 || span < 0) return 0;
  return span / stride + 1;
}

Index normalize_axis(Index axis, Index rank);

}  // namespace detail

}  // namespace dmsa

#endif  // DMSA_OPS_HPP
