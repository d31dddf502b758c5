#ifndef DMSA_BACKWARD_HPP
#define DMSA_BACKWARD_HPP

#include <vector>

#include "dmsa/ops.hpp"

// Reverse-mode derivatives of the primitive kernels in ops.hpp. Each
// function takes the forward inputs (or outputs, where cheaper) plus the
// upstream gradient `dy` and returns gradients with the input shapes.
namespace dmsa {

template <typename Scalar>
struct MatmulGrad {
  Tensor<Scalar> da, db;
};

template <typename Scalar>
MatmulGrad<Scalar> matmul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>& dy);

template <typename Scalar>
struct ConvGrad {
  Tensor<Scalar> dx, dw, dbias;  // dbias unset when has_bias is false
};

template <typename Scalar>
ConvGrad<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& dy,
                                 Index stride, Index padding, Index groups, bool has_bias);

/// Takes the softmax output y.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy, Index axis);

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& dy);

template <typename Scalar>
struct NormGrad {
  Tensor<Scalar> dx, dgamma, dbeta;
};

template <typename Scalar>
NormGrad<Scalar> group_norm_backward(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gamma,
                                     const Tensor<Scalar>& dy, double eps = kDefaultEps);

template <typename Scalar>
NormGrad<Scalar> instance_norm_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                        const Tensor<Scalar>& dy, double eps = kDefaultEps);

// Running statistics are treated as constants.
template <typename Scalar>
NormGrad<Scalar> batch_norm_inference_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                               const Tensor<Scalar>& running_mean,
                                               const Tensor<Scalar>& running_var, const Tensor<Scalar>& dy,
                                               double eps = kDefaultEps);

/// Subgradient 0 at x == 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy);

/// Takes the sigmoid output y.
template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy);

/// Reduces `dy` (the broadcast output gradient) back to `target` shape.
template <typename Scalar>
Tensor<Scalar> unbroadcast(const Tensor<Scalar>& dy, const Shape& target);

template <typename Scalar>
struct BinaryGrad {
  Tensor<Scalar> da, db;
};

template <typename Scalar>
BinaryGrad<Scalar> add_backward(const Shape& a, const Shape& b, const Tensor<Scalar>& dy);

template <typename Scalar>
BinaryGrad<Scalar> mul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>& dy);

template <typename Scalar>
Tensor<Scalar> transpose_backward(const std::vector<Index>& axes, const Tensor<Scalar>& dy);

template <typename Scalar>
std::vector<Tensor<Scalar>> concat_backward(const std::vector<Shape>& parts, const Tensor<Scalar>& dy, Index axis);

/// Routes each output gradient to the first maximal input in its window.
template <typename Scalar>
Tensor<Scalar> max_pool2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy, Index kernel, Index stride,
                                   Index padding);

template <typename Scalar>
struct LinearGrad {
  Tensor<Scalar> dx, dw, db;
};

template <typename Scalar>
LinearGrad<Scalar> fully_connected_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                            const Tensor<Scalar>& dy, bool has_bias);

}  // namespace dmsa

#endif  // DMSA_BACKWARD_HPP
