#ifndef DMSA_TENSOR_HPP
#define DMSA_TENSOR_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dmsa/errors.hpp"

namespace dmsa {

using Index = Eigen::Index;

enum class Axis : std::uint8_t { batch, channel, height, width };

const char* axis_name(Axis axis);

/// Extents of a dense tensor plus one semantic tag per axis.
///
/// Rank is at most 4 and every extent is at least 1. When tags are not
/// given they follow the canonical NCHW order: rank 4 is (batch, channel,
/// height, width), rank 3 drops width, rank 2 is (batch, channel) and
/// rank 1 is a bare channel vector.
class Shape {
 public:
  static constexpr Index kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(std::vector<Index> dims);
  Shape(std::vector<Index> dims, std::vector<Axis> tags);

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<Index>& dims() const { return dims_; }
  const std::vector<Axis>& tags() const { return tags_; }
  Index numel() const;

  std::optional<Index> find(Axis axis) const;
  /// Extent of a tagged axis; throws ShapeMismatch when the tag is absent.
  Index extent(Axis axis) const;

  // Extents only; tags do not take part in equality.
  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  /// "1x64x56x56"
  std::string str() const;

 private:
  void validate() const;

  std::vector<Index> dims_;
  std::vector<Axis> tags_;
};

/// Dense row-major tensor over Scalar (float or double).
///
/// A default-constructed tensor is "unset" (rank 0, no storage); every
/// other tensor satisfies numel() == product(shape) with all extents >= 1.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_.numel())) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Vector::Constant(shape_.numel(), fill)) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values);
  Tensor(Shape shape, std::span<const Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo = -1, Scalar hi = 1);
  template <typename Rng>
  static Tensor normal(Shape shape, Rng& rng, Scalar stddev = 1);

  bool empty() const { return data_.size() == 0; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index dim(Index i) const { return shape_[i]; }
  Index numel() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... I>
  Scalar& at(I... idx) { return data_[offset({static_cast<Index>(idx)...})]; }
  template <typename... I>
  Scalar at(I... idx) const { return data_[offset({static_cast<Index>(idx)...})]; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  /// Row-major [rows, cols] view of `rows * cols` elements starting at `start`.
  MatrixMap matrix(Index rows, Index cols, Index start = 0);
  ConstMatrixMap matrix(Index rows, Index cols, Index start = 0) const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.vec() = data_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

  /// Bitwise equality of shape and values (NaN payloads included).
  bool identical(const Tensor& other) const;

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values)
    : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
  if (static_cast<Index>(values.size()) != shape_.numel()) {
    throw ShapeMismatch("tensor of shape " + shape_.str() + " given " + std::to_string(values.size()) +
                        " values");
  }
  data_ = ConstVectorMap(values.data(), shape_.numel());
}

template <typename Scalar>
template <typename Rng>
Tensor<Scalar> Tensor<Scalar>::uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
  Tensor out(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < out.numel(); ++i) out[i] = static_cast<Scalar>(dist(rng));
  return out;
}

template <typename Scalar>
template <typename Rng>
Tensor<Scalar> Tensor<Scalar>::normal(Shape shape, Rng& rng, Scalar stddev) {
  Tensor out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < out.numel(); ++i) out[i] = static_cast<Scalar>(dist(rng));
  return out;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dmsa

#endif  // DMSA_TENSOR_HPP
