#include "dmsa/tensor.hpp"

#include <cstring>
#include <numeric>

namespace dmsa {

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::batch: return "batch";
    case Axis::channel: return "channel";
    case Axis::height: return "height";
    case Axis::width: return "width";
  }
  return "?";
}

namespace {

std::vector<Axis> canonical_tags(Index rank) {
  switch (rank) {
    case 0: return {};
    case 1: return {Axis::channel};
    case 2: return {Axis::batch, Axis::channel};
    case 3: return {Axis::batch, Axis::channel, Axis::height};
    case 4: return {Axis::batch, Axis::channel, Axis::height, Axis::width};
    default: throw ShapeMismatch("tensor rank " + std::to_string(rank) + " exceeds 4");
  }
}

}  // namespace

Shape::Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}

Shape::Shape(std::vector<Index> dims) : dims_(std::move(dims)), tags_(canonical_tags(rank())) { validate(); }

Shape::Shape(std::vector<Index> dims, std::vector<Axis> tags) : dims_(std::move(dims)), tags_(std::move(tags)) {
  validate();
}

void Shape::validate() const {
  if (rank() > kMaxRank) throw ShapeMismatch("tensor rank " + std::to_string(rank()) + " exceeds 4");
  if (tags_.size() != dims_.size()) throw ShapeMismatch("axis tag count differs from rank");
  for (Index d : dims_) {
    if (d < 1) throw ShapeMismatch("tensor extents must be >= 1, got " + str());
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    for (std::size_t j = i + 1; j < tags_.size(); ++j) {
      if (tags_[i] == tags_[j]) throw ShapeMismatch(std::string("duplicate axis tag ") + axis_name(tags_[i]));
    }
  }
}

Index Shape::numel() const {
  if (dims_.empty()) return 0;
  return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
}

std::optional<Index> Shape::find(Axis axis) const {
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == axis) return static_cast<Index>(i);
  }
  return std::nullopt;
}

Index Shape::extent(Axis axis) const {
  auto i = find(axis);
  if (!i) throw ShapeMismatch(std::string("shape ") + str() + " has no " + axis_name(axis) + " axis");
  return dims_[static_cast<std::size_t>(*i)];
}

std::string Shape::str() const {
  std::string s;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims_[i]);
  }
  return s.empty() ? "()" : s;
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols, Index start) {
  if (start < 0 || rows * cols + start > numel()) {
    throw ShapeMismatch("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " out of range for " + shape_.str());
  }
  return MatrixMap(data_.data() + start, rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols, Index start) const {
  if (start < 0 || rows * cols + start > numel()) {
    throw ShapeMismatch("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " out of range for " + shape_.str());
  }
  return ConstMatrixMap(data_.data() + start, rows, cols);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeMismatch("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename Scalar>
bool Tensor<Scalar>::identical(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return numel() == 0 ||
         std::memcmp(data(), other.data(), static_cast<std::size_t>(numel()) * sizeof(Scalar)) == 0;
}

template <typename Scalar>
Index Tensor<Scalar>::offset(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) {
    throw ShapeMismatch("index arity " + std::to_string(idx.size()) + " for tensor " + shape_.str());
  }
  Index off = 0;
  Index axis = 0;
  for (Index i : idx) {
    Index extent = shape_[axis++];
    if (i < 0 || i >= extent) throw ShapeMismatch("index out of range for tensor " + shape_.str());
    off = off * extent + i;
  }
  return off;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dmsa
