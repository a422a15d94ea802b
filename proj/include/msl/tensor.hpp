#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "msl/errors.hpp"

namespace msl {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using TokenMatrix = RowMatrix<int>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major n-dimensional array. Rank-0 (empty shape) holds one scalar.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : values_(Storage::Zero(1)) {}

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_ = Storage::Zero(numel(shape_));
  }

  BasicTensor(Shape shape, Storage values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    if (numel(shape_) != values_.size()) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " cannot hold " +
                           std::to_string(values_.size()) + " values");
    }
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), from_list(values)) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor full(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  static BasicTensor scalar(Scalar value) {
    BasicTensor t;
    t.values_(0) = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return values_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Storage& values() { return values_; }
  const Storage& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_(i); }
  Scalar operator[](Index i) const { return values_(i); }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return values_(0);
  }

  /// Leading dimensions flattened into rows, last dimension as columns.
  Index rows() const { return shape_.empty() ? 1 : size() / shape_.back(); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }

  BasicTensor reshaped(Shape shape) const {
    if (numel(shape) != size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return BasicTensor(std::move(shape), values_);
  }

  bool all_finite() const { return values_.allFinite(); }

 private:
  static void check_shape(const Shape& shape) {
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + to_string(shape));
    }
  }

  static Storage from_list(std::initializer_list<Scalar> values) {
    Storage s(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) s(i++) = v;
    return s;
  }

  Shape shape_;
  Storage values_;
};

using Tensor = BasicTensor<double>;

/// Exact equality of shape and of every value's bit pattern.
template <typename Scalar>
bool bit_equal(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace msl
