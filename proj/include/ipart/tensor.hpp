#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ipart {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

/// Dense row-major array of arbitrary rank. Storage is an Eigen column vector
/// so slices can be viewed as Eigen matrices without copying.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() : shape_{0}, data_() {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Constant(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), std::vector<Scalar>(values)) {}

  BasicTensor(Shape shape, const std::vector<Scalar>& values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_string(shape_));
    }
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor: data length does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... I>
  Scalar& operator()(I... idx) { return data_[offset(idx...)]; }
  template <typename... I>
  Scalar operator()(I... idx) const { return data_[offset(idx...)]; }

  /// Row-major matrix view of `rows*cols` contiguous values starting at `start`.
  MatrixMap matrix(Index start, Index rows, Index cols) {
    check_window(start, rows * cols);
    return MatrixMap(data_.data() + start, rows, cols);
  }
  ConstMatrixMap matrix(Index start, Index rows, Index cols) const {
    check_window(start, rows * cols);
    return ConstMatrixMap(data_.data() + start, rows, cols);
  }
  MatrixMap matrix(Index rows, Index cols) { return matrix(0, rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const { return matrix(0, rows, cols); }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw std::invalid_argument("reshape: cannot view " + shape_string(shape_) + " as " +
                                  shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_string(shape));
    }
  }

  void check_window(Index start, Index count) const {
    if (start < 0 || count < 0 || start + count > size()) {
      throw std::out_of_range("tensor: matrix view outside storage of " + shape_string(shape_));
    }
  }

  template <typename... I>
  Index offset(I... idx) const {
    const Index ids[] = {static_cast<Index>(idx)...};
    constexpr std::size_t n = sizeof...(I);
    if (n != shape_.size()) throw std::out_of_range("tensor: index rank mismatch");
    Index off = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (ids[a] < 0 || ids[a] >= shape_[a]) throw std::out_of_range("tensor: index out of range");
      off = off * shape_[a] + ids[a];
    }
    return off;
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

/// Throws std::invalid_argument naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* where);

}  // namespace ipart
