#pragma once

#include <Eigen/Dense>

#include <string>

namespace equine::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  Eigen::Index pixels() const noexcept { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index size() const noexcept { return pixels() * channels; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Feature map stored as a channels x (height*width) column-major matrix, so
/// that column p = y*width + x holds every channel of one pixel. The raw
/// memory order is therefore height, width, channel.
template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;
  explicit Tensor(const Shape& shape)
      : shape_(shape), data_(MatrixType::Zero(shape.channels, shape.pixels())) {}
  /// `data` must be channels x pixels, or empty and filled in by the caller.
  Tensor(const Shape& shape, MatrixType data) : shape_(shape), data_(std::move(data)) {}

  const Shape& shape() const noexcept { return shape_; }
  int channels() const noexcept { return shape_.channels; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }

  MatrixType& data() noexcept { return data_; }
  const MatrixType& data() const noexcept { return data_; }

  Scalar& operator()(int c, int y, int x) { return data_(c, static_cast<Eigen::Index>(y) * shape_.width + x); }
  Scalar operator()(int c, int y, int x) const {
    return data_(c, static_cast<Eigen::Index>(y) * shape_.width + x);
  }

  /// Same memory reinterpreted as a (C*H*W) x 1 x 1 tensor.
  Tensor flattened() const {
    MatrixType flat = Eigen::Map<const MatrixType>(data_.data(), shape_.size(), 1);
    return Tensor(Shape{static_cast<int>(shape_.size()), 1, 1}, std::move(flat));
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  MatrixType data_;
};

}  // namespace equine::nn
