#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace amh {

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index size() const { return channels * height * width; }
  Index plane() const { return height * width; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.channels << "x" << s.height << "x" << s.width;
  return os.str();
}

/// Dense C x H x W tensor, row-major within each channel plane.
template <typename Scalar>
class BasicTensor {
 public:
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstPlaneMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(shape), values_(Values::Zero(shape.size())) {}
  BasicTensor(Index c, Index h, Index w) : BasicTensor(Shape{c, h, w}) {}
  BasicTensor(Shape shape, Values values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                       to_string(shape_));
    }
  }

  static BasicTensor constant(Shape shape, Scalar v) {
    return BasicTensor(shape, Values::Constant(shape.size(), v));
  }

  const Shape& shape() const { return shape_; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index size() const { return shape_.size(); }

  Values& values() { return values_; }
  const Values& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator()(Index c, Index y, Index x) { return values_[(c * shape_.height + y) * shape_.width + x]; }
  Scalar operator()(Index c, Index y, Index x) const {
    return values_[(c * shape_.height + y) * shape_.width + x];
  }

  PlaneMap plane(Index c) { return PlaneMap(data() + c * shape_.plane(), shape_.height, shape_.width); }
  ConstPlaneMap plane(Index c) const {
    return ConstPlaneMap(data() + c * shape_.plane(), shape_.height, shape_.width);
  }

  bool operator==(const BasicTensor& o) const {
    return shape_ == o.shape_ && (values_ == o.values_).all();
  }

 private:
  Shape shape_;
  Values values_;
};

using Tensor = BasicTensor<double>;

/// Geometry of a 2-D convolution kernel laid out as (out, in, kh, kw).
struct ConvSpec {
  Index out_channels = 1;
  Index in_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;

  Index weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
  /// Same-size 3x3 / stride 1 / pad 1 convention used inside the CRF.
  static ConvSpec same(Index out, Index in, Index k = 3) { return {out, in, k, k, 1, (k - 1) / 2}; }
  static ConvSpec pointwise(Index out, Index in) { return {out, in, 1, 1, 1, 0}; }
  bool operator==(const ConvSpec&) const = default;
};

template <typename Scalar>
struct BasicConvKernel {
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  ConvSpec spec;
  Values weights;

  BasicConvKernel() = default;
  explicit BasicConvKernel(ConvSpec s) : spec(s), weights(Values::Zero(s.weight_count())) {}
  BasicConvKernel(ConvSpec s, Values w) : spec(s), weights(std::move(w)) {
    if (weights.size() != spec.weight_count()) throw ShapeError("kernel: weight count does not match spec");
  }

  Scalar& operator()(Index o, Index i, Index ky, Index kx) {
    return weights[((o * spec.in_channels + i) * spec.kernel_h + ky) * spec.kernel_w + kx];
  }
  Scalar operator()(Index o, Index i, Index ky, Index kx) const {
    return weights[((o * spec.in_channels + i) * spec.kernel_h + ky) * spec.kernel_w + kx];
  }

  /// Kernel weights viewed as a (out*in) x kh x kw tensor, the layout used on the tape.
  BasicTensor<Scalar> as_tensor() const {
    return BasicTensor<Scalar>({spec.out_channels * spec.in_channels, spec.kernel_h, spec.kernel_w}, weights);
  }
};

using ConvKernel = BasicConvKernel<double>;

inline Shape kernel_tensor_shape(const ConvSpec& s) {
  return {s.out_channels * s.in_channels, s.kernel_h, s.kernel_w};
}

}  // namespace amh
