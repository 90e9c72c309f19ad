#pragma once

#include "amh/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace amh {

inline Index conv_output_size(Index in, Index kernel, Index stride, Index padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

inline Index deconv_output_size(Index in, Index kernel, Index stride, Index padding) {
  return (in - 1) * stride - 2 * padding + kernel;
}

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> weight_matrix(const ConvSpec& k, const Scalar* w) {
  return Eigen::Map<const RowMatrix<Scalar>>(w, k.out_channels, k.in_channels * k.kernel_h * k.kernel_w);
}

// Rows index (in, ky, kx), columns index output pixels of the (oh, ow) grid.
template <typename Scalar>
RowMatrix<Scalar> im2col(const BasicTensor<Scalar>& x, const ConvSpec& k, Index oh, Index ow) {
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(k.in_channels * k.kernel_h * k.kernel_w, oh * ow);
  const Index H = x.height(), W = x.width();
  for (Index c = 0; c < k.in_channels; ++c) {
    for (Index ky = 0; ky < k.kernel_h; ++ky) {
      for (Index kx = 0; kx < k.kernel_w; ++kx) {
        Scalar* row = cols.row((c * k.kernel_h + ky) * k.kernel_w + kx).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * k.stride - k.padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * k.stride - k.padding + kx;
            if (ix >= 0 && ix < W) row[oy * ow + ox] = x(c, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-add of im2col layout back into an image of `target` shape.
template <typename Scalar>
BasicTensor<Scalar> col2im(const RowMatrix<Scalar>& cols, const ConvSpec& k, Index oh, Index ow, Shape target) {
  BasicTensor<Scalar> out(target);
  const Index H = target.height, W = target.width;
  for (Index c = 0; c < k.in_channels; ++c) {
    for (Index ky = 0; ky < k.kernel_h; ++ky) {
      for (Index kx = 0; kx < k.kernel_w; ++kx) {
        const Scalar* row = cols.row((c * k.kernel_h + ky) * k.kernel_w + kx).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * k.stride - k.padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * k.stride - k.padding + kx;
            if (ix >= 0 && ix < W) out(c, iy, ix) += row[oy * ow + ox];
          }
        }
      }
    }
  }
  return out;
}

inline void check_kernel(const ConvSpec& k, Index weights) {
  if (k.kernel_h < 1 || k.kernel_w < 1 || k.stride < 1 || k.padding < 0) {
    throw ShapeError("kernel: invalid geometry");
  }
  if (weights != k.weight_count()) {
    throw ShapeError("kernel: expected " + std::to_string(k.weight_count()) + " weights, got " +
                     std::to_string(weights));
  }
}

}  // namespace detail

/// Cross-correlation of x with a (out, in, kh, kw) kernel.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& x, const ConvSpec& k, const Scalar* weights) {
  if (x.channels() != k.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.channels()) + " channels, kernel expects " +
                     std::to_string(k.in_channels));
  }
  const Index oh = conv_output_size(x.height(), k.kernel_h, k.stride, k.padding);
  const Index ow = conv_output_size(x.width(), k.kernel_w, k.stride, k.padding);
  if (x.height() + 2 * k.padding < k.kernel_h || x.width() + 2 * k.padding < k.kernel_w || oh < 1 || ow < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(k.kernel_h) + "x" + std::to_string(k.kernel_w) +
                     " does not fit input " + to_string(x.shape()));
  }
  BasicTensor<Scalar> out(k.out_channels, oh, ow);
  Eigen::Map<detail::RowMatrix<Scalar>> dst(out.data(), k.out_channels, oh * ow);
  dst.noalias() = detail::weight_matrix(k, weights) * detail::im2col(x, k, oh, ow);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& x, const BasicConvKernel<Scalar>& k) {
  detail::check_kernel(k.spec, k.weights.size());
  return conv2d(x, k.spec, k.weights.data());
}

/// Gradient of conv2d with respect to its input, scattered back onto `input_shape`.
template <typename Scalar>
BasicTensor<Scalar> conv2d_input_grad(const BasicTensor<Scalar>& grad_out, const ConvSpec& k, const Scalar* weights,
                                      Shape input_shape) {
  if (grad_out.channels() != k.out_channels) throw ShapeError("conv2d_input_grad: channel mismatch");
  Eigen::Map<const detail::RowMatrix<Scalar>> g(grad_out.data(), k.out_channels, grad_out.shape().plane());
  detail::RowMatrix<Scalar> cols = detail::weight_matrix(k, weights).transpose() * g;
  return detail::col2im(cols, k, grad_out.height(), grad_out.width(), input_shape);
}

/// Gradient of conv2d with respect to its weights, flattened in (out, in, kh, kw) order.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> conv2d_kernel_grad(const BasicTensor<Scalar>& x,
                                                          const BasicTensor<Scalar>& grad_out, const ConvSpec& k) {
  if (grad_out.channels() != k.out_channels || x.channels() != k.in_channels) {
    throw ShapeError("conv2d_kernel_grad: channel mismatch");
  }
  Eigen::Map<const detail::RowMatrix<Scalar>> g(grad_out.data(), k.out_channels, grad_out.shape().plane());
  detail::RowMatrix<Scalar> gw = g * detail::im2col(x, k, grad_out.height(), grad_out.width()).transpose();
  return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(gw.data(), gw.size());
}

/// Transposed convolution: the adjoint of conv2d with the same kernel. The input carries the
/// kernel's out_channels and the result carries its in_channels.
template <typename Scalar>
BasicTensor<Scalar> deconv2d(const BasicTensor<Scalar>& x, const ConvSpec& k, const Scalar* weights) {
  if (x.channels() != k.out_channels) {
    throw ShapeError("deconv2d: input has " + std::to_string(x.channels()) + " channels, kernel emits " +
                     std::to_string(k.out_channels));
  }
  const Index oh = deconv_output_size(x.height(), k.kernel_h, k.stride, k.padding);
  const Index ow = deconv_output_size(x.width(), k.kernel_w, k.stride, k.padding);
  if (oh < 1 || ow < 1) throw ShapeError("deconv2d: empty output for input " + to_string(x.shape()));
  return conv2d_input_grad(x, k, weights, Shape{k.in_channels, oh, ow});
}

template <typename Scalar>
BasicTensor<Scalar> deconv2d(const BasicTensor<Scalar>& x, const BasicConvKernel<Scalar>& k) {
  detail::check_kernel(k.spec, k.weights.size());
  return deconv2d(x, k.spec, k.weights.data());
}

template <typename Scalar>
struct PoolResult {
  BasicTensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index per output cell
};

/// Max-pooling without padding. Ties resolve to the first row-major position in the window.
template <typename Scalar>
PoolResult<Scalar> maxpool_with_argmax(const BasicTensor<Scalar>& x, Index window, Index stride) {
  if (window < 1 || stride < 1) throw ShapeError("maxpool: window and stride must be >= 1");
  if (window > x.height() || window > x.width()) {
    throw ShapeError("maxpool: window " + std::to_string(window) + " larger than input " + to_string(x.shape()));
  }
  const Index oh = (x.height() - window) / stride + 1;
  const Index ow = (x.width() - window) / stride + 1;
  PoolResult<Scalar> r{BasicTensor<Scalar>(x.channels(), oh, ow), std::vector<Index>(x.channels() * oh * ow)};
  Index o = 0;
  for (Index c = 0; c < x.channels(); ++c) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        Index best = (c * x.height() + oy * stride) * x.width() + ox * stride;
        for (Index wy = 0; wy < window; ++wy) {
          for (Index wx = 0; wx < window; ++wx) {
            const Index idx = (c * x.height() + oy * stride + wy) * x.width() + ox * stride + wx;
            if (x.values()[idx] > x.values()[best]) best = idx;
          }
        }
        r.output.values()[o] = x.values()[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
BasicTensor<Scalar> maxpool(const BasicTensor<Scalar>& x, Index window, Index stride) {
  return maxpool_with_argmax(x, window, stride).output;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape " + to_string(a) + " vs " + to_string(b));
}

/// Logistic function, kept strictly inside (0,1) for every finite input.
template <typename Scalar>
Scalar sigmoid(Scalar v) {
  constexpr Scalar lo = std::numeric_limits<Scalar>::min();
  constexpr Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / 2;
  const Scalar s = v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
  return std::clamp(s, lo, hi);
}

template <typename Scalar>
BasicTensor<Scalar> sigmoid(const BasicTensor<Scalar>& x) {
  return BasicTensor<Scalar>(x.shape(), x.values().unaryExpr([](Scalar v) { return sigmoid(v); }));
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  return BasicTensor<Scalar>(x.shape(), x.values().max(Scalar(0)));
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  check_same_shape(x.shape(), y.shape(), "add");
  return BasicTensor<Scalar>(x.shape(), x.values() + y.values());
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  check_same_shape(x.shape(), y.shape(), "sub");
  return BasicTensor<Scalar>(x.shape(), x.values() - y.values());
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  check_same_shape(x.shape(), y.shape(), "mul");
  return BasicTensor<Scalar>(x.shape(), x.values() * y.values());
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& x, Scalar s) {
  return BasicTensor<Scalar>(x.shape(), x.values() * s);
}

/// Multiplies every channel of x by a single-channel map.
template <typename Scalar>
BasicTensor<Scalar> mul_broadcast(const BasicTensor<Scalar>& gate, const BasicTensor<Scalar>& x) {
  if (gate.channels() == x.channels()) return mul(gate, x);
  if (gate.channels() != 1 || gate.height() != x.height() || gate.width() != x.width()) {
    throw ShapeError("mul_broadcast: gate " + to_string(gate.shape()) + " vs " + to_string(x.shape()));
  }
  BasicTensor<Scalar> out(x.shape());
  for (Index c = 0; c < x.channels(); ++c) out.plane(c) = x.plane(c).cwiseProduct(gate.plane(0));
  return out;
}

/// Sums channels into a single-channel map.
template <typename Scalar>
BasicTensor<Scalar> channel_sum(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out(1, x.height(), x.width());
  for (Index c = 0; c < x.channels(); ++c) out.plane(0) += x.plane(c);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> concat_channels(const std::vector<BasicTensor<Scalar>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Index c = 0;
  for (const auto& x : xs) {
    if (x.height() != xs[0].height() || x.width() != xs[0].width()) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(x.shape()) + " vs " +
                       to_string(xs[0].shape()));
    }
    c += x.channels();
  }
  BasicTensor<Scalar> out(c, xs[0].height(), xs[0].width());
  Index offset = 0;
  for (const auto& x : xs) {
    out.values().segment(offset, x.size()) = x.values();
    offset += x.size();
  }
  return out;
}

template <typename Scalar>
Scalar dot(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  check_same_shape(x.shape(), y.shape(), "dot");
  return (x.values() * y.values()).sum();
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  check_same_shape(x.shape(), y.shape(), "max_abs_diff");
  return x.size() == 0 ? Scalar(0) : (x.values() - y.values()).abs().maxCoeff();
}

}  // namespace amh
