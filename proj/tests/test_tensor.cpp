#include <doctest.h>

#include "amh/oracle.hpp"
#include "amh/random.hpp"
#include "amh/tensor_ops.hpp"

#include <cmath>

using namespace amh;

namespace {

// Inner product written out by hand.
double inner(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (Index i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

TEST_CASE("tensor holds channels*height*width values") {
  Tensor t(2, 3, 5);
  CHECK(t.size() == 30);
  CHECK(t.values().size() == 30);
  t(1, 2, 4) = 7;
  CHECK(t.values()[29] == 7);
  CHECK_THROWS_AS(Tensor(Shape{1, 2, 2}, Tensor::Values::Zero(3)), ShapeError);
}

TEST_CASE("conv2d output size follows floor((H + 2p - k) / s) + 1") {
  Rng rng(3);
  for (Index s : {1, 2, 3}) {
    for (Index p : {0, 1, 2}) {
      ConvSpec spec{2, 1, 3, 3, s, p};
      const Tensor y = conv2d(random_tensor({1, 9, 7}, rng), random_kernel(spec, rng));
      CHECK(y.height() == (9 + 2 * p - 3) / s + 1);
      CHECK(y.width() == (7 + 2 * p - 3) / s + 1);
      CHECK(y.channels() == 2);
    }
  }
}

TEST_CASE("conv2d of zeros is zero and a unit 1x1 kernel is the identity") {
  Rng rng(1);
  const Tensor z(1, 3, 3);
  CHECK(conv2d(z, random_kernel(ConvSpec::same(2, 1), rng)).values().isZero(0));

  ConvKernel unit(ConvSpec::pointwise(1, 1));
  unit.weights[0] = 1;
  const Tensor x = random_tensor({1, 4, 6}, rng);
  CHECK(conv2d(x, unit) == x);
  CHECK(deconv2d(x, unit) == x);
  CHECK(deconv2d(Tensor(1, 3, 3), unit).values().isZero(0));
}

TEST_CASE("conv2d matches the loop-nest oracle on random 2x5x5 inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 5, 5}, rng);
    const ConvKernel k = random_kernel({3, 2, 3, 3, 1 + trial % 2, trial % 3}, rng);
    CHECK(max_abs_diff(conv2d(x, k), oracle::direct_conv(x, k)) <= 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Rng rng(1);
  CHECK_THROWS_AS(conv2d(Tensor(2, 4, 4), random_kernel(ConvSpec::same(1, 3), rng)), ShapeError);
  CHECK_THROWS_AS(deconv2d(Tensor(2, 4, 4), random_kernel(ConvSpec::same(3, 1), rng)), ShapeError);
}

TEST_CASE("deconv2d output size is (H-1)s - 2p + k") {
  Rng rng(2);
  const ConvKernel k = random_kernel({1, 2, 4, 4, 2, 1}, rng);
  const Tensor y = deconv2d(random_tensor({1, 5, 3}, rng), k);
  CHECK(y.shape() == Shape{2, (5 - 1) * 2 - 2 + 4, (3 - 1) * 2 - 2 + 4});
}

TEST_CASE("property: conv2d input gradient is the adjoint of conv2d, and deconv2d matches it") {
  Rng rng(99);
  std::uniform_int_distribution<int> side(3, 9), ch(1, 3), ks(1, 4), st(1, 3), pd(0, 1);
  int exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ConvSpec spec{ch(rng), ch(rng), ks(rng), ks(rng), st(rng), pd(rng)};
    const Index h = std::max<Index>(side(rng), spec.kernel_h), w = std::max<Index>(side(rng), spec.kernel_w);
    const Tensor x = random_tensor({spec.in_channels, h, w}, rng);
    const ConvKernel k = random_kernel(spec, rng);
    const Tensor cx = conv2d(x, k);
    const Tensor y = random_tensor(cx.shape(), rng);
    const Tensor back = conv2d_input_grad(y, spec, k.weights.data(), x.shape());
    const double lhs = inner(cx, y), rhs = inner(x, back);
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
    // deconv2d reproduces x's size only when the strides tile it exactly; then it is the same map
    const Tensor dy = deconv2d(y, k);
    if (dy.shape() == x.shape()) {
      ++exact;
      CHECK(max_abs_diff(dy, back) <= 1e-12);
    }
  }
  CHECK(exact > 5);
}

TEST_CASE("maxpool basics") {
  Tensor x(1, 2, 2);
  x.values() << 1, 2, 3, 4;
  const Tensor y = maxpool(x, 2, 2);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y(0, 0, 0) == 4);

  const Tensor c = Tensor::constant({2, 4, 6}, 0.3);
  const Tensor pc = maxpool(c, 2, 2);
  CHECK((pc.values() == 0.3).all());

  CHECK_THROWS_AS(maxpool(x, 3, 1), ShapeError);
  CHECK_THROWS_AS(maxpool(x, 0, 1), ShapeError);
}

TEST_CASE("maxpool ties resolve to the first row-major position") {
  const Tensor x = Tensor::constant({1, 2, 2}, 5.0);
  const auto r = maxpool_with_argmax(x, 2, 2);
  CHECK(r.argmax.at(0) == 0);
}

TEST_CASE("property: pooled value is at least the window mean") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor x = random_tensor({2, 6, 6}, rng);
    const Tensor y = maxpool(x, 2, 2);
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
          const double mean = (x(c, 2 * i, 2 * j) + x(c, 2 * i + 1, 2 * j) + x(c, 2 * i, 2 * j + 1) +
                               x(c, 2 * i + 1, 2 * j + 1)) / 4;
          CHECK(y(c, i, j) >= mean);
        }
  }
}

TEST_CASE("sigmoid, mul and add element-wise rules") {
  CHECK(sigmoid(0.0) == 0.5);
  Rng rng(8);
  const Tensor x = random_tensor({2, 3, 3}, rng, -30, 30);
  const Tensor sp = sigmoid(x), sn = sigmoid(scale(x, -1.0));
  CHECK(((sp.values() + sn.values() - 1).abs() < 1e-15).all());
  CHECK((sp.values() > 0).all());
  CHECK((sp.values() < 1).all());
  CHECK(sigmoid(1e4) < 1.0);
  CHECK(sigmoid(-1e4) > 0.0);

  CHECK(mul(x, Tensor::constant(x.shape(), 1.0)) == x);
  CHECK(max_abs_diff(add(x, scale(x, -1.0)), Tensor(x.shape())) == 0);
  CHECK_THROWS_AS(mul(x, Tensor(1, 3, 3)), ShapeError);
  CHECK_THROWS_AS(add(x, Tensor(2, 3, 4)), ShapeError);
}

TEST_CASE("ops are deterministic") {
  Rng a(42), b(42);
  const Tensor xa = random_tensor({3, 8, 8}, a), xb = random_tensor({3, 8, 8}, b);
  const ConvKernel ka = random_kernel(ConvSpec::same(2, 3), a), kb = random_kernel(ConvSpec::same(2, 3), b);
  CHECK(conv2d(xa, ka) == conv2d(xb, kb));
  CHECK(deconv2d(conv2d(xa, ka), ka) == deconv2d(conv2d(xb, kb), kb));
}

TEST_CASE("ops keep finite inputs finite") {
  Rng rng(12);
  const Tensor x = random_tensor({2, 6, 6}, rng, -1e3, 1e3);
  const ConvKernel k = random_kernel(ConvSpec::same(2, 2), rng);
  for (const Tensor& y : {conv2d(x, k), deconv2d(x, k), sigmoid(x), relu(x), maxpool(x, 2, 2), mul(x, x)}) {
    CHECK(y.values().allFinite());
  }
}

TEST_CASE("single-precision instantiation") {
  BasicTensor<float> x(1, 4, 4);
  x.values().setConstant(1.0f);
  BasicConvKernel<float> k(ConvSpec::same(1, 1));
  k.weights.setConstant(1.0f);
  const auto y = conv2d(x, k);
  CHECK(y(0, 1, 1) == 9.0f);
  CHECK(y(0, 0, 0) == 4.0f);
}
