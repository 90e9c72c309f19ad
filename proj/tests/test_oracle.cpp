#include <doctest.h>

#include "amh/oracle.hpp"
#include "amh/verify.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

using namespace amh;

TEST_CASE("direct_conv: zero kernel, delta kernel, size limits") {
  Rng rng(1);
  const Tensor x = random_tensor({2, 6, 7}, rng);
  const ConvKernel zero(ConvSpec::same(3, 2));
  CHECK(oracle::direct_conv(x, zero).values().isZero(0));

  // delta at offset (0, 2) of a 3x3 kernel with padding 1: y(i, j) = x(i - 1, j + 1)
  ConvKernel delta(ConvSpec::same(1, 2));
  delta(0, 1, 0, 2) = 1;
  const Tensor y = oracle::direct_conv(x, delta);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 7; ++j) {
      const bool inside = i - 1 >= 0 && j + 1 < 7;
      CHECK(y(0, i, j) == (inside ? x(1, i - 1, j + 1) : 0.0));
    }

  CHECK_THROWS(oracle::direct_conv(Tensor(1, 17, 4), ConvKernel(ConvSpec::same(1, 1))));
  CHECK_THROWS(oracle::direct_conv(Tensor(9, 4, 4), ConvKernel(ConvSpec::same(1, 9))));
}

TEST_CASE("direct_M and direct_message on a zero state are zero") {
  Rng rng(2);
  CrfInstance c = random_crf_instance(rng);
  for (auto& h : c.state.hbar) h.values().setZero();
  for (auto& pk : c.params.pairs) pk.receiver_linear.weights.setZero();
  const std::size_t S = c.features.size();
  for (std::size_t e = 0; e < S; ++e)
    for (std::size_t r = 0; r < S; ++r) {
      if (e == r) continue;
      CHECK(oracle::direct_M(c.state, c.params, e, r).values().isZero(0));
      CHECK(oracle::direct_message(c.state, c.params, e, r).values().isZero(0));
    }
}

TEST_CASE("direct_M with 1x1 kernels is a per-pixel scalar product") {
  AgCrfParams p = AgCrfParams::zeros({1, 1}, 1);
  p.pair(1, 0).pairwise.weights[0] = -2.0;
  p.pair(1, 0).emitter_linear.weights[0] = 0.5;
  p.pair(1, 0).receiver_linear.weights[0] = 3.0;
  MeanFieldState st;
  Tensor h0(1, 1, 3), h1(1, 1, 3);
  h0.values() << 1, -2, 0.5;
  h1.values() << 4, 1, -1;
  st.hbar = {h0, h1};
  // emitter 1, receiver 0
  const Tensor m = oracle::direct_M(st, p, 1, 0);
  for (Index i = 0; i < 3; ++i) {
    const double hr = h0.values()[i], he = h1.values()[i];
    CHECK(m.values()[i] == doctest::Approx(hr * -2.0 * he + hr * 3.0 + he * 0.5).epsilon(1e-15));
  }
}

TEST_CASE("direct oracles match the conv realisation on 50 random instances") {
  Rng rng(3);
  for (int n = 0; n < 50; ++n) {
    const CrfInstance c = random_crf_instance(rng);
    const std::size_t S = c.features.size();
    for (std::size_t e = 0; e < S; ++e)
      for (std::size_t r = 0; r < S; ++r) {
        if (e == r) continue;
        CHECK(max_abs_diff(oracle::direct_M(c.state, c.params, e, r), compute_M(c.state, c.params, e, r)) <= 1e-6);
        CHECK(max_abs_diff(oracle::direct_message(c.state, c.params, e, r),
                           compute_message(c.state, c.params, e, r)) <= 1e-6);
      }
  }
}

TEST_CASE("finite differences: quadratic and constant functions") {
  Eigen::VectorXd x(3);
  x << 0.5, -1.0, 2.0;
  Eigen::MatrixXd A(3, 3);
  A << 2, 1, 0, 1, 3, -1, 0, -1, 4;
  const auto quad = [&](const Eigen::VectorXd& v) { return 0.5 * v.dot(A * v); };
  const Eigen::VectorXd g = oracle::finite_diff_grad(quad, x);
  CHECK((g - A * x).cwiseAbs().maxCoeff() < 1e-8);

  const auto konst = [](const Eigen::VectorXd&) { return 3.25; };
  CHECK(oracle::finite_diff_grad(konst, x).isZero(0));

  double c = 1.5;
  const double d = oracle::central_difference([&] { return c * c * c; }, c, 1e-4);
  CHECK(c == 1.5);
  CHECK(std::abs(d - 3 * 1.5 * 1.5) < 1e-7);
}

TEST_CASE("fixed-point residual") {
  Rng rng(4);
  CrfInstance c = random_crf_instance(rng);
  AgCrfParams zero = AgCrfParams::zeros(c.params.channels);
  const MeanFieldState st = run_reference_inference(c.features, zero);
  CHECK(oracle::fixed_point_residual(c.features, zero, st) == 0.0);
  for (int trial = 0; trial < 10; ++trial) {
    CrfInstance d = random_crf_instance(rng);
    CHECK(oracle::fixed_point_residual(d.features, d.params, run_reference_inference(d.features, d.params)) >= 0.0);
  }
}

TEST_CASE("direct reference inference matches the closed-form path") {
  Rng rng(5);
  for (int n = 0; n < 10; ++n) {
    CrfInstance c = random_crf_instance(rng, 3, 6, 3, 0.3);
    c.params.iterations = 2;
    const auto a = run_reference_inference(c.features, c.params);
    const auto b = oracle::direct_reference_inference(c.features, c.params);
    for (std::size_t s = 0; s < a.hbar.size(); ++s) CHECK(max_abs_diff(a.hbar[s], b.hbar[s]) <= 1e-6);
  }
}

TEST_CASE("reports pass iff the error is within tolerance and serialise as json") {
  Tensor a(1, 1, 2), b(1, 1, 2);
  a.values() << 1.0, 2.0;
  b.values() << 1.0, 2.5;
  const auto fail = oracle::compare("op", "inst", a, b, 0.1);
  CHECK_FALSE(fail.pass);
  CHECK(fail.max_abs == 0.5);
  const auto ok = oracle::compare("op", "inst", a, b, 0.5);
  CHECK(ok.pass);
  const auto j = nlohmann::json::parse(ok.to_json());
  CHECK(j.at("op") == "op");
  CHECK(j.at("pass") == true);
  CHECK(j.at("max_abs").get<double>() == 0.5);
}

TEST_CASE("relative error uses the larger magnitude with a floor") {
  CHECK(oracle::relative_error(1.0, 1.0) == 0.0);
  CHECK(oracle::relative_error(2.0, 1.0) == 0.5);
  CHECK(oracle::relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));
}
