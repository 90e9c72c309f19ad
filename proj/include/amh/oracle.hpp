#pragma once

// Brute-force references. Nothing here calls the fast paths in tensor_ops.hpp or agcrf.hpp:
// explicit loops, different loop order, no im2col.

#include "amh/agcrf.hpp"
#include "amh/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace amh::oracle {

struct OracleReport {
  std::string op;
  std::string instance;
  double max_abs = 0;
  double rel = 0;
  double tolerance = 0;
  bool pass = false;

  std::string to_json() const;
};

/// Compares two values and fills a report; pass iff max_abs <= tolerance.
OracleReport compare(const std::string& op, const std::string& instance, const Tensor& fast, const Tensor& ref,
                     double tolerance);

/// Quadruple loop cross-correlation. Rejects inputs above 16x16 or 8 channels.
Tensor direct_conv(const Tensor& x, const ConvKernel& k);

/// Gate potential of pair (e -> r) as a literal sum over pixels and footprint neighbours.
Tensor direct_M(const MeanFieldState& state, const AgCrfParams& p, std::size_t e, std::size_t r);

/// Message of pair (e -> r), including the linear term, as a literal footprint sum.
Tensor direct_message(const MeanFieldState& state, const AgCrfParams& p, std::size_t e, std::size_t r);

/// One sequential sweep built from direct_M / direct_message.
void direct_sweep(const ScaleSet& F, const AgCrfParams& p, MeanFieldState& state);

/// Full closed-form inference built from direct_sweep.
MeanFieldState direct_reference_inference(const ScaleSet& F, const AgCrfParams& p);

/// Max-abs change of hbar under one more direct sweep from `state`.
double fixed_point_residual(const ScaleSet& F, const AgCrfParams& p, const MeanFieldState& state);

/// Central difference of fn with respect to `coord`, which is perturbed in place and restored.
double central_difference(const std::function<double()>& fn, double& coord, double h = 1e-4);

/// Central-difference gradient of fn at params.
Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& fn,
                                 const Eigen::VectorXd& params, double h = 1e-4);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace amh::oracle
