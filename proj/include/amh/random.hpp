#pragma once

#include "amh/tensor.hpp"

#include <random>

namespace amh {

using Rng = std::mt19937_64;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = dist(rng);
  return t;
}

inline ConvKernel random_kernel(const ConvSpec& spec, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  ConvKernel k(spec);
  for (Index i = 0; i < k.weights.size(); ++i) k.weights[i] = dist(rng);
  return k;
}

}  // namespace amh
