#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "pvnow/tensor.hpp"

namespace pvnow::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, DType dtype = DType::f64,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), dtype);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

/// Weighted sum sum(x * w) with fixed random weights: a scalar loss whose
/// gradient with respect to x is dense and O(1).
Tensor probe_loss(const Tensor& x, std::uint64_t seed);

/// Max relative gradient error of `loss` over `tensors`, probing at most
/// `coords` entries per tensor (0 = all).
double check_grads(const std::function<Tensor()>& loss, std::vector<Tensor> tensors,
                   double step = 1e-4, std::size_t coords = 0, std::uint64_t seed = 0);

}  // namespace pvnow::testing
