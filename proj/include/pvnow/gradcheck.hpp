#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pvnow/tensor.hpp"

namespace pvnow {

/// Largest |analytic - five-point central difference| / max(|analytic|, |central|, 1e-12)
/// over every element of x. f must be scalar-valued; x must be f64.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-4);

struct GradCheckOptions {
  double step = 1e-4;
  /// Coordinates probed per tensor; 0 probes every element.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Lower bound of the relative-error denominator.
  double abs_floor = 1e-12;
  /// Further step sizes tried per coordinate; the smallest discrepancy is kept. A
  /// coordinate sitting within `step` of a kink (ReLU zero, pooling tie) is then
  /// judged at a step that does not straddle it, while a wrong backward rule
  /// disagrees at every step.
  std::vector<double> fallback_steps;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  ///< "tensor#index" of the worst coordinate
};

/// Checks d(loss)/d(param) for each tensor in `params` (all f64 leaves).
/// `loss` must rebuild the forward graph on every call.
GradCheckResult gradient_check(const std::function<Tensor()>& loss, std::span<Tensor> params,
                               const GradCheckOptions& options = {});

}  // namespace pvnow
