#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvnow/tensor.hpp"

namespace pvnow {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for one parameter.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  AdamConfig config;

  static AdamState for_param(const Tensor& param, AdamConfig config = {});
};

/// One bias-corrected Adam update per parameter; gradients are cleared afterwards.
/// Throws AutogradError if a parameter has no gradient.
void adam_step(std::span<Tensor> params, std::span<AdamState> states);

/// Parameters grouped by learning rate, each with its own Adam state.
class Adam {
 public:
  void add_group(std::span<const Tensor> params, AdamConfig config);
  /// Parameters that received no gradient (unused branches) are skipped.
  void step();
  void zero_grad();
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace pvnow
