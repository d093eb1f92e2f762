#include "support.hpp"

#include "pvnow/gradcheck.hpp"
#include "pvnow/ops.hpp"

namespace pvnow::testing {

Tensor probe_loss(const Tensor& x, std::uint64_t seed) {
  return sum(mul(x, random_tensor(x.shape(), seed ^ 0x9e3779b97f4a7c15ULL, x.dtype())));
}

double check_grads(const std::function<Tensor()>& loss, std::vector<Tensor> tensors, double step,
                   std::size_t coords, std::uint64_t seed) {
  GradCheckOptions options;
  options.step = step;
  options.coords_per_tensor = coords;
  options.seed = seed;
  return gradient_check(loss, tensors, options).max_relative_error;
}

}  // namespace pvnow::testing
