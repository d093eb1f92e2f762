#include "pvnow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pvnow/autograd.hpp"

namespace pvnow {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  const Tensor y = loss();
  if (y.numel() != 1) throw AutogradError("gradient_check: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw std::domain_error("gradient_check: function value is not finite");
  return v;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

GradCheckResult gradient_check(const std::function<Tensor()>& loss, std::span<Tensor> params,
                               const GradCheckOptions& options) {
  for (const auto& p : params) {
    if (p.dtype() != DType::f64) {
      throw std::invalid_argument("gradient_check: requires f64 tensors (got " +
                                  to_string(p.dtype()) + ")");
    }
  }
  Tape::current().clear();
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  const Tensor y = loss();
  if (!std::isfinite(y.item())) {
    throw std::domain_error("gradient_check: function value is not finite");
  }
  backward(y);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    const std::vector<double> analytic =
        p.has_grad() ? p.grad_values() : std::vector<double>(p.numel(), 0.0);
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_tensor > 0 && options.coords_per_tensor < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_tensor);
    }
    auto values = p.data<double>();
    for (auto i : coords) {
      const double original = values[i];
      auto at = [&](double offset) {
        values[i] = original + offset;
        return evaluate(loss);
      };
      auto numeric = [&](double h) {
        return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      };
      double err = relative_error(analytic[i], numeric(options.step), options.abs_floor);
      for (double h : options.fallback_steps) {
        if (err < 1e-8) break;
        err = std::min(err, relative_error(analytic[i], numeric(h), options.abs_floor));
      }
      values[i] = original;
      ++result.coords_checked;
      if (err > result.max_relative_error || result.worst.empty()) {
        result.max_relative_error = std::max(err, result.max_relative_error);
        if (err >= result.max_relative_error) {
          result.worst = std::to_string(t) + "#" + std::to_string(i);
        }
      }
    }
  }
  return result;
}

double gradient_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  Tensor input = x;
  GradCheckOptions options;
  options.step = step;
  std::span<Tensor> params(&input, 1);
  return gradient_check([&] { return f(input); }, params, options).max_relative_error;
}

}  // namespace pvnow
