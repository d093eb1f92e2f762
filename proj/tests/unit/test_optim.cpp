#include <doctest.h>

#include <cmath>
#include <vector>

#include "pvnow/autograd.hpp"
#include "pvnow/ops.hpp"
#include "pvnow/optim.hpp"

using namespace pvnow;

TEST_CASE("one Adam step moves by the learning rate") {
  Tensor p = Tensor::from_values({1}, {0.0}, DType::f64);
  p.set_requires_grad(true);
  p.grad_mut<double>()[0] = 1.0;
  std::vector<Tensor> params{p};
  std::vector<AdamState> states{AdamState::for_param(p, {0.1})};
  adam_step(params, states);
  CHECK(p.item() == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(states[0].step == 1);
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("zero gradient leaves the parameter unchanged but advances the step") {
  Tensor p = Tensor::from_values({2}, {1.5, -2.0}, DType::f64);
  p.set_requires_grad(true);
  p.grad_mut<double>();
  std::vector<Tensor> params{p};
  std::vector<AdamState> states{AdamState::for_param(p)};
  adam_step(params, states);
  CHECK(p.values() == std::vector<double>{1.5, -2.0});
  CHECK(states[0].step == 1);
}

TEST_CASE("missing gradient is an error") {
  Tensor p = Tensor::zeros({1}, DType::f64);
  p.set_requires_grad(true);
  std::vector<Tensor> params{p};
  std::vector<AdamState> states{AdamState::for_param(p)};
  CHECK_THROWS_AS(adam_step(params, states), AutogradError);
}

TEST_CASE("Adam minimizes a quadratic") {
  for (DType dtype : {DType::f32, DType::f64}) {
    Tensor x = Tensor::zeros({1}, dtype);
    x.set_requires_grad(true);
    Adam opt;
    const std::vector<Tensor> group{x};
    opt.add_group(group, {0.1});
    for (int i = 0; i < 100; ++i) {
      const Tensor d = add_scalar(x, -3.0);
      backward(sum(mul(d, d)));
      opt.step();
    }
    CHECK(std::abs(x.item() - 3.0) < 0.05);
  }
}

TEST_CASE("parameter groups keep their own learning rates") {
  Tensor a = Tensor::zeros({1}, DType::f64), b = Tensor::zeros({1}, DType::f64);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Adam opt;
  const std::vector<Tensor> ga{a}, gb{b};
  opt.add_group(ga, {1e-3});
  opt.add_group(gb, {3e-4});
  backward(sum(add(a, b)));
  opt.step();
  CHECK(a.item() == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(b.item() == doctest::Approx(-3e-4).epsilon(1e-4));
}
