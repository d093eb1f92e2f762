#include "pvnow/optim.hpp"

#include <cmath>

namespace pvnow {

AdamState AdamState::for_param(const Tensor& param, AdamConfig config) {
  AdamState s;
  s.m.assign(param.numel(), 0.0);
  s.v.assign(param.numel(), 0.0);
  s.config = config;
  return s;
}

namespace {

void update(Tensor& param, AdamState& state) {
  if (!param.has_grad()) throw AutogradError("adam_step: parameter has no gradient");
  if (state.m.size() != param.numel()) {
    throw ShapeError("adam_step: state size " + std::to_string(state.m.size()) +
                     " does not match parameter " + to_string(param.shape()));
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  dispatch(param.dtype(), [&]<class T>() {
    auto p = param.data<T>();
    auto g = param.grad<T>();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * gi;
      state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = state.m[i] / bc1;
      const double vhat = state.v[i] / bc2;
      p[i] = static_cast<T>(p[i] - c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  });
  param.zero_grad();
}

}  // namespace

void adam_step(std::span<Tensor> params, std::span<AdamState> states) {
  if (params.size() != states.size()) {
    throw std::invalid_argument("adam_step: parameter and state counts differ");
  }
  for (const auto& p : params) {
    if (!p.has_grad()) throw AutogradError("adam_step: parameter has no gradient");
  }
  for (std::size_t i = 0; i < params.size(); ++i) update(params[i], states[i]);
}

void Adam::add_group(std::span<const Tensor> params, AdamConfig config) {
  for (const auto& p : params) {
    params_.push_back(p);
    states_.push_back(AdamState::for_param(p, config));
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].has_grad()) update(params_[i], states_[i]);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace pvnow
