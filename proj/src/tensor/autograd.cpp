#include "pvnow/autograd.hpp"

#include <algorithm>

namespace pvnow {

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  auto& impl = output.impl();
  impl.requires_grad = true;
  impl.tape_generation = generation_;
  impl.tape_index = nodes_.size();
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw AutogradError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw AutogradError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  const auto& impl = loss.impl();
  if (impl.tape_index == detail::no_producer) {
    throw AutogradError("backward: loss was not produced by a recorded op (detached graph)");
  }
  if (impl.tape_generation != generation_ || impl.tape_index >= nodes_.size() ||
      !nodes_[impl.tape_index].output.same(loss)) {
    throw AutogradError(
        "backward: graph already consumed or cleared; re-run the forward pass first");
  }

  Tensor root = loss;
  dispatch(root.dtype(), [&]<class T>() {
    auto g = root.grad_mut<T>();
    g[0] += T(1);
  });
  for (std::size_t i = impl.tape_index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;
    node.backward();
  }
  clear();
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().enabled_) {
  Tape::current().enabled_ = false;
}

NoGradGuard::~NoGradGuard() { Tape::current().enabled_ = previous_; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

}  // namespace pvnow
