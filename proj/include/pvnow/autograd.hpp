#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pvnow/tensor.hpp"

namespace pvnow {

/// Ordered record of differentiable ops for the current thread.
///
/// Ops append a node when any input requires a gradient. backward() replays the
/// nodes in reverse order, then consumes the tape: every tensor produced before
/// the replay becomes detached, so a second backward on the same loss fails.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& current();

  bool recording() const { return enabled_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
  void backward(const Tensor& loss);
  /// Drop all recorded nodes (e.g. graphs left over from evaluation passes).
  void clear();

 private:
  friend class NoGradGuard;

  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool enabled_ = true;
};

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populate d(loss)/d(t) for every tensor t with requires_grad that feeds `loss`.
void backward(const Tensor& loss);

/// True when an op over these inputs must be recorded.
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace pvnow
