#pragma once

#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dge/tensor.hpp"

namespace dge {

/// Reverse-mode tape. Ops append one adjoint step per executed operation;
/// backward() replays them in exact reverse execution order. Single writer:
/// one tape per forward pass.
class GradTape {
 public:
  void record(const char* op, std::function<void()> adjoint) {
    if (!adjoint) {
      throw std::invalid_argument(std::string("tape: missing adjoint for op '") + op + "'");
    }
    steps_.push_back({op, std::move(adjoint)});
  }

  bool empty() const { return steps_.empty(); }
  size_t size() const { return steps_.size(); }

  /// Seeds output.grad with `seed` and accumulates gradients into every
  /// recorded input. Gradients add onto whatever is already in the slots.
  void backward(const Tensor& output, const Tensor& seed) {
    if (steps_.empty()) throw std::invalid_argument("tape: backward on empty tape");
    if (!output.same_shape(seed)) {
      throw std::invalid_argument("tape: seed shape " + shape_to_string(seed.shape()) +
                                  " does not match output shape " + shape_to_string(output.shape()));
    }
    float* g = output.grad();
    const float* s = seed.data();
    for (int64_t i = 0; i < output.size(); ++i) g[i] += s[i];
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->adjoint();
  }

 private:
  struct Step {
    const char* op;
    std::function<void()> adjoint;
  };
  std::vector<Step> steps_;
};

}  // namespace dge
