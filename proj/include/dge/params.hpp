#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "dge/errors.hpp"
#include "dge/rng.hpp"
#include "dge/tensor.hpp"
#include "dge/weights.hpp"

// Parameter bookkeeping shared by all modules. A registry is either
// initializing (draws fresh tensors from the RNG and records them in a
// WeightStore, in call order) or binding (fetches tensors from a loaded
// store, validating shapes and, at finish(), that nothing was left over).
// Modules call param() once per tensor with a stable dotted name, so the
// on-disk entry order is the module construction order.

namespace dge {

enum class Init { HeNormal, Zero, One };

class ParamRegistry {
 public:
  static ParamRegistry initializing(WeightStore& store, Rng& rng) {
    ParamRegistry reg;
    reg.store_ = &store;
    reg.rng_ = &rng;
    return reg;
  }

  static ParamRegistry binding(const WeightStore& store) {
    ParamRegistry reg;
    reg.bound_ = &store;
    return reg;
  }

  /// fan_in is only used by Init::HeNormal.
  Tensor param(const std::string& name, const std::vector<int>& shape, Init init,
               int64_t fan_in = 0) {
    if (!consumed_.insert(name).second) {
      throw validation_error("param '" + name + "' requested twice");
    }
    if (bound_) {
      if (!bound_->has(name)) throw validation_error("weights: missing tensor '" + name + "'");
      const Tensor& t = bound_->get(name);
      if (t.shape() != shape) {
        throw validation_error("weights: tensor '" + name + "' has shape " +
                               shape_to_string(t.shape()) + ", expected " + shape_to_string(shape));
      }
      return t;
    }
    Tensor t(shape);
    switch (init) {
      case Init::Zero:
        break;
      case Init::One: {
        float* p = t.data();
        for (int64_t i = 0; i < t.size(); ++i) p[i] = 1.0f;
        break;
      }
      case Init::HeNormal: {
        if (fan_in <= 0) throw validation_error("param '" + name + "': fan_in must be positive");
        const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
        float* p = t.data();
        for (int64_t i = 0; i < t.size(); ++i) p[i] = rng_->normal(stddev);
        break;
      }
    }
    store_->add(name, t);
    return t;
  }

  /// Binding mode only: rejects stores that contain tensors no module asked for.
  void finish() const {
    if (!bound_) return;
    std::vector<std::string> extra;
    for (const auto& [name, t] : bound_->entries()) {
      (void)t;
      if (!consumed_.count(name)) extra.push_back(name);
    }
    if (!extra.empty()) {
      std::string msg = "weights: " + std::to_string(extra.size()) + " unexpected tensor(s):";
      for (size_t i = 0; i < extra.size() && i < 4; ++i) msg += " '" + extra[i] + "'";
      if (extra.size() > 4) msg += " ...";
      throw validation_error(msg);
    }
  }

  bool is_binding() const { return bound_ != nullptr; }

 private:
  ParamRegistry() = default;
  WeightStore* store_ = nullptr;
  Rng* rng_ = nullptr;
  const WeightStore* bound_ = nullptr;
  std::set<std::string> consumed_;
};

}  // namespace dge
