#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace dge {

// FLOP accounting convention: one multiply-accumulate counts as 2 FLOPs.
// Data movement (concat, split, reshape, padding, transpose) costs zero.
// Per-element costs for the remaining kernels are fixed constants, listed
// next to each formula below.

enum class FlopCategory : int {
  Conv = 0,
  MatMul,
  Elementwise,
  Norm,
  Pool,
  Resize,
  Softmax,
};
constexpr int kFlopCategoryCount = 7;

inline const char* flop_category_name(FlopCategory c) {
  static const char* names[kFlopCategoryCount] = {"conv",        "matmul", "elementwise", "norm",
                                                  "pool", "resize", "softmax"};
  return names[static_cast<int>(c)];
}

namespace flopcost {

// conv: 2*kH*kW*(Cin/g)*Cout*H'*W'*N, plus Cout*H'*W'*N when biased.
inline int64_t conv2d(int64_t n, int64_t cout, int64_t cin_per_group, int64_t kh, int64_t kw,
                      int64_t oh, int64_t ow, bool bias) {
  int64_t out = n * cout * oh * ow;
  return 2 * kh * kw * cin_per_group * out + (bias ? out : 0);
}

// matmul: 2*M*K*N.
inline int64_t matmul(int64_t m, int64_t k, int64_t n) { return 2 * m * k * n; }

// add/mul: 1 per output element.
inline int64_t elementwise(int64_t elems) { return elems; }

// sigmoid: 4 per element (negate, exp, add, divide).
inline int64_t sigmoid(int64_t elems) { return 4 * elems; }

// silu: 5 per element (sigmoid plus one multiply).
inline int64_t silu(int64_t elems) { return 5 * elems; }

// softmax: 4 per element (shift, exp, accumulate, divide).
inline int64_t softmax(int64_t elems) { return 4 * elems; }

// batch-inference norm: per-channel scale/shift precompute (2 per channel)
// plus 2 per element to apply.
inline int64_t norm_batch_inference(int64_t elems, int64_t channels) {
  return 2 * elems + 2 * channels;
}

// group norm: 7 per element (mean, variance, normalize, affine) plus 3 per
// group for the reciprocal stddev.
inline int64_t norm_group(int64_t elems, int64_t group_count) {
  return 7 * elems + 3 * group_count;
}

// layer norm over rows: same accounting as group norm with one group per row.
inline int64_t layer_norm(int64_t elems, int64_t rows) { return 7 * elems + 3 * rows; }

// average pooling: one add per window element plus one divide per output.
// window_elems is the sum of all window sizes (adaptive windows may overlap).
inline int64_t avg_pool(int64_t window_elems, int64_t out_elems) {
  return window_elems + out_elems;
}

// bilinear resize: 8 per output element.
inline int64_t bilinear(int64_t out_elems) { return 8 * out_elems; }

}  // namespace flopcost

/// Execution-side FLOP meter. When installed (see FlopScope), every kernel
/// adds its cost as it runs; this gives a measured total to cross-check the
/// analytic module-tree walk in stats.hpp.
struct FlopMeter {
  std::array<int64_t, kFlopCategoryCount> by_category{};

  void add(FlopCategory c, int64_t flops) { by_category[static_cast<int>(c)] += flops; }
  int64_t total() const {
    int64_t t = 0;
    for (int64_t v : by_category) t += v;
    return t;
  }
  int64_t conv() const { return by_category[static_cast<int>(FlopCategory::Conv)]; }
};

namespace detail {
inline FlopMeter*& flop_meter_slot() {
  thread_local FlopMeter* meter = nullptr;
  return meter;
}
}  // namespace detail

inline FlopMeter* current_flop_meter() { return detail::flop_meter_slot(); }

class FlopScope {
 public:
  explicit FlopScope(FlopMeter& meter) : prev_(detail::flop_meter_slot()) {
    detail::flop_meter_slot() = &meter;
  }
  ~FlopScope() { detail::flop_meter_slot() = prev_; }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopMeter* prev_;
};

}  // namespace dge
