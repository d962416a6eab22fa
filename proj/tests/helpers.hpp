#pragma once

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "dge/rng.hpp"
#include "dge/tensor.hpp"
#include "dge/testing/reference.hpp"

namespace th {

inline dge::Tensor rand_tensor(std::vector<int> shape, dge::Rng& rng, float lo = -2.0f,
                               float hi = 2.0f) {
  dge::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) {
    t[i] = lo + static_cast<float>(rng.uniform()) * (hi - lo);
  }
  return t;
}

inline double max_abs_diff(const dge::Tensor& a, const dge::testing::DTensor& b) {
  if (a.size() != b.size()) return 1e30;
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(double(a[i]) - b.v[static_cast<size_t>(i)]));
  }
  return m;
}

inline double max_abs_diff(const dge::Tensor& a, const dge::Tensor& b) {
  if (a.size() != b.size()) return 1e30;
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool bitwise_equal(const dge::Tensor& a, const dge::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace th
