#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dge {

inline std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

namespace detail {
struct TensorStorage {
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is requested
};
}  // namespace detail

/// Dense tensor of 32-bit floats, rank 1-4, row-major, canonical feature
/// layout (N,C,H,W). Copies are shallow: they alias the same data and
/// gradient buffers. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), st_(std::make_shared<detail::TensorStorage>()) {
    check_shape(shape_);
    st_->data.assign(static_cast<size_t>(shape_product(shape_)), 0.0f);
  }

  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), st_(std::make_shared<detail::TensorStorage>()) {
    check_shape(shape_);
    if (static_cast<int64_t>(data.size()) != shape_product(shape_)) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
    st_->data = std::move(data);
  }

  static Tensor full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    for (float& v : t.st_->data) v = value;
    return t;
  }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor ones(std::vector<int> shape) { return full(std::move(shape), 1.0f); }

  bool defined() const { return static_cast<bool>(st_); }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
  int64_t size() const { return st_ ? static_cast<int64_t>(st_->data.size()) : 0; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  float* data() { return st_->data.data(); }
  const float* data() const { return st_->data.data(); }
  std::vector<float>& vec() { return st_->data; }
  const std::vector<float>& vec() const { return st_->data; }

  float& operator[](int64_t i) { return st_->data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return st_->data[static_cast<size_t>(i)]; }

  // Row-major offset for the canonical 4-D layout.
  int64_t offset4(int n, int c, int h, int w) const {
    return ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  float& at4(int n, int c, int h, int w) { return st_->data[static_cast<size_t>(offset4(n, c, h, w))]; }
  float at4(int n, int c, int h, int w) const { return st_->data[static_cast<size_t>(offset4(n, c, h, w))]; }

  // Gradient slot. Lazily allocated (zero-filled) within the shared storage,
  // so every alias of this tensor observes the same gradient buffer.
  bool has_grad() const { return st_ && !st_->grad.empty(); }
  void ensure_grad() const {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0f);
  }
  float* grad() const {
    ensure_grad();
    return st_->grad.data();
  }
  void zero_grad() const {
    if (st_ && !st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0f);
  }

  /// Deep copy of the values. The gradient slot starts fresh (absent).
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<detail::TensorStorage>();
    t.st_->data = st_->data;
    return t;
  }

  /// Same storage (data and grad), new shape with identical element count.
  Tensor reshaped(std::vector<int> new_shape) const {
    check_shape(new_shape);
    if (shape_product(new_shape) != size()) {
      throw std::invalid_argument("reshape: element count mismatch, " + shape_to_string(shape_) +
                                  " -> " + shape_to_string(new_shape));
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.st_ = st_;
    return t;
  }

 private:
  static void check_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw std::invalid_argument("tensor: rank must be 1-4, got shape " + shape_to_string(shape));
    }
    for (size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1) {
        throw std::invalid_argument("tensor: extent on axis " + std::to_string(i) +
                                    " must be >= 1, got " + std::to_string(shape[i]));
      }
    }
  }

  std::vector<int> shape_;
  std::shared_ptr<detail::TensorStorage> st_;
};

}  // namespace dge
