// Dense row-major n-dimensional arrays.
//
// Tensor<T> is a plain value type: a shape and a contiguous buffer. The
// autodiff layer (autodiff.hpp) wraps it with gradient slots; everything
// below that layer works on Tensor directly.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "avword/common.hpp"

namespace avword {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (std::size_t e : shape_)
      AVW_CHECK(e > 0, "tensor extents must be positive, got " << shape_str(shape_));
    data_.assign(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    AVW_CHECK(data_.size() == shape_numel(shape_),
              "data length " << data_.size() << " does not match shape "
                             << shape_str(shape_));
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // reshape to an equal-numel shape (copy-free, this is a value type)
  Tensor reshaped(Shape s) const {
    AVW_CHECK(shape_numel(s) == numel(), "reshape " << shape_str(shape_) << " -> "
                                                    << shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) AVW_FAIL("non-finite values in " << what);
}

}  // namespace avword
