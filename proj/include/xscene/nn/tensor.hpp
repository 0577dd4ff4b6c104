#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xscene/common/error.hpp"

namespace xscene::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles with an optional gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_))
      fail(ErrorKind::input, "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Same data viewed under another shape with equal element count.
  Tensor reshaped(Shape shape) const& {
    Tensor t(std::move(shape), data_);
    return t;
  }
  Tensor reshaped(Shape shape) && {
    require(element_count(shape) == data_.size(), ErrorKind::input,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
    grad_.clear();
    return std::move(*this);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

inline void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    fail(ErrorKind::input, what + ": expected shape " + shape_string(expected) + ", got " + shape_string(t.shape()));
}

}  // namespace xscene::nn
