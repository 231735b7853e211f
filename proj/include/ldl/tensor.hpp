#ifndef LDL_TENSOR_HPP
#define LDL_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ldl/errors.hpp"
#include "ldl/rng.hpp"

namespace ldl {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles, 1 to 4 axes. Training shuffles
/// large transient buffers, so allocation avoids value-initialization
/// where the caller overwrites every element anyway.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : Tensor(std::move(shape), true) {}

  Tensor(const Tensor& other) : shape_(other.shape_), numel_(other.numel_) {
    if (numel_ > 0) {
      data_ = std::make_unique_for_overwrite<double[]>(numel_);
      std::memcpy(data_.get(), other.data_.get(), numel_ * sizeof(double));
    }
  }

  Tensor(Tensor&&) noexcept = default;

  Tensor& operator=(const Tensor& other) {
    if (this != &other) *this = Tensor(other);
    return *this;
  }

  Tensor& operator=(Tensor&&) noexcept = default;

  /// Allocation without the zeroing pass; every element must be written
  /// before it is read.
  static Tensor no_init(Shape shape) { return Tensor(std::move(shape), false); }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t = no_init(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor from_vector(std::vector<double> values) {
    if (values.empty()) throw dim_error("empty vector tensor");
    Tensor t = no_init({values.size()});
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size(), c = rows.begin()->size();
    Tensor t = no_init({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw dim_error("ragged row in tensor literal");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  /// Entries i.i.d. uniform in [-bound, bound).
  static Tensor uniform(Shape shape, double bound, Rng& rng) {
    Tensor t = no_init(std::move(shape));
    for (std::size_t i = 0; i < t.numel_; ++i)
      t.data_[i] = rng.uniform(-bound, bound);
    return t;
  }

  static Tensor normal(Shape shape, double stddev, Rng& rng) {
    Tensor t = no_init(std::move(shape));
    for (std::size_t i = 0; i < t.numel_; ++i)
      t.data_[i] = stddev * rng.normal();
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const { return numel_; }
  bool empty() const { return numel_ == 0; }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }
  std::span<double> values() { return {data_.get(), numel_}; }
  std::span<const double> values() const { return {data_.get(), numel_}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (std::size_t i = 0; i < numel_; ++i)
      if (!std::isfinite(data_[i])) return false;
    return true;
  }

  void fill(double v) {
    for (std::size_t i = 0; i < numel_; ++i) data_[i] = v;
  }

  /// Number of trailing-axis columns; rows() * cols() == numel().
  std::size_t cols() const { return shape_.back(); }
  std::size_t rows() const { return numel_ / shape_.back(); }

  /// Same data, new extents; element count must be unchanged.
  Tensor reshaped(Shape shape) const {
    Tensor t = no_init(std::move(shape));
    if (t.numel_ != numel_)
      throw dim_error("reshape: element count changes " + shape_str(shape_) +
                      " -> " + shape_str(t.shape_));
    std::memcpy(t.data_.get(), data_.get(), numel_ * sizeof(double));
    return t;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_) return false;
    for (std::size_t i = 0; i < a.numel_; ++i)
      if (a.data_[i] != b.data_[i]) return false;
    return true;
  }
  friend bool operator!=(const Tensor& a, const Tensor& b) {
    return !(a == b);
  }

 private:
  Tensor(Shape shape, bool zero) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4)
      throw dim_error("tensor rank must be 1..4, got " +
                      std::to_string(shape_.size()));
    numel_ = 1;
    for (std::size_t e : shape_) {
      if (e == 0) throw dim_error("zero extent in shape " + shape_str(shape_));
      numel_ *= e;
    }
    data_ = std::make_unique_for_overwrite<double[]>(numel_);
    if (zero) std::memset(data_.get(), 0, numel_ * sizeof(double));
  }

  Shape shape_;
  std::size_t numel_ = 0;
  std::unique_ptr<double[]> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (!a.same_shape(b))
    throw dim_error(std::string(op) + ": shape mismatch " +
                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace ldl

#endif  // LDL_TENSOR_HPP
