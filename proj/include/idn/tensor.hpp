#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace idn {

using Shape = std::vector<std::size_t>;

/// Allocator whose value-less construct leaves doubles uninitialized.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;

  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using Storage = std::vector<double, DefaultInitAllocator<double>>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Dense row-major array of doubles with an explicit shape.
///
/// Rank 1 holds a single vector; rank 2 holds a batch with one sample per row
/// and features along the last axis. Most of the library works with rank 2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Contents are unspecified; for results that overwrite every element.
  static Tensor uninitialized(Shape shape);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent for rank 2, 1 for rank 1.
  std::size_t rows() const;
  /// Extent of the last axis.
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a one-element tensor.
  double item() const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Copy of rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor row(std::size_t r) const;

 private:
  Shape shape_;
  Storage data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Dense matrix product of rank-2 tensors (or matrix by rank-1 vector).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Stack rank-2 tensors with matching column counts.
Tensor vstack(std::span<const Tensor> parts);

}  // namespace idn
