#include "idn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace idn {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.data_.resize(element_count(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() requires a one-element tensor, got " + to_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_) throw ShapeError("add", shape_, other.shape_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() != 2 || begin > end || end > shape_[0]) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     to_string(shape_));
  }
  const std::size_t c = shape_[1];
  Tensor out = uninitialized({end - begin, c});
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * c), data_.begin() + static_cast<std::ptrdiff_t>(end * c),
            out.data_.begin());
  return out;
}

Tensor Tensor::row(std::size_t r) const {
  Tensor t = slice_rows(r, r + 1);
  t.shape_ = {shape_[1]};
  return t;
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("sub", a.shape(), b.shape());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(Tensor a, double s) {
  a *= s;
  return a;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
  Tensor out = Tensor::uninitialized(b.rank() == 2 ? Shape{m, n} : Shape{m});
  ConstMap am(a.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap bm(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MutMap om(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  om.noalias() = am * bm;
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose requires rank 2, got " + to_string(a.shape()));
  const std::size_t r = a.shape()[0];
  const std::size_t c = a.shape()[1];
  Tensor out = Tensor::uninitialized({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor vstack(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.cols() != c) throw ShapeError("vstack", parts.front().shape(), p.shape());
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * c);
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({rows, c}, std::move(data));
}

}  // namespace idn
