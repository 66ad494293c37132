#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "socl/errors.hpp"

namespace socl::ten {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << rows << "x" << cols << "]";
    return os.str();
  }
};

// Dense row-major 2-D array of doubles. Vectors are 1 x n.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : shape_{rows, cols}, data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("Mat: " + std::to_string(data_.size()) + " values do not fill " +
                       shape_.str());
    }
  }
  Mat(std::initializer_list<std::initializer_list<double>> rows) {
    shape_.rows = rows.size();
    shape_.cols = rows.size() ? rows.begin()->size() : 0;
    data_.reserve(shape_.size());
    for (const auto& r : rows) {
      if (r.size() != shape_.cols) throw ShapeError("Mat: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Mat row(std::span<const double> v) {
    return Mat(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * shape_.cols, shape_.cols}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * shape_.cols, shape_.cols};
  }
  std::vector<double> row_vec(std::size_t r) const {
    auto s = row_span(r);
    return {s.begin(), s.end()};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Mat& operator+=(const Mat& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Mat&) const = default;

 private:
  void check_same(const Mat& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw ShapeError(std::string("Mat ") + what + ": " + shape_.str() + " vs " + o.shape_.str());
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline MapC view(const Mat& m) { return MapC(m.data(), m.rows(), m.cols()); }
inline Map view(Mat& m) { return Map(m.data(), m.rows(), m.cols()); }

// out (+)= op(a) * op(b)
inline void gemm(const Mat& a, bool ta, const Mat& b, bool tb, Mat& out, bool accumulate) {
  auto A = view(a);
  auto B = view(b);
  auto C = view(out);
  if (!accumulate) C.setZero();
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

}  // namespace detail

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape().str() + " x " + b.shape().str());
  }
  Mat out(a.rows(), b.cols());
  detail::gemm(a, false, b, false, out, false);
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace socl::ten
