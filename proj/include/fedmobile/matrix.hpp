#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedmobile/error.hpp"

namespace fedmobile {

// Dense row-major matrix of doubles. This is the carrier for model weights,
// feature batches and gradients; the heavy arithmetic is delegated to Eigen
// through maps over the same storage.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, values.size() == rows * cols

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  bool empty() const { return rows == 0 || cols == 0; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const DenseMatrix& o) const = default;
};

namespace detail {
using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EigenRowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;

inline ConstMap map(const DenseMatrix& m) {
  return ConstMap(m.values.data(), static_cast<Eigen::Index>(m.rows),
                  static_cast<Eigen::Index>(m.cols));
}
inline Map map(DenseMatrix& m) {
  return Map(m.values.data(), static_cast<Eigen::Index>(m.rows),
             static_cast<Eigen::Index>(m.cols));
}
}  // namespace detail

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// C = A * B
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_shape(a.cols == b.rows, "matmul: " + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                                    "x" + std::to_string(b.cols));
  DenseMatrix c(a.rows, b.cols);
  detail::map(c).noalias() = detail::map(a) * detail::map(b);
  return c;
}

// C = A^T * B
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_shape(a.rows == b.rows, "matmul_tn: row mismatch " + std::to_string(a.rows) + " vs " +
                                    std::to_string(b.rows));
  DenseMatrix c(a.cols, b.cols);
  detail::map(c).noalias() = detail::map(a).transpose() * detail::map(b);
  return c;
}

// C = A * B^T
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_shape(a.cols == b.cols, "matmul_nt: col mismatch " + std::to_string(a.cols) + " vs " +
                                    std::to_string(b.cols));
  DenseMatrix c(a.rows, b.rows);
  detail::map(c).noalias() = detail::map(a) * detail::map(b).transpose();
  return c;
}

// m[r, :] += row for every r
inline void add_row_inplace(DenseMatrix& m, const std::vector<double>& row) {
  check_shape(m.cols == row.size(), "add_row_inplace: width mismatch");
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) += row[c];
}

inline std::vector<double> column_sums(const DenseMatrix& m) {
  std::vector<double> s(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) s[c] += m.at(r, c);
  return s;
}

inline void hadamard_inplace(DenseMatrix& m, const DenseMatrix& o) {
  check_shape(m.same_shape(o), "hadamard: shape mismatch");
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] *= o.values[i];
}

// y += a * x
inline void axpy_inplace(DenseMatrix& y, double a, const DenseMatrix& x) {
  check_shape(y.same_shape(x), "axpy: shape mismatch");
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += a * x.values[i];
}

inline void scale_inplace(DenseMatrix& m, double a) {
  for (double& v : m.values) v *= a;
}

}  // namespace fedmobile
