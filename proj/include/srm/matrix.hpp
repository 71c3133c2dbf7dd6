#pragma once

#include <cblas.h>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace srm {

// Dense row-major matrix. Column c of a (d x n) activation matrix holds the
// hidden vector for sequence position c.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, T(0)) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
  }

  static Matrix scalar(T v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
  }

  static Matrix column(std::span<const T> v) {
    Matrix m(static_cast<int>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m.data_[i] = v[i];
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::span<T> row(int r) { return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)}; }
  std::span<const T> row(int r) const {
    return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
  }

  std::vector<T> col(int c) const {
    std::vector<T> out(rows_);
    for (int r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  void set_col(int c, std::span<const T> v) {
    for (int r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }

  void set_row(int r, std::span<const T> v) {
    for (int c = 0; c < cols_; ++c) (*this)(r, c) = v[c];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

// C = alpha * op(A) * op(B) + beta * C.  BLAS-backed for float/double.
inline void gemm(Matrix<float>& c, const Matrix<float>& a, bool trans_a, const Matrix<float>& b,
                 bool trans_b, float alpha = 1.0f, float beta = 0.0f) {
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int kb = trans_b ? b.cols() : b.rows();
  const int n = trans_b ? b.rows() : b.cols();
  if (k != kb) throw std::invalid_argument("gemm: inner dimension mismatch");
  if (c.rows() != m || c.cols() != n) throw std::invalid_argument("gemm: output shape mismatch");
  if (m == 0 || n == 0) return;
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.data(),
              a.cols() > 0 ? a.cols() : 1, b.data(), b.cols() > 0 ? b.cols() : 1, beta, c.data(),
              c.cols() > 0 ? c.cols() : 1);
}

inline void gemm(Matrix<double>& c, const Matrix<double>& a, bool trans_a, const Matrix<double>& b,
                 bool trans_b, double alpha = 1.0, double beta = 0.0) {
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int kb = trans_b ? b.cols() : b.rows();
  const int n = trans_b ? b.rows() : b.cols();
  if (k != kb) throw std::invalid_argument("gemm: inner dimension mismatch");
  if (c.rows() != m || c.cols() != n) throw std::invalid_argument("gemm: output shape mismatch");
  if (m == 0 || n == 0) return;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.data(),
              a.cols() > 0 ? a.cols() : 1, b.data(), b.cols() > 0 ? b.cols() : 1, beta, c.data(),
              c.cols() > 0 ? c.cols() : 1);
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  Matrix<T> c(trans_a ? a.cols() : a.rows(), trans_b ? b.rows() : b.cols());
  gemm(c, a, trans_a, b, trans_b, T(1), T(0));
  return c;
}

// y = alpha * op(A) * x + beta * y
inline void gemv(std::span<float> y, const Matrix<float>& a, bool trans_a,
                 std::span<const float> x, float alpha = 1.0f, float beta = 0.0f) {
  const int m = a.rows();
  const int n = a.cols();
  if (static_cast<int>(x.size()) != (trans_a ? m : n) ||
      static_cast<int>(y.size()) != (trans_a ? n : m))
    throw std::invalid_argument("gemv: shape mismatch");
  cblas_sgemv(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, m, n, alpha, a.data(),
              n > 0 ? n : 1, x.data(), 1, beta, y.data(), 1);
}

inline void gemv(std::span<double> y, const Matrix<double>& a, bool trans_a,
                 std::span<const double> x, double alpha = 1.0, double beta = 0.0) {
  const int m = a.rows();
  const int n = a.cols();
  if (static_cast<int>(x.size()) != (trans_a ? m : n) ||
      static_cast<int>(y.size()) != (trans_a ? n : m))
    throw std::invalid_argument("gemv: shape mismatch");
  cblas_dgemv(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, m, n, alpha, a.data(),
              n > 0 ? n : 1, x.data(), 1, beta, y.data(), 1);
}

}  // namespace srm
