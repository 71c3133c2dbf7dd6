#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "srm/matrix.hpp"

namespace srm {

enum class MixKind { RowRepeat, ColumnRepeat };

// Parameters of one structured causal mixing matrix. The dense form is an
// upper-triangular n x n matrix whose entry (i, j) for i <= j is
//   lambda^(j-i) * alpha_i   (RowRepeat)
//   lambda^(j-i) * alpha_j   (ColumnRepeat)
// with lambda derived from decay_raw. When diag_const is set, the main
// diagonal entry becomes diag_const * alpha_position instead.
template <typename T>
struct MixerHeadParams {
  MixKind kind = MixKind::RowRepeat;
  std::vector<T> alpha;        // per-position mixing weight, length n_ctx
  T decay_raw = T(0);          // unconstrained parameter behind lambda
  bool decay_enabled = true;
  std::optional<T> diag_const; // independent main-diagonal weight
  Matrix<T> bias;              // head_dim x n_ctx; empty means no bias term
  int head_dim = 0;

  int max_context() const { return static_cast<int>(alpha.size()); }
};

// k column-repeat filters applied to shifted row-slices of the zero-padded
// input. Only filter 0 carries a bias; the others have empty bias tensors.
template <typename T>
struct KernelMixerParams {
  std::vector<MixerHeadParams<T>> filters;

  int kernel_size() const { return static_cast<int>(filters.size()); }
  int head_dim() const { return filters.empty() ? 0 : filters.front().head_dim; }
  int max_context() const { return filters.empty() ? 0 : filters.front().max_context(); }
};

// lambda = 0.9 + 0.1 * sigmoid(decay_raw) in (0.9, 1); exactly 1 when the
// decay term is disabled.
template <typename T>
T derive_decay(T decay_raw, bool decay_enabled) {
  if (!decay_enabled) return T(1);
  return T(0.9) + T(0.1) / (T(1) + std::exp(-decay_raw));
}

template <typename T>
std::vector<T> decay_powers(T lambda, int n) {
  std::vector<T> p(static_cast<size_t>(n));
  T v = T(1);
  for (int i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = v;
    v *= lambda;
  }
  return p;
}

template <typename T>
Matrix<T> build_structured_matrix(const MixerHeadParams<T>& params, int n) {
  if (n < 1) throw std::invalid_argument("build_structured_matrix: n must be >= 1");
  if (n > params.max_context())
    throw std::length_error("build_structured_matrix: n exceeds configured context");
  const T lambda = derive_decay(params.decay_raw, params.decay_enabled);
  const std::vector<T> pow = decay_powers(lambda, n);
  Matrix<T> m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const T a = params.kind == MixKind::RowRepeat ? params.alpha[static_cast<size_t>(i)]
                                                    : params.alpha[static_cast<size_t>(j)];
      m(i, j) = pow[static_cast<size_t>(j - i)] * a;
    }
    if (params.diag_const) m(i, i) = *params.diag_const * params.alpha[static_cast<size_t>(i)];
  }
  return m;
}

// Y = X * M + B[:, :n]; the dense sequence-parallel form of one head.
template <typename T>
Matrix<T> parallel_mix(const Matrix<T>& x, const MixerHeadParams<T>& params) {
  if (x.rows() != params.head_dim)
    throw std::invalid_argument("parallel_mix: input rows do not match head_dim");
  const int n = x.cols();
  Matrix<T> m = build_structured_matrix(params, n);
  Matrix<T> y = matmul(x, m);
  if (!params.bias.empty()) {
    for (int r = 0; r < y.rows(); ++r)
      for (int c = 0; c < n; ++c) y(r, c) += params.bias(r, c);
  }
  return y;
}

// Row-slice of x shifted up by `shift` with zero padding at the bottom:
// out(r, :) = x(r + shift, :) when r + shift < rows, else 0.
template <typename T>
Matrix<T> shift_rows_up(const Matrix<T>& x, int shift) {
  Matrix<T> out(x.rows(), x.cols());
  for (int r = 0; r + shift < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) out(r, c) = x(r + shift, c);
  return out;
}

// Y = sum_f shift_rows_up(X, f) * M_f + B_0[:, :n]   (Eq. of the kernelized
// mixer: k filters over shifted slices of the bottom-zero-padded input).
template <typename T>
Matrix<T> parallel_mix_kernel(const Matrix<T>& x, const KernelMixerParams<T>& kparams) {
  if (kparams.filters.empty())
    throw std::invalid_argument("parallel_mix_kernel: no filters");
  if (x.rows() != kparams.head_dim())
    throw std::invalid_argument("parallel_mix_kernel: input rows do not match head_dim");
  const int n = x.cols();
  Matrix<T> y(x.rows(), n);
  for (int f = 0; f < kparams.kernel_size(); ++f) {
    const auto& filt = kparams.filters[static_cast<size_t>(f)];
    if (filt.kind != MixKind::ColumnRepeat)
      throw std::invalid_argument("parallel_mix_kernel: filters must be column-repeat");
    Matrix<T> m = build_structured_matrix(filt, n);
    Matrix<T> slice = shift_rows_up(x, f);
    gemm(y, slice, false, m, false, T(1), T(1));
  }
  const auto& bias = kparams.filters.front().bias;
  if (!bias.empty()) {
    for (int r = 0; r < y.rows(); ++r)
      for (int c = 0; c < n; ++c) y(r, c) += bias(r, c);
  }
  return y;
}

}  // namespace srm
