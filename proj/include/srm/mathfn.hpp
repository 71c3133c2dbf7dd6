#pragma once

#include <cmath>
#include <span>

namespace srm {

// Shared between the sequence-parallel (tape) and recurrent paths; the two
// representations must evaluate the identical scalar functions.
inline constexpr double kRmsNormEps = 1e-5;

template <typename T>
inline T gelu_scalar(T x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440L);
  return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
}

template <typename T>
inline T gelu_derivative(T x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440L);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794L);
  const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
  const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// y = gain * x / sqrt(mean(x^2) + eps), in place over a vector.
template <typename T>
inline void rms_norm_vec(std::span<const T> x, std::span<const T> gain, std::span<T> y) {
  T ms = T(0);
  for (size_t i = 0; i < x.size(); ++i) ms += x[i] * x[i];
  const T rho = T(1) / std::sqrt(ms / static_cast<T>(x.size()) + T(kRmsNormEps));
  for (size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] * rho;
}

}  // namespace srm
