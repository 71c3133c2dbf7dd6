#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srm/half.hpp"
#include "srm/mixing.hpp"

namespace srm {

struct ContextOverflowError : std::length_error {
  explicit ContextOverflowError(const std::string& what) : std::length_error(what) {}
};

// Production caches are 32-bit; Emulated16 rounds the running state (and the
// decay constant) to fp16-representable values after every update so the
// half-precision behaviour can be tested without native fp16 arithmetic.
enum class CachePrecision { Full32, Emulated16 };

// Running sum term of one structured mixing matrix: head_dim scalars for a
// row/column head, kernel_size * head_dim for a kernelized head.
template <typename T>
struct HeadCache {
  std::vector<T> state;
};

template <typename T>
struct LayerCache {
  std::vector<HeadCache<T>> heads;
  int position = 0;

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& h : heads) n += h.state.size();
    return n;
  }
};

// Cache structure of one layer, derived from the model config.
struct LayerSpec {
  int n_heads = 1;  // effective head count (>= 1)
  int head_dim = 0;
  bool combined = false;  // one row + one column matrix per head
  int kernel_size = 1;
};

inline long long layer_cache_scalar_count(const LayerSpec& spec) {
  const long long d = static_cast<long long>(spec.n_heads) * spec.head_dim;
  if (spec.kernel_size > 1) return static_cast<long long>(spec.kernel_size) * d;
  return spec.combined ? 2 * d : d;
}

template <typename T>
LayerCache<T> init_layer_cache(const LayerSpec& spec) {
  if (spec.kernel_size > 1 && spec.combined)
    throw std::invalid_argument("init_layer_cache: combined heads with kernel_size > 1");
  const int caches_per_head = spec.combined ? 2 : 1;
  const int states_per_cache = spec.kernel_size > 1 ? spec.kernel_size : 1;
  LayerCache<T> cache;
  cache.heads.reserve(static_cast<size_t>(spec.n_heads) * caches_per_head);
  for (int h = 0; h < spec.n_heads; ++h) {
    for (int c = 0; c < caches_per_head; ++c) {
      HeadCache<T> hc;
      hc.state.assign(static_cast<size_t>(states_per_cache) * spec.head_dim, T(0));
      cache.heads.push_back(std::move(hc));
    }
  }
  return cache;
}

template <typename T>
std::vector<LayerCache<T>> init_cache(const LayerSpec& spec, int batch) {
  if (batch < 1) throw std::invalid_argument("init_cache: batch must be positive");
  std::vector<LayerCache<T>> caches;
  caches.reserve(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) caches.push_back(init_layer_cache<T>(spec));
  return caches;
}

namespace detail {

// One row-repeat update, accumulated into y:
//   y += own_scale * alpha_t * x + bias_t + S;   S <- lambda * (S + alpha_t * x)
// own_scale is 1, or the independent diagonal weight when that variant is on.
template <typename T>
inline void step_row_core(std::span<const T> x, std::span<T> state, T alpha_t, T own_scale,
                          T lambda, const Matrix<T>* bias, int t, std::span<T> y,
                          CachePrecision prec) {
  const int d = static_cast<int>(x.size());
  for (int i = 0; i < d; ++i) {
    const T ax = alpha_t * x[static_cast<size_t>(i)];
    y[static_cast<size_t>(i)] += own_scale * ax + state[static_cast<size_t>(i)];
    state[static_cast<size_t>(i)] = lambda * (state[static_cast<size_t>(i)] + ax);
  }
  if (bias)
    for (int i = 0; i < d; ++i) y[static_cast<size_t>(i)] += (*bias)(i, t);
  if (prec == CachePrecision::Emulated16) round_span_to_half(state);
}

// One column-repeat update, accumulated into y:
//   y += own_scale * alpha_t * x + alpha_t * S + bias_t;   S <- lambda * (S + x)
template <typename T>
inline void step_col_core(std::span<const T> x, std::span<T> state, T alpha_t, T own_scale,
                          T lambda, const Matrix<T>* bias, int t, std::span<T> y,
                          CachePrecision prec) {
  const int d = static_cast<int>(x.size());
  for (int i = 0; i < d; ++i) {
    y[static_cast<size_t>(i)] +=
        own_scale * alpha_t * x[static_cast<size_t>(i)] + alpha_t * state[static_cast<size_t>(i)];
    state[static_cast<size_t>(i)] = lambda * (state[static_cast<size_t>(i)] + x[static_cast<size_t>(i)]);
  }
  if (bias)
    for (int i = 0; i < d; ++i) y[static_cast<size_t>(i)] += (*bias)(i, t);
  if (prec == CachePrecision::Emulated16) round_span_to_half(state);
}

template <typename T>
inline T step_lambda(const MixerHeadParams<T>& p, CachePrecision prec) {
  T lambda = derive_decay(p.decay_raw, p.decay_enabled);
  if (prec == CachePrecision::Emulated16) lambda = round_to_half(lambda);
  return lambda;
}

template <typename T>
inline void check_step(std::span<const T> x, const MixerHeadParams<T>& p, size_t state_size,
                       int t) {
  if (static_cast<int>(x.size()) != p.head_dim)
    throw std::invalid_argument("recurrent step: input size does not match head_dim");
  if (state_size != static_cast<size_t>(p.head_dim))
    throw std::invalid_argument("recurrent step: cache size does not match head_dim");
  if (t < 0 || t >= p.max_context())
    throw ContextOverflowError("recurrent step: position exceeds configured context");
}

}  // namespace detail

// Row-repeat step; the output reads the state before the current token
// enters it (both closed forms exclude the current token from the sum).
template <typename T>
std::vector<T> step_row(std::span<const T> x, HeadCache<T>& cache, const MixerHeadParams<T>& p,
                        int t, CachePrecision prec = CachePrecision::Full32) {
  detail::check_step(x, p, cache.state.size(), t);
  std::vector<T> y(x.size(), T(0));
  detail::step_row_core<T>(x, std::span<T>(cache.state), p.alpha[static_cast<size_t>(t)],
                           p.diag_const ? *p.diag_const : T(1), detail::step_lambda(p, prec),
                           p.bias.empty() ? nullptr : &p.bias, t, std::span<T>(y), prec);
  return y;
}

template <typename T>
std::vector<T> step_col(std::span<const T> x, HeadCache<T>& cache, const MixerHeadParams<T>& p,
                        int t, CachePrecision prec = CachePrecision::Full32) {
  detail::check_step(x, p, cache.state.size(), t);
  std::vector<T> y(x.size(), T(0));
  detail::step_col_core<T>(x, std::span<T>(cache.state), p.alpha[static_cast<size_t>(t)],
                           p.diag_const ? *p.diag_const : T(1), detail::step_lambda(p, prec),
                           p.bias.empty() ? nullptr : &p.bias, t, std::span<T>(y), prec);
  return y;
}

// Kernelized step: one column-repeat update per filter on the filter's
// shifted slice of the input column, outputs summed. cache.state holds the
// k per-filter states back to back; only filter 0 carries a bias.
template <typename T>
std::vector<T> step_kernel(std::span<const T> x, HeadCache<T>& cache,
                           const KernelMixerParams<T>& kp, int t,
                           CachePrecision prec = CachePrecision::Full32) {
  const int d = kp.head_dim();
  const int k = kp.kernel_size();
  if (static_cast<int>(x.size()) != d)
    throw std::invalid_argument("step_kernel: input size does not match head_dim");
  if (cache.state.size() != static_cast<size_t>(k) * d)
    throw std::invalid_argument("step_kernel: cache size does not match k * head_dim");
  if (t < 0 || t >= kp.max_context())
    throw ContextOverflowError("step_kernel: position exceeds configured context");
  std::vector<T> y(static_cast<size_t>(d), T(0));
  std::vector<T> shifted(static_cast<size_t>(d));
  for (int f = 0; f < k; ++f) {
    const auto& filt = kp.filters[static_cast<size_t>(f)];
    for (int i = 0; i < d; ++i)
      shifted[static_cast<size_t>(i)] = (i + f < d) ? x[static_cast<size_t>(i + f)] : T(0);
    detail::step_col_core<T>(
        std::span<const T>(shifted), std::span<T>(cache.state.data() + static_cast<size_t>(f) * d,
                                                  static_cast<size_t>(d)),
        filt.alpha[static_cast<size_t>(t)], filt.diag_const ? *filt.diag_const : T(1),
        detail::step_lambda(filt, prec), filt.bias.empty() ? nullptr : &filt.bias, t,
        std::span<T>(y), prec);
  }
  return y;
}

}  // namespace srm
