#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "srm/config.hpp"
#include "srm/matrix.hpp"
#include "srm/rng.hpp"

namespace srm {

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
};

// All trainable tensors in a fixed, config-derived order. Scalars are 1x1
// tensors. Optimizer moments and gradients reuse the same layout.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Matrix<T>> tensors;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, int rows, int cols) {
    names.push_back(name);
    tensors.emplace_back(rows, cols);
    index.emplace(name, static_cast<int>(tensors.size()) - 1);
    return static_cast<int>(tensors.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::out_of_range("ParamStore: no tensor named " + name);
    return it->second;
  }

  Matrix<T>& operator[](int i) { return tensors[static_cast<size_t>(i)]; }
  const Matrix<T>& operator[](int i) const { return tensors[static_cast<size_t>(i)]; }

  size_t count() const { return tensors.size(); }

  long long scalar_count() const {
    long long n = 0;
    for (const auto& t : tensors) n += static_cast<long long>(t.size());
    return n;
  }

  void zero() {
    for (auto& t : tensors) t.fill(T(0));
  }
};

// Tensor layout for a config, in checkpoint/manifest order.
std::vector<TensorSpec> param_schema(const SrmConfig& config);

long long param_count(const SrmConfig& config);

template <typename T>
ParamStore<T> make_param_store(const SrmConfig& config) {
  ParamStore<T> store;
  for (const auto& spec : param_schema(config)) store.add(spec.name, spec.rows, spec.cols);
  return store;
}

template <typename T>
ParamStore<T> zeros_like(const ParamStore<T>& other) {
  ParamStore<T> store;
  for (size_t i = 0; i < other.count(); ++i)
    store.add(other.names[i], other.tensors[i].rows(), other.tensors[i].cols());
  return store;
}

template <typename T, typename U>
ParamStore<T> cast_store(const ParamStore<U>& other) {
  ParamStore<T> store;
  for (size_t i = 0; i < other.count(); ++i) {
    int id = store.add(other.names[i], other.tensors[i].rows(), other.tensors[i].cols());
    for (size_t k = 0; k < other.tensors[i].size(); ++k)
      store.tensors[static_cast<size_t>(id)].data()[k] = static_cast<T>(other.tensors[i].data()[k]);
  }
  return store;
}

namespace detail {
inline bool name_ends_with(const std::string& name, const char* suffix) {
  const std::string s(suffix);
  return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
}
}  // namespace detail

// Initialization: embeddings/projections uniform in +-1/sqrt(fan_in), alpha
// uniform in +-1/sqrt(n_ctx), biases zero, norm gains one, combination
// scalars 0.5, decay_raw 2.0 (lambda ~ 0.988), diag_const 1 (neutral).
template <typename T>
ParamStore<T> init_params(const SrmConfig& config, uint64_t seed) {
  ParamStore<T> store = make_param_store<T>(config);
  Rng rng(derive_seed(seed, 0xA11CE));
  const double inv_sqrt_ctx = 1.0 / std::sqrt(static_cast<double>(config.n_ctx));
  for (size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store.names[i];
    Matrix<T>& t = store.tensors[i];
    if (detail::name_ends_with(name, ".gain")) {
      t.fill(T(1));
    } else if (detail::name_ends_with(name, ".alpha")) {
      for (size_t k = 0; k < t.size(); ++k)
        t.data()[k] = static_cast<T>(rng.uniform(-inv_sqrt_ctx, inv_sqrt_ctx));
    } else if (detail::name_ends_with(name, ".decay_raw")) {
      t.fill(T(2));
    } else if (detail::name_ends_with(name, ".diag_const")) {
      t.fill(T(1));
    } else if (detail::name_ends_with(name, ".combine")) {
      t.fill(T(0.5));
    } else if (detail::name_ends_with(name, ".bias") || detail::name_ends_with(name, ".b1") ||
               detail::name_ends_with(name, ".b2")) {
      t.fill(T(0));
    } else {
      // weight matrices: embedding, projections, FF, LM head
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
      for (size_t k = 0; k < t.size(); ++k)
        t.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  return store;
}

}  // namespace srm
