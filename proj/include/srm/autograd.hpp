#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "srm/mathfn.hpp"
#include "srm/matrix.hpp"
#include "srm/mixing.hpp"
#include "srm/params.hpp"

namespace srm {

// Reverse-mode tape over a fixed operator set: matmul, adds, scaling, RMS
// norm, GELU, slicing/concatenation, embedding gather, the structured-matrix
// construction, the sigmoid decay reparameterization, and the fused
// softmax-CE / GRPO sequence losses. Nodes are matrices; scalars are 1x1.
//
// Node ids are creation-ordered, which doubles as a topological order for
// the backward sweep. A Tape must stay at a fixed address once ops have been
// recorded (closures capture `this`), so it is pinned non-copyable.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int leaf(const Matrix<T>& v, int param_id = -1) {
    const int id = push(v);
    param_ids_[static_cast<size_t>(id)] = param_id;
    return id;
  }

  int constant(Matrix<T> v) { return push(std::move(v)); }

  const Matrix<T>& value(int id) const { return values_[static_cast<size_t>(id)]; }
  const Matrix<T>& grad(int id) const { return grads_[static_cast<size_t>(id)]; }
  bool has_grad(int id) const { return touched_[static_cast<size_t>(id)]; }

  int matmul(int a, int b) {
    const int id = push(srm::matmul(value(a), value(b)));
    backward_fns_[static_cast<size_t>(id)] = [this, id, a, b]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      gemm(grad_ref(a), g, false, value(b), true, T(1), T(1));
      gemm(grad_ref(b), value(a), true, g, false, T(1), T(1));
    };
    return id;
  }

  int add(int a, int b) {
    const Matrix<T>& va = value(a);
    const Matrix<T>& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("tape add: shape mismatch");
    Matrix<T> out = va;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += vb.data()[i];
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, a, b]() {
      accumulate(a, grads_[static_cast<size_t>(id)]);
      accumulate(b, grads_[static_cast<size_t>(id)]);
    };
    return id;
  }

  // Y = X + b broadcast over columns; b is (rows x 1).
  int add_bias_cols(int x, int b) {
    const Matrix<T>& vx = value(x);
    const Matrix<T>& vb = value(b);
    if (vb.cols() != 1 || vb.rows() != vx.rows())
      throw std::invalid_argument("tape add_bias_cols: bias shape mismatch");
    Matrix<T> out = vx;
    for (int r = 0; r < out.rows(); ++r)
      for (int c = 0; c < out.cols(); ++c) out(r, c) += vb(r, 0);
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, b]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      accumulate(x, g);
      Matrix<T>& gb = grad_ref(b);
      for (int r = 0; r < g.rows(); ++r) {
        T s = T(0);
        for (int c = 0; c < g.cols(); ++c) s += g(r, c);
        gb(r, 0) += s;
      }
    };
    return id;
  }

  // Y = s * X with a trainable 1x1 scalar s.
  int scale_by_scalar(int x, int s) {
    const Matrix<T>& vx = value(x);
    const T sv = value(s)(0, 0);
    Matrix<T> out = vx;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= sv;
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, s]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      const Matrix<T>& vx = value(x);
      const T sv = value(s)(0, 0);
      Matrix<T>& gx = grad_ref(x);
      T gs = T(0);
      for (size_t i = 0; i < g.size(); ++i) {
        gx.data()[i] += sv * g.data()[i];
        gs += vx.data()[i] * g.data()[i];
      }
      grad_ref(s)(0, 0) += gs;
    };
    return id;
  }

  // Column-wise RMS normalization with learned gain (rows x 1):
  //   y = gain * x / sqrt(mean(x^2) + eps)
  int rms_norm_cols(int x, int gain) {
    const Matrix<T>& vx = value(x);
    const Matrix<T>& vg = value(gain);
    if (vg.cols() != 1 || vg.rows() != vx.rows())
      throw std::invalid_argument("tape rms_norm_cols: gain shape mismatch");
    const int d = vx.rows();
    const int n = vx.cols();
    std::vector<T> inv_rms(static_cast<size_t>(n));
    Matrix<T> out(d, n);
    for (int c = 0; c < n; ++c) {
      T ms = T(0);
      for (int r = 0; r < d; ++r) ms += vx(r, c) * vx(r, c);
      const T rho = T(1) / std::sqrt(ms / static_cast<T>(d) + T(kRmsNormEps));
      inv_rms[static_cast<size_t>(c)] = rho;
      for (int r = 0; r < d; ++r) out(r, c) = vg(r, 0) * vx(r, c) * rho;
    }
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, gain, inv_rms = std::move(inv_rms)]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      const Matrix<T>& vx = value(x);
      const Matrix<T>& vg = value(gain);
      Matrix<T>& gx = grad_ref(x);
      Matrix<T>& gg = grad_ref(gain);
      const int d = vx.rows();
      for (int c = 0; c < g.cols(); ++c) {
        const T rho = inv_rms[static_cast<size_t>(c)];
        T dot = T(0);  // sum_i g_i * gain_i * x_i
        for (int r = 0; r < d; ++r) {
          gg(r, 0) += g(r, c) * vx(r, c) * rho;
          dot += g(r, c) * vg(r, 0) * vx(r, c);
        }
        const T k = dot * rho * rho * rho / static_cast<T>(d);
        for (int r = 0; r < d; ++r) gx(r, c) += vg(r, 0) * rho * g(r, c) - k * vx(r, c);
      }
    };
    return id;
  }

  int gelu(int x) {
    const Matrix<T>& vx = value(x);
    Matrix<T> out = vx;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = gelu_scalar(out.data()[i]);
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      const Matrix<T>& vx = value(x);
      Matrix<T>& gx = grad_ref(x);
      for (size_t i = 0; i < g.size(); ++i)
        gx.data()[i] += g.data()[i] * gelu_derivative(vx.data()[i]);
    };
    return id;
  }

  int slice_rows(int x, int r0, int nrows) {
    const Matrix<T>& vx = value(x);
    if (r0 < 0 || r0 + nrows > vx.rows())
      throw std::invalid_argument("tape slice_rows: out of range");
    Matrix<T> out(nrows, vx.cols());
    for (int r = 0; r < nrows; ++r)
      for (int c = 0; c < vx.cols(); ++c) out(r, c) = vx(r0 + r, c);
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, r0]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      Matrix<T>& gx = grad_ref(x);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gx(r0 + r, c) += g(r, c);
    };
    return id;
  }

  int concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("tape concat_rows: empty");
    int rows = 0;
    const int cols = value(parts.front()).cols();
    for (int p : parts) {
      if (value(p).cols() != cols) throw std::invalid_argument("tape concat_rows: column mismatch");
      rows += value(p).rows();
    }
    Matrix<T> out(rows, cols);
    int r0 = 0;
    for (int p : parts) {
      const Matrix<T>& vp = value(p);
      for (int r = 0; r < vp.rows(); ++r)
        for (int c = 0; c < cols; ++c) out(r0 + r, c) = vp(r, c);
      r0 += vp.rows();
    }
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, parts]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      int r0 = 0;
      for (int p : parts) {
        Matrix<T>& gp = grad_ref(p);
        for (int r = 0; r < gp.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c) gp(r, c) += g(r0 + r, c);
        r0 += gp.rows();
      }
    };
    return id;
  }

  int slice_cols(int x, int c0, int ncols) {
    const Matrix<T>& vx = value(x);
    if (c0 < 0 || c0 + ncols > vx.cols())
      throw std::invalid_argument("tape slice_cols: out of range");
    Matrix<T> out(vx.rows(), ncols);
    for (int r = 0; r < vx.rows(); ++r)
      for (int c = 0; c < ncols; ++c) out(r, c) = vx(r, c0 + c);
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, c0]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      Matrix<T>& gx = grad_ref(x);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gx(r, c0 + c) += g(r, c);
    };
    return id;
  }

  // Shifted row-slice with bottom zero padding (kernelized mixing).
  int shift_rows_up(int x, int shift) {
    const int id = push(srm::shift_rows_up(value(x), shift));
    backward_fns_[static_cast<size_t>(id)] = [this, id, x, shift]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      Matrix<T>& gx = grad_ref(x);
      for (int r = 0; r + shift < gx.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gx(r + shift, c) += g(r, c);
    };
    return id;
  }

  // X(:, t) = table(tokens[t], :) for each position t.
  int embed_cols(int table, std::vector<int> tokens) {
    const Matrix<T>& vt = value(table);
    Matrix<T> out(vt.cols(), static_cast<int>(tokens.size()));
    for (size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t] < 0 || tokens[t] >= vt.rows())
        throw std::out_of_range("tape embed_cols: token id out of range");
      for (int r = 0; r < vt.cols(); ++r) out(r, static_cast<int>(t)) = vt(tokens[t], r);
    }
    const int id = push(std::move(out));
    backward_fns_[static_cast<size_t>(id)] = [this, id, table, tokens = std::move(tokens)]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      Matrix<T>& gt = grad_ref(table);
      for (size_t t = 0; t < tokens.size(); ++t)
        for (int r = 0; r < g.rows(); ++r) gt(tokens[t], r) += g(r, static_cast<int>(t));
    };
    return id;
  }

  // lambda = 0.9 + 0.1 * sigmoid(theta); the trainable-decay reparameterization.
  int decay_from_raw(int theta) {
    const T th = value(theta)(0, 0);
    const T sig = T(1) / (T(1) + std::exp(-th));
    const int id = push(Matrix<T>::scalar(T(0.9) + T(0.1) * sig));
    backward_fns_[static_cast<size_t>(id)] = [this, id, theta, sig]() {
      grad_ref(theta)(0, 0) += grads_[static_cast<size_t>(id)](0, 0) * T(0.1) * sig * (T(1) - sig);
    };
    return id;
  }

  // Structured causal mixing matrix as a differentiable function of alpha
  // (n_ctx x 1), lambda (1x1) and the optional diagonal weight (1x1, id -1
  // when absent).
  int structured(int alpha, int lambda, int diag, MixKind kind, int n) {
    const Matrix<T>& va = value(alpha);
    if (n < 1) throw std::invalid_argument("tape structured: n must be >= 1");
    if (n > va.rows()) throw std::length_error("tape structured: n exceeds configured context");
    const T lv = value(lambda)(0, 0);
    const std::vector<T> pow = decay_powers(lv, n);
    Matrix<T> m(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        const T a = kind == MixKind::RowRepeat ? va(i, 0) : va(j, 0);
        m(i, j) = pow[static_cast<size_t>(j - i)] * a;
      }
      if (diag >= 0) m(i, i) = value(diag)(0, 0) * va(i, 0);
    }
    const int id = push(std::move(m));
    backward_fns_[static_cast<size_t>(id)] = [this, id, alpha, lambda, diag, kind, n]() {
      const Matrix<T>& g = grads_[static_cast<size_t>(id)];
      const Matrix<T>& va = value(alpha);
      const T lv = value(lambda)(0, 0);
      const std::vector<T> pow = decay_powers(lv, n);
      Matrix<T>& ga = grad_ref(alpha);
      T glam = T(0);
      T gdiag = T(0);
      const T dv = diag >= 0 ? value(diag)(0, 0) : T(1);
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          const int ai = kind == MixKind::RowRepeat ? i : j;
          const T a = va(ai, 0);
          if (i == j) {
            ga(ai, 0) += g(i, i) * (diag >= 0 ? dv : T(1));
            if (diag >= 0) gdiag += g(i, i) * a;
          } else {
            ga(ai, 0) += g(i, j) * pow[static_cast<size_t>(j - i)];
            glam += g(i, j) * static_cast<T>(j - i) * pow[static_cast<size_t>(j - i - 1)] * a;
          }
        }
      }
      grad_ref(lambda)(0, 0) += glam;
      if (diag >= 0) grad_ref(diag)(0, 0) += gdiag;
    };
    return id;
  }

  // Sum of -log softmax(logits[:, t])[targets[t]] over masked positions.
  // Returns a 1x1 node; per-position losses are kept for inspection.
  int masked_ce(int logits, std::vector<int> targets, std::vector<uint8_t> mask) {
    const Matrix<T>& z = value(logits);
    const int n = z.cols();
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
      throw std::invalid_argument("tape masked_ce: targets/mask length mismatch");
    Matrix<T> probs(z.rows(), n);
    std::vector<T> losses(static_cast<size_t>(n), T(0));
    T total = T(0);
    for (int c = 0; c < n; ++c) {
      if (!mask[static_cast<size_t>(c)]) continue;
      if (targets[static_cast<size_t>(c)] < 0 || targets[static_cast<size_t>(c)] >= z.rows())
        throw std::out_of_range("tape masked_ce: target id out of range");
      softmax_col(z, c, probs);
      const T p = probs(targets[static_cast<size_t>(c)], c);
      losses[static_cast<size_t>(c)] = -std::log(p);
      total += losses[static_cast<size_t>(c)];
    }
    const int id = push(Matrix<T>::scalar(total));
    ce_losses_[id] = std::move(losses);
    backward_fns_[static_cast<size_t>(id)] =
        [this, id, logits, targets = std::move(targets), mask = std::move(mask),
         probs = std::move(probs)]() {
          const T seed = grads_[static_cast<size_t>(id)](0, 0);
          Matrix<T>& gz = grad_ref(logits);
          for (int c = 0; c < gz.cols(); ++c) {
            if (!mask[static_cast<size_t>(c)]) continue;
            for (int r = 0; r < gz.rows(); ++r) gz(r, c) += seed * probs(r, c);
            gz(targets[static_cast<size_t>(c)], c) -= seed;
          }
        };
    return id;
  }

  const std::vector<T>& ce_position_losses(int ce_node) const { return ce_losses_.at(ce_node); }

  // One rollout's contribution to the GRPO objective:
  //   weight * sum_t (A - beta * kl_t),
  //   kl_t = exp(ref - cur) - (ref - cur) - 1
  // where cur_t = log softmax(logits[:, first_pred_col + t])[emitted[t]].
  // The advantage term carries the policy-gradient pullback A * d(cur)/d(z)
  // (ratio-1 surrogate: value A, gradient A * grad log-prob).
  int grpo_sequence_term(int logits, int first_pred_col, std::vector<int> emitted,
                         T advantage, std::vector<T> ref_logprobs, T beta, T weight) {
    const Matrix<T>& z = value(logits);
    const int len = static_cast<int>(emitted.size());
    if (static_cast<int>(ref_logprobs.size()) != len)
      throw std::invalid_argument("tape grpo term: ref log-prob length mismatch");
    if (first_pred_col < 0 || first_pred_col + len > z.cols())
      throw std::invalid_argument("tape grpo term: prediction columns out of range");
    Matrix<T> probs(z.rows(), len);
    std::vector<T> cur(static_cast<size_t>(len));
    T total = T(0);
    for (int t = 0; t < len; ++t) {
      softmax_col_into(z, first_pred_col + t, probs, t);
      const T p = probs(emitted[static_cast<size_t>(t)], t);
      cur[static_cast<size_t>(t)] = std::log(p);
      const T delta = ref_logprobs[static_cast<size_t>(t)] - cur[static_cast<size_t>(t)];
      const T kl = std::exp(delta) - delta - T(1);
      total += advantage - beta * kl;
    }
    const int id = push(Matrix<T>::scalar(weight * total));
    backward_fns_[static_cast<size_t>(id)] =
        [this, id, logits, first_pred_col, emitted = std::move(emitted),
         ref_logprobs = std::move(ref_logprobs), cur = std::move(cur), advantage, beta, weight,
         probs = std::move(probs)]() {
          const T seed = grads_[static_cast<size_t>(id)](0, 0) * weight;
          Matrix<T>& gz = grad_ref(logits);
          for (size_t t = 0; t < emitted.size(); ++t) {
            const T delta = ref_logprobs[t] - cur[t];
            const T dcur = advantage + beta * (std::exp(delta) - T(1));
            const int c = first_pred_col + static_cast<int>(t);
            for (int r = 0; r < gz.rows(); ++r) gz(r, c) -= seed * dcur * probs(r, static_cast<int>(t));
            gz(emitted[t], c) += seed * dcur;
          }
        };
    return id;
  }

  int sum_scalars(const std::vector<int>& terms) {
    T total = T(0);
    for (int t : terms) total += value(t)(0, 0);
    const int id = push(Matrix<T>::scalar(total));
    backward_fns_[static_cast<size_t>(id)] = [this, id, terms]() {
      const T g = grads_[static_cast<size_t>(id)](0, 0);
      for (int t : terms) grad_ref(t)(0, 0) += g;
    };
    return id;
  }

  void backward(int root, T seed = T(1)) {
    if (value(root).size() != 1) throw std::invalid_argument("tape backward: root must be scalar");
    grads_.assign(values_.size(), Matrix<T>());
    touched_.assign(values_.size(), false);
    grad_ref(root)(0, 0) = seed;
    for (int id = static_cast<int>(values_.size()) - 1; id >= 0; --id) {
      if (!touched_[static_cast<size_t>(id)]) continue;
      auto& fn = backward_fns_[static_cast<size_t>(id)];
      if (fn) fn();
    }
  }

  // Adds leaf gradients into `grads` (indexed by the param_id given to leaf()).
  void accumulate_param_grads(ParamStore<T>& grads) const {
    for (size_t id = 0; id < values_.size(); ++id) {
      const int pid = param_ids_[id];
      if (pid < 0 || !touched_[id]) continue;
      Matrix<T>& dst = grads[pid];
      const Matrix<T>& src = grads_[id];
      for (size_t k = 0; k < dst.size(); ++k) dst.data()[k] += src.data()[k];
    }
  }

  size_t node_count() const { return values_.size(); }

 private:
  int push(Matrix<T> v) {
    values_.push_back(std::move(v));
    backward_fns_.emplace_back();
    param_ids_.push_back(-1);
    return static_cast<int>(values_.size()) - 1;
  }

  Matrix<T>& grad_ref(int id) {
    Matrix<T>& g = grads_[static_cast<size_t>(id)];
    if (g.empty() && value(id).size() > 0)
      g = Matrix<T>(value(id).rows(), value(id).cols());
    touched_[static_cast<size_t>(id)] = true;
    return g;
  }

  void accumulate(int id, const Matrix<T>& g) {
    Matrix<T>& dst = grad_ref(id);
    for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += g.data()[i];
  }

  static void softmax_col(const Matrix<T>& z, int c, Matrix<T>& probs) {
    softmax_col_into(z, c, probs, c);
  }

  static void softmax_col_into(const Matrix<T>& z, int src_col, Matrix<T>& probs, int dst_col) {
    T mx = z(0, src_col);
    for (int r = 1; r < z.rows(); ++r) mx = std::max(mx, z(r, src_col));
    T sum = T(0);
    for (int r = 0; r < z.rows(); ++r) {
      const T e = std::exp(z(r, src_col) - mx);
      probs(r, dst_col) = e;
      sum += e;
    }
    for (int r = 0; r < z.rows(); ++r) probs(r, dst_col) /= sum;
  }

  std::vector<Matrix<T>> values_;
  std::vector<Matrix<T>> grads_;
  std::vector<bool> touched_;
  std::vector<std::function<void()>> backward_fns_;
  std::vector<int> param_ids_;
  std::unordered_map<int, std::vector<T>> ce_losses_;
};

}  // namespace srm
