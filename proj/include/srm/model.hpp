#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "srm/autograd.hpp"
#include "srm/config.hpp"
#include "srm/mathfn.hpp"
#include "srm/params.hpp"
#include "srm/recurrent.hpp"

namespace srm {

// Resolved tensor indices for one structured mixing matrix.
struct MixerIdx {
  int alpha = -1;
  int decay_raw = -1;
  int bias = -1;        // -1 for kernel filters past the first
  int diag_const = -1;  // -1 when the diagonal variant is off
};

struct HeadIdx {
  int in_proj = -1;  // per-head input projection (unique projections only)
  MixKind kind = MixKind::RowRepeat;
  MixerIdx mix;                   // single-kind head
  MixerIdx row_mix, col_mix;      // combined mode
  int combine = -1;               // 2x1 scalar pair for combined mode
  std::vector<MixerIdx> filters;  // kernelized mode
};

struct LayerIdx {
  int norm_mix = -1;
  int in_proj = -1;  // shared projection (head-parallel mode)
  int out_proj = -1;
  int norm_ff = -1;
  int ff_w1 = -1, ff_b1 = -1, ff_w2 = -1, ff_b2 = -1;
  std::vector<HeadIdx> heads;
};

// A config plus resolved indices into one ParamStore. Both representations
// read the same store; nothing is copied when switching between them.
template <typename T>
struct ModelView {
  SrmConfig config;
  const ParamStore<T>* params = nullptr;
  int embed = -1, final_norm = -1, lm_head = -1;
  std::vector<LayerIdx> layers;

  const Matrix<T>& tensor(int idx) const { return (*params)[idx]; }
};

inline MixKind single_head_kind(const SrmConfig& config, int head) {
  switch (config.head_mode) {
    case HeadMode::RowOnly: return MixKind::RowRepeat;
    case HeadMode::ColumnOnly: return MixKind::ColumnRepeat;
    case HeadMode::Mixed:
      return head < config.effective_heads() / 2 ? MixKind::RowRepeat : MixKind::ColumnRepeat;
    case HeadMode::Combined: break;
  }
  throw std::logic_error("single_head_kind: combined heads have no single kind");
}

template <typename T>
ModelView<T> make_model_view(const SrmConfig& config, const ParamStore<T>& params) {
  config.validate();
  ModelView<T> view;
  view.config = config;
  view.params = &params;
  view.embed = params.find("embed.weight");
  view.final_norm = params.find("final_norm.gain");
  view.lm_head = params.find("lm_head.weight");
  const int heads = config.effective_heads();
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string lp = "layers." + std::to_string(l) + ".";
    LayerIdx layer;
    layer.norm_mix = params.find(lp + "norm_mix.gain");
    if (config.use_projections && config.head_parallel)
      layer.in_proj = params.find(lp + "in_proj.weight");
    if (config.use_projections) layer.out_proj = params.find(lp + "out_proj.weight");
    layer.norm_ff = params.find(lp + "norm_ff.gain");
    layer.ff_w1 = params.find(lp + "ff.w1");
    layer.ff_b1 = params.find(lp + "ff.b1");
    layer.ff_w2 = params.find(lp + "ff.w2");
    layer.ff_b2 = params.find(lp + "ff.b2");
    for (int h = 0; h < heads; ++h) {
      const std::string hp = lp + "heads." + std::to_string(h) + ".";
      HeadIdx head;
      if (config.use_projections && !config.head_parallel)
        head.in_proj = params.find(hp + "in_proj.weight");
      auto mixer_at = [&](const std::string& prefix, bool with_bias) {
        MixerIdx m;
        m.alpha = params.find(prefix + ".alpha");
        m.decay_raw = params.find(prefix + ".decay_raw");
        if (with_bias) m.bias = params.find(prefix + ".bias");
        if (config.diag_const_enabled) m.diag_const = params.find(prefix + ".diag_const");
        return m;
      };
      if (config.kernelized()) {
        for (int f = 0; f < config.kernel_size; ++f)
          head.filters.push_back(mixer_at(hp + "mix.filters." + std::to_string(f), f == 0));
        head.kind = MixKind::ColumnRepeat;
      } else if (config.head_mode == HeadMode::Combined) {
        head.row_mix = mixer_at(hp + "row_mix", true);
        head.col_mix = mixer_at(hp + "col_mix", true);
        head.combine = params.find(hp + "combine");
      } else {
        head.kind = single_head_kind(config, h);
        head.mix = mixer_at(hp + "mix", true);
      }
      layer.heads.push_back(std::move(head));
    }
    view.layers.push_back(std::move(layer));
  }
  return view;
}

// Lazily binds store tensors to tape leaves so every sample in a batch
// shares one leaf (and one gradient slot) per parameter.
template <typename T>
class TapeBinder {
 public:
  TapeBinder(Tape<T>& tape, const ParamStore<T>& store)
      : tape_(&tape), store_(&store), node_of_(store.count(), -1) {}

  int operator()(int param_index) {
    int& node = node_of_[static_cast<size_t>(param_index)];
    if (node < 0) node = tape_->leaf((*store_)[param_index], param_index);
    return node;
  }

 private:
  Tape<T>* tape_;
  const ParamStore<T>* store_;
  std::vector<int> node_of_;
};

struct SampleForwardNodes {
  int logits = -1;                              // vocab x n
  std::vector<std::vector<int>> head_inputs;    // [layer][head] -> d_h x n node
};

namespace detail {

// Mixed output of one head in the parallel representation.
template <typename T>
int parallel_head_mix(Tape<T>& tape, TapeBinder<T>& bind, const SrmConfig& cfg,
                      const HeadIdx& head, int u, int n) {
  auto lambda_node = [&](const MixerIdx& m) {
    return cfg.decay_enabled ? tape.decay_from_raw(bind(m.decay_raw))
                             : tape.constant(Matrix<T>::scalar(T(1)));
  };
  auto diag_node = [&](const MixerIdx& m) { return m.diag_const >= 0 ? bind(m.diag_const) : -1; };
  auto mix_with = [&](const MixerIdx& m, MixKind kind, int input) {
    const int mat = tape.structured(bind(m.alpha), lambda_node(m), diag_node(m), kind, n);
    int y = tape.matmul(input, mat);
    if (m.bias >= 0) y = tape.add(y, tape.slice_cols(bind(m.bias), 0, n));
    return y;
  };
  if (!head.filters.empty()) {
    int y = -1;
    for (size_t f = 0; f < head.filters.size(); ++f) {
      const int shifted = f == 0 ? u : tape.shift_rows_up(u, static_cast<int>(f));
      const int yf = mix_with(head.filters[f], MixKind::ColumnRepeat, shifted);
      y = y < 0 ? yf : tape.add(y, yf);
    }
    return y;
  }
  if (head.combine >= 0) {
    const int y_row = mix_with(head.row_mix, MixKind::RowRepeat, u);
    const int y_col = mix_with(head.col_mix, MixKind::ColumnRepeat, u);
    const int a = tape.slice_rows(bind(head.combine), 0, 1);
    const int b = tape.slice_rows(bind(head.combine), 1, 1);
    return tape.add(tape.scale_by_scalar(y_row, a), tape.scale_by_scalar(y_col, b));
  }
  return mix_with(head.mix, head.kind, u);
}

}  // namespace detail

// Sequence-parallel forward of one sample on a tape. Used for training, for
// inference-time prefill cache reconstruction, and as one side of the
// representation-equivalence check.
template <typename T>
SampleForwardNodes forward_sample_tape(Tape<T>& tape, TapeBinder<T>& bind,
                                       const ModelView<T>& model, std::span<const int> tokens) {
  const SrmConfig& cfg = model.config;
  const int n = static_cast<int>(tokens.size());
  if (n < 1) throw std::invalid_argument("forward: empty token sequence");
  if (n > cfg.n_ctx) throw ContextOverflowError("forward: sequence exceeds n_ctx");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("forward: token id out of range");

  SampleForwardNodes out;
  const int heads = cfg.effective_heads();
  const int dh = cfg.head_dim();
  int x = tape.embed_cols(bind(model.embed), std::vector<int>(tokens.begin(), tokens.end()));
  for (const LayerIdx& layer : model.layers) {
    const int z = tape.rms_norm_cols(x, bind(layer.norm_mix));
    const int shared = layer.in_proj >= 0 ? tape.matmul(bind(layer.in_proj), z) : z;
    std::vector<int> head_inputs;
    std::vector<int> head_outputs;
    for (int h = 0; h < heads; ++h) {
      const HeadIdx& head = layer.heads[static_cast<size_t>(h)];
      int u;
      if (head.in_proj >= 0)
        u = tape.matmul(bind(head.in_proj), z);
      else if (heads > 1)
        u = tape.slice_rows(shared, h * dh, dh);
      else
        u = shared;
      head_inputs.push_back(u);
      head_outputs.push_back(detail::parallel_head_mix(tape, bind, cfg, head, u, n));
    }
    out.head_inputs.push_back(head_inputs);
    int mixed = heads > 1 ? tape.concat_rows(head_outputs) : head_outputs.front();
    if (layer.out_proj >= 0) mixed = tape.matmul(bind(layer.out_proj), mixed);
    x = tape.add(x, mixed);
    const int z2 = tape.rms_norm_cols(x, bind(layer.norm_ff));
    const int h1 = tape.gelu(tape.add_bias_cols(tape.matmul(bind(layer.ff_w1), z2), bind(layer.ff_b1)));
    const int ff = tape.add_bias_cols(tape.matmul(bind(layer.ff_w2), h1), bind(layer.ff_b2));
    x = tape.add(x, ff);
  }
  const int xf = tape.rms_norm_cols(x, bind(model.final_norm));
  out.logits = tape.matmul(bind(model.lm_head), xf);
  return out;
}

// Convenience forward without gradient extraction: per-sample logits
// (vocab x n). Logits at position t depend only on tokens 0..t.
template <typename T>
Matrix<T> forward_parallel_one(const ModelView<T>& model, std::span<const int> tokens) {
  Tape<T> tape;
  TapeBinder<T> bind(tape, *model.params);
  return tape.value(forward_sample_tape(tape, bind, model, tokens).logits);
}

template <typename T>
std::vector<Matrix<T>> forward_parallel(const ModelView<T>& model,
                                        const std::vector<std::vector<int>>& tokens) {
  std::vector<Matrix<T>> out;
  out.reserve(tokens.size());
  for (const auto& seq : tokens) out.push_back(forward_parallel_one(model, seq));
  return out;
}

// --- Recurrent representation ------------------------------------------------

template <typename T>
struct SampleState {
  std::vector<LayerCache<T>> layers;
  int position = 0;
  int last_token = -1;
  bool finished = false;
  std::vector<T> last_logits;

  long long cache_scalar_count() const {
    long long n = 0;
    for (const auto& l : layers) n += static_cast<long long>(l.scalar_count());
    return n;
  }
};

template <typename T>
struct GenerationState {
  std::vector<SampleState<T>> samples;

  long long cache_scalar_count() const {
    long long n = 0;
    for (const auto& s : samples) n += s.cache_scalar_count();
    return n;
  }
};

template <typename T>
SampleState<T> init_sample_state(const SrmConfig& config) {
  SampleState<T> state;
  const LayerSpec spec = config.layer_spec();
  state.layers.reserve(static_cast<size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) state.layers.push_back(init_layer_cache<T>(spec));
  state.last_logits.assign(static_cast<size_t>(config.vocab_size), T(0));
  return state;
}

template <typename T>
GenerationState<T> init_generation_state(const SrmConfig& config, int batch) {
  if (batch < 1) throw std::invalid_argument("init_generation_state: batch must be positive");
  GenerationState<T> state;
  state.samples.reserve(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) state.samples.push_back(init_sample_state<T>(config));
  return state;
}

namespace detail {

template <typename T>
inline T mixer_lambda(const ModelView<T>& m, const MixerIdx& idx, CachePrecision prec) {
  T lambda = derive_decay(m.tensor(idx.decay_raw)(0, 0), m.config.decay_enabled);
  if (prec == CachePrecision::Emulated16) lambda = round_to_half(lambda);
  return lambda;
}

template <typename T>
inline T mixer_own_scale(const ModelView<T>& m, const MixerIdx& idx) {
  return idx.diag_const >= 0 ? m.tensor(idx.diag_const)(0, 0) : T(1);
}

// Advances one head's cache by one position, accumulating the output into y.
template <typename T>
void recurrent_head_step(const ModelView<T>& m, const HeadIdx& head, std::span<const T> u,
                         LayerCache<T>& cache, size_t head_cache_base, int t, std::span<T> y,
                         CachePrecision prec) {
  const int dh = static_cast<int>(u.size());
  if (!head.filters.empty()) {
    std::vector<T> shifted(u.size());
    auto& hc = cache.heads[head_cache_base];
    for (size_t f = 0; f < head.filters.size(); ++f) {
      const MixerIdx& filt = head.filters[f];
      for (int i = 0; i < dh; ++i)
        shifted[static_cast<size_t>(i)] =
            (i + static_cast<int>(f) < dh) ? u[static_cast<size_t>(i + f)] : T(0);
      const Matrix<T>* bias = filt.bias >= 0 ? &m.tensor(filt.bias) : nullptr;
      step_col_core<T>(std::span<const T>(shifted),
                       std::span<T>(hc.state.data() + f * static_cast<size_t>(dh),
                                    static_cast<size_t>(dh)),
                       m.tensor(filt.alpha)(t, 0), mixer_own_scale(m, filt),
                       mixer_lambda(m, filt, prec), bias, t, y, prec);
    }
    return;
  }
  if (head.combine >= 0) {
    std::vector<T> y_row(u.size(), T(0));
    std::vector<T> y_col(u.size(), T(0));
    step_row_core<T>(u, std::span<T>(cache.heads[head_cache_base].state),
                     m.tensor(head.row_mix.alpha)(t, 0), mixer_own_scale(m, head.row_mix),
                     mixer_lambda(m, head.row_mix, prec),
                     head.row_mix.bias >= 0 ? &m.tensor(head.row_mix.bias) : nullptr, t,
                     std::span<T>(y_row), prec);
    step_col_core<T>(u, std::span<T>(cache.heads[head_cache_base + 1].state),
                     m.tensor(head.col_mix.alpha)(t, 0), mixer_own_scale(m, head.col_mix),
                     mixer_lambda(m, head.col_mix, prec),
                     head.col_mix.bias >= 0 ? &m.tensor(head.col_mix.bias) : nullptr, t,
                     std::span<T>(y_col), prec);
    const T a = m.tensor(head.combine)(0, 0);
    const T b = m.tensor(head.combine)(1, 0);
    for (int i = 0; i < dh; ++i)
      y[static_cast<size_t>(i)] += a * y_row[static_cast<size_t>(i)] + b * y_col[static_cast<size_t>(i)];
    return;
  }
  const MixerIdx& mix = head.mix;
  const Matrix<T>* bias = mix.bias >= 0 ? &m.tensor(mix.bias) : nullptr;
  auto state = std::span<T>(cache.heads[head_cache_base].state);
  if (head.kind == MixKind::RowRepeat)
    step_row_core<T>(u, state, m.tensor(mix.alpha)(t, 0), mixer_own_scale(m, mix),
                     mixer_lambda(m, mix, prec), bias, t, y, prec);
  else
    step_col_core<T>(u, state, m.tensor(mix.alpha)(t, 0), mixer_own_scale(m, mix),
                     mixer_lambda(m, mix, prec), bias, t, y, prec);
}

}  // namespace detail

// One recurrent-representation step for one sample. Advances every layer
// cache by one position and returns the next-token logits.
template <typename T>
std::vector<T> forward_recurrent_one(const ModelView<T>& model, int token, SampleState<T>& state,
                                     CachePrecision prec = CachePrecision::Full32) {
  const SrmConfig& cfg = model.config;
  if (token < 0 || token >= cfg.vocab_size)
    throw std::out_of_range("forward_recurrent_one: token id out of range");
  if (state.position >= cfg.n_ctx)
    throw ContextOverflowError("forward_recurrent_one: context exhausted");
  const int t = state.position;
  const int d = cfg.d_model;
  const int heads = cfg.effective_heads();
  const int dh = cfg.head_dim();
  const bool combined = !cfg.kernelized() && cfg.head_mode == HeadMode::Combined;

  std::vector<T> x(static_cast<size_t>(d));
  const Matrix<T>& embed = model.tensor(model.embed);
  for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] = embed(token, i);

  std::vector<T> z(static_cast<size_t>(d));
  std::vector<T> mixed(static_cast<size_t>(d));
  std::vector<T> u_shared(static_cast<size_t>(d));
  std::vector<T> u_head(static_cast<size_t>(dh));
  const int ff_dim = cfg.ff_expansion * d;
  std::vector<T> ff_hidden(static_cast<size_t>(ff_dim));
  std::vector<T> ff_out(static_cast<size_t>(d));

  // gain tensors are (d x 1), contiguous in row-major storage
  auto gain_span = [&](int idx) {
    const Matrix<T>& g = model.tensor(idx);
    return std::span<const T>(g.data(), g.size());
  };

  for (size_t l = 0; l < model.layers.size(); ++l) {
    const LayerIdx& layer = model.layers[l];
    LayerCache<T>& cache = state.layers[l];
    rms_norm_vec<T>(x, gain_span(layer.norm_mix), z);
    std::fill(mixed.begin(), mixed.end(), T(0));
    if (layer.in_proj >= 0)
      gemv(std::span<T>(u_shared), model.tensor(layer.in_proj), false, std::span<const T>(z));
    for (int h = 0; h < heads; ++h) {
      const HeadIdx& head = layer.heads[static_cast<size_t>(h)];
      std::span<const T> u;
      if (head.in_proj >= 0) {
        gemv(std::span<T>(u_head), model.tensor(head.in_proj), false, std::span<const T>(z));
        u = std::span<const T>(u_head);
      } else if (layer.in_proj >= 0) {
        u = std::span<const T>(u_shared.data() + static_cast<size_t>(h) * dh,
                               static_cast<size_t>(dh));
      } else {
        u = std::span<const T>(z.data() + static_cast<size_t>(h) * dh, static_cast<size_t>(dh));
      }
      auto y = std::span<T>(mixed.data() + static_cast<size_t>(h) * dh, static_cast<size_t>(dh));
      detail::recurrent_head_step(model, head, u, cache,
                                  static_cast<size_t>(h) * (combined ? 2 : 1), t, y, prec);
    }
    cache.position = t + 1;
    if (layer.out_proj >= 0) {
      std::vector<T> projected(static_cast<size_t>(d));
      gemv(std::span<T>(projected), model.tensor(layer.out_proj), false, std::span<const T>(mixed));
      for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += projected[static_cast<size_t>(i)];
    } else {
      for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += mixed[static_cast<size_t>(i)];
    }
    rms_norm_vec<T>(x, gain_span(layer.norm_ff), z);
    gemv(std::span<T>(ff_hidden), model.tensor(layer.ff_w1), false, std::span<const T>(z));
    {
      const Matrix<T>& b1 = model.tensor(layer.ff_b1);
      for (int i = 0; i < ff_dim; ++i)
        ff_hidden[static_cast<size_t>(i)] = gelu_scalar(ff_hidden[static_cast<size_t>(i)] + b1(i, 0));
    }
    gemv(std::span<T>(ff_out), model.tensor(layer.ff_w2), false, std::span<const T>(ff_hidden));
    {
      const Matrix<T>& b2 = model.tensor(layer.ff_b2);
      for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += ff_out[static_cast<size_t>(i)] + b2(i, 0);
    }
  }
  rms_norm_vec<T>(x, gain_span(model.final_norm), z);
  std::vector<T> logits(static_cast<size_t>(cfg.vocab_size));
  gemv(std::span<T>(logits), model.tensor(model.lm_head), false,
       std::span<const T>(z.data(), static_cast<size_t>(d)));
  state.position = t + 1;
  state.last_token = token;
  state.last_logits = logits;
  return logits;
}

template <typename T>
struct StepResult {
  Matrix<T> logits;             // batch x vocab
  std::vector<uint8_t> fresh;   // 0 marks a stale row from a finished sample
};

// Batch step. A sample whose context is exhausted has its finished flag set
// and returns its previous logits marked stale; the batch keeps going.
template <typename T>
StepResult<T> forward_recurrent_step(const ModelView<T>& model, std::span<const int> tokens,
                                     GenerationState<T>& state,
                                     CachePrecision prec = CachePrecision::Full32) {
  const int batch = static_cast<int>(state.samples.size());
  if (static_cast<int>(tokens.size()) != batch)
    throw std::invalid_argument("forward_recurrent_step: token count does not match batch");
  StepResult<T> out;
  out.logits = Matrix<T>(batch, model.config.vocab_size);
  out.fresh.assign(static_cast<size_t>(batch), 0);
  for (int b = 0; b < batch; ++b) {
    SampleState<T>& sample = state.samples[static_cast<size_t>(b)];
    if (!sample.finished && sample.position >= model.config.n_ctx) sample.finished = true;
    if (sample.finished) {
      out.logits.set_row(b, sample.last_logits);
      continue;
    }
    const std::vector<T> logits = forward_recurrent_one(model, tokens[static_cast<size_t>(b)],
                                                        sample, prec);
    out.logits.set_row(b, logits);
    out.fresh[static_cast<size_t>(b)] = 1;
  }
  return out;
}

// Teacher-forced recurrent pass over a whole sequence; column t holds the
// logits after consuming token t. Matches forward_parallel_one columnwise.
template <typename T>
Matrix<T> forward_recurrent_teacher(const ModelView<T>& model, std::span<const int> tokens,
                                    CachePrecision prec = CachePrecision::Full32) {
  SampleState<T> state = init_sample_state<T>(model.config);
  Matrix<T> out(model.config.vocab_size, static_cast<int>(tokens.size()));
  for (size_t t = 0; t < tokens.size(); ++t) {
    const std::vector<T> logits = forward_recurrent_one(model, tokens[t], state, prec);
    out.set_col(static_cast<int>(t), logits);
  }
  return out;
}

// Prompt prefill via the recurrent loop.
template <typename T>
void prefill_recurrent(const ModelView<T>& model, std::span<const int> prompt,
                       SampleState<T>& state, CachePrecision prec = CachePrecision::Full32) {
  for (int token : prompt) forward_recurrent_one(model, token, state, prec);
}

// Prompt prefill via one parallel forward followed by cache reconstruction:
// the per-head running sums are rebuilt from the captured head inputs with
// the same update recursion the recurrent path uses.
template <typename T>
void prefill_parallel(const ModelView<T>& model, std::span<const int> prompt,
                      SampleState<T>& state) {
  const SrmConfig& cfg = model.config;
  const int n = static_cast<int>(prompt.size());
  if (n < 1) throw std::invalid_argument("prefill_parallel: empty prompt");
  Tape<T> tape;
  TapeBinder<T> bind(tape, *model.params);
  const SampleForwardNodes nodes = forward_sample_tape(tape, bind, model, prompt);
  const bool combined = !cfg.kernelized() && cfg.head_mode == HeadMode::Combined;
  const int dh = cfg.head_dim();
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const LayerIdx& layer = model.layers[l];
    LayerCache<T>& cache = state.layers[l];
    for (size_t h = 0; h < layer.heads.size(); ++h) {
      const HeadIdx& head = layer.heads[h];
      const Matrix<T>& u = tape.value(nodes.head_inputs[l][h]);
      const size_t base = h * (combined ? 2 : 1);
      auto accumulate = [&](std::span<T> dest, const MixerIdx& idx, bool weight_alpha, int shift) {
        const T lambda = detail::mixer_lambda(model, idx, CachePrecision::Full32);
        const Matrix<T>& alpha = model.tensor(idx.alpha);
        for (int m = 0; m < n; ++m) {
          const T w = weight_alpha ? alpha(m, 0) : T(1);
          for (int i = 0; i < dh; ++i) {
            const T v = (i + shift < dh) ? u(i + shift, m) : T(0);
            dest[static_cast<size_t>(i)] = lambda * (dest[static_cast<size_t>(i)] + w * v);
          }
        }
      };
      if (!head.filters.empty()) {
        auto& hc = cache.heads[base];
        for (size_t f = 0; f < head.filters.size(); ++f)
          accumulate(std::span<T>(hc.state.data() + f * static_cast<size_t>(dh),
                                  static_cast<size_t>(dh)),
                     head.filters[f], false, static_cast<int>(f));
      } else if (head.combine >= 0) {
        accumulate(std::span<T>(cache.heads[base].state), head.row_mix, true, 0);
        accumulate(std::span<T>(cache.heads[base + 1].state), head.col_mix, false, 0);
      } else if (head.kind == MixKind::RowRepeat) {
        accumulate(std::span<T>(cache.heads[base].state), head.mix, true, 0);
      } else {
        accumulate(std::span<T>(cache.heads[base].state), head.mix, false, 0);
      }
    }
    cache.position = n;
  }
  const Matrix<T>& logits = tape.value(nodes.logits);
  state.last_logits = logits.col(n - 1);
  state.position = n;
  state.last_token = prompt[static_cast<size_t>(n - 1)];
}

}  // namespace srm
