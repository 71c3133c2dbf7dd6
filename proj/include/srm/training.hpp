#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "srm/model.hpp"
#include "srm/rng.hpp"

namespace srm {

// ---- shifted cross-entropy ---------------------------------------------------

struct CeResult {
  double mean = 0.0;
  long long count = 0;                              // masked positions
  std::vector<std::vector<float>> per_position;     // -log p, 0 where unmasked
};

// mask[t] marks positions whose NEXT token contributes: the loss term at a
// masked t is -log softmax(logits[:, t])[tokens[t + 1]]. A fully-masked-out
// batch is an error, not a silent zero.
CeResult shifted_ce_loss(const std::vector<Matrix<float>>& logits,
                         const std::vector<std::vector<int>>& tokens,
                         const std::vector<std::vector<uint8_t>>& mask);

// Fraction of masked positions where argmax(logits[:, t]) == tokens[t + 1].
double masked_next_token_accuracy(const std::vector<Matrix<float>>& logits,
                                  const std::vector<std::vector<int>>& tokens,
                                  const std::vector<std::vector<uint8_t>>& mask);

// ---- optimizer ---------------------------------------------------------------

struct OptimizerConfig {
  float lr = 5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  float max_grad_norm = 0.0f;  // 0 disables clipping
  int warmup_steps = 4000;
  int total_steps = 0;  // 0: constant lr after warm-up
};

struct AdamState {
  ParamStore<float> m;
  ParamStore<float> v;
  long long step = 0;
};

AdamState init_adam_state(const SrmConfig& config);

// Warm-up then linear decay to zero at total_steps.
float schedule_lr(const OptimizerConfig& cfg, long long step);

double global_grad_norm(const ParamStore<float>& grads);

// Scales grads in place when their global norm exceeds max_norm; returns the
// pre-clip norm.
double clip_grad_norm(ParamStore<float>& grads, float max_norm);

// Decoupled-weight-decay adaptive moment update at the scheduled rate.
void adamw_step(ParamStore<float>& params, const ParamStore<float>& grads, AdamState& state,
                const OptimizerConfig& cfg);

// Name of the first tensor containing a non-finite value, if any.
std::optional<std::string> first_non_finite(const ParamStore<float>& store);

// ---- batch construction ------------------------------------------------------

struct TokenBatch {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<uint8_t>> mask;
};

// payload || delimiter || payload, losses only on the second payload.
struct CopyTaskSpec {
  int copy_len = 8;
  int payload_lo = 0;    // payload ids drawn uniformly from [lo, hi]
  int payload_hi = 255;
  int delimiter_id = 256;

  int sequence_len() const { return 2 * copy_len + 1; }
};

TokenBatch copy_task_batch(const CopyTaskSpec& spec, int batch, uint64_t seed);

// Byte sequences "a+b=s\n" with losses on the answer digits; the prompt part
// "a+b=" doubles as the RLVR question.
struct ArithTaskSpec {
  int max_operand = 9;
};

TokenBatch arithmetic_batch(const ArithTaskSpec& spec, int batch, uint64_t seed);
std::vector<int> arithmetic_prompt_tokens(int a, int b);

// ---- gradient computation ----------------------------------------------------

struct BatchGrads {
  double loss = 0.0;
  double accuracy = 0.0;
  long long masked = 0;
};

// One forward/backward over the batch in the parallel representation;
// gradients are accumulated into `grads` (caller zeroes beforehand).
BatchGrads batch_gradients(const ModelView<float>& model, const TokenBatch& batch,
                           ParamStore<float>& grads);

// ---- training loop -----------------------------------------------------------

struct TrainConfig {
  SrmConfig model;
  OptimizerConfig opt;
  int steps = 100;
  int batch = 32;
  uint64_t seed = 0;
  std::string task = "copy";  // copy | arith
  CopyTaskSpec copy;
  ArithTaskSpec arith;
  int log_every = 10;
  std::string metrics_path;     // JSON lines, deterministic content
  std::string checkpoint_path;  // written at the end (and kept on abort)
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);

struct MetricsRow {
  long long step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<float> lambdas;  // per mixing matrix, schema order
};

std::string metrics_row_json(const MetricsRow& row);

struct TrainResult {
  ParamStore<float> params;
  std::vector<MetricsRow> log;
  bool aborted_non_finite = false;
  std::string abort_reason;
};

using EvalHook = std::function<void(long long step, const ParamStore<float>& params)>;

TrainResult train_loop(const TrainConfig& config, const EvalHook& hook = nullptr);

// Per-mixer lambda values in schema order (logged as training metrics).
std::vector<float> current_lambdas(const SrmConfig& config, const ParamStore<float>& params);

}  // namespace srm
