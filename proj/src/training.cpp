#include "srm/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "srm/checkpoint.hpp"

namespace srm {

using nlohmann::json;

// ---- shifted cross-entropy ---------------------------------------------------

namespace {

void check_batch_shapes(const std::vector<std::vector<int>>& tokens,
                        const std::vector<std::vector<uint8_t>>& mask) {
  if (tokens.size() != mask.size())
    throw std::invalid_argument("shifted_ce_loss: tokens/mask batch size mismatch");
  for (size_t b = 0; b < tokens.size(); ++b) {
    if (tokens[b].size() != mask[b].size())
      throw std::invalid_argument("shifted_ce_loss: tokens/mask length mismatch");
    if (!mask[b].empty() && mask[b].back())
      throw std::invalid_argument("shifted_ce_loss: last position has no next token to predict");
  }
}

}  // namespace

CeResult shifted_ce_loss(const std::vector<Matrix<float>>& logits,
                         const std::vector<std::vector<int>>& tokens,
                         const std::vector<std::vector<uint8_t>>& mask) {
  if (logits.size() != tokens.size())
    throw std::invalid_argument("shifted_ce_loss: logits batch size mismatch");
  check_batch_shapes(tokens, mask);
  CeResult result;
  double total = 0.0;
  for (size_t b = 0; b < logits.size(); ++b) {
    const Matrix<float>& z = logits[b];
    std::vector<float> row(tokens[b].size(), 0.0f);
    for (size_t t = 0; t < tokens[b].size(); ++t) {
      if (!mask[b][t]) continue;
      const int target = tokens[b][t + 1];
      if (target < 0 || target >= z.rows())
        throw std::out_of_range("shifted_ce_loss: target id out of range");
      float mx = z(0, static_cast<int>(t));
      for (int r = 1; r < z.rows(); ++r) mx = std::max(mx, z(r, static_cast<int>(t)));
      double sum = 0.0;
      for (int r = 0; r < z.rows(); ++r)
        sum += std::exp(static_cast<double>(z(r, static_cast<int>(t)) - mx));
      const double logp = static_cast<double>(z(target, static_cast<int>(t)) - mx) - std::log(sum);
      row[t] = static_cast<float>(-logp);
      total += -logp;
      result.count++;
    }
    result.per_position.push_back(std::move(row));
  }
  if (result.count == 0)
    throw std::invalid_argument("shifted_ce_loss: every position is masked out");
  result.mean = total / static_cast<double>(result.count);
  return result;
}

double masked_next_token_accuracy(const std::vector<Matrix<float>>& logits,
                                  const std::vector<std::vector<int>>& tokens,
                                  const std::vector<std::vector<uint8_t>>& mask) {
  check_batch_shapes(tokens, mask);
  long long hits = 0, total = 0;
  for (size_t b = 0; b < logits.size(); ++b) {
    const Matrix<float>& z = logits[b];
    for (size_t t = 0; t < tokens[b].size(); ++t) {
      if (!mask[b][t]) continue;
      int best = 0;
      for (int r = 1; r < z.rows(); ++r)
        if (z(r, static_cast<int>(t)) > z(best, static_cast<int>(t))) best = r;
      hits += best == tokens[b][t + 1] ? 1 : 0;
      total++;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// ---- optimizer ---------------------------------------------------------------

AdamState init_adam_state(const SrmConfig& config) {
  AdamState state;
  state.m = make_param_store<float>(config);
  state.v = make_param_store<float>(config);
  return state;
}

float schedule_lr(const OptimizerConfig& cfg, long long step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<float>(step + 1) / static_cast<float>(cfg.warmup_steps);
  if (cfg.total_steps > cfg.warmup_steps) {
    const float remaining = static_cast<float>(cfg.total_steps - step);
    const float span = static_cast<float>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr * std::max(0.0f, remaining / span);
  }
  return cfg.lr;
}

double global_grad_norm(const ParamStore<float>& grads) {
  double sq = 0.0;
  for (const auto& t : grads.tensors)
    for (size_t i = 0; i < t.size(); ++i) sq += static_cast<double>(t.data()[i]) * t.data()[i];
  return std::sqrt(sq);
}

double clip_grad_norm(ParamStore<float>& grads, float max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm > 0.0f && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& t : grads.tensors)
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] *= scale;
  }
  return norm;
}

void adamw_step(ParamStore<float>& params, const ParamStore<float>& grads, AdamState& state,
                const OptimizerConfig& cfg) {
  const float lr = schedule_lr(cfg, state.step);
  state.step++;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.step);
  for (size_t i = 0; i < params.count(); ++i) {
    float* p = params.tensors[i].data();
    const float* g = grads.tensors[i].data();
    float* m = state.m.tensors[i].data();
    float* v = state.v.tensors[i].data();
    const size_t n = params.tensors[i].size();
    for (size_t k = 0; k < n; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0f - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0f - cfg.beta2) * g[k] * g[k];
      const float mhat = static_cast<float>(m[k] / bc1);
      const float vhat = static_cast<float>(v[k] / bc2);
      p[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[k]);
    }
  }
}

std::optional<std::string> first_non_finite(const ParamStore<float>& store) {
  for (size_t i = 0; i < store.count(); ++i)
    for (size_t k = 0; k < store.tensors[i].size(); ++k)
      if (!std::isfinite(store.tensors[i].data()[k])) return store.names[i];
  return std::nullopt;
}

// ---- batch construction ------------------------------------------------------

TokenBatch copy_task_batch(const CopyTaskSpec& spec, int batch, uint64_t seed) {
  if (spec.copy_len < 1) throw std::invalid_argument("copy task: copy_len must be positive");
  if (spec.payload_lo > spec.payload_hi)
    throw std::invalid_argument("copy task: empty payload range");
  Rng rng(derive_seed(seed, 0xC0BB));
  TokenBatch out;
  const int n = spec.sequence_len();
  for (int b = 0; b < batch; ++b) {
    std::vector<int> tokens(static_cast<size_t>(n));
    std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
    for (int i = 0; i < spec.copy_len; ++i) {
      const int id = rng.range_int(spec.payload_lo, spec.payload_hi);
      tokens[static_cast<size_t>(i)] = id;
      tokens[static_cast<size_t>(spec.copy_len + 1 + i)] = id;
    }
    tokens[static_cast<size_t>(spec.copy_len)] = spec.delimiter_id;
    // predictions of the second payload come from positions m .. 2m-1
    for (int t = spec.copy_len; t < 2 * spec.copy_len; ++t) mask[static_cast<size_t>(t)] = 1;
    out.tokens.push_back(std::move(tokens));
    out.mask.push_back(std::move(mask));
  }
  return out;
}

std::vector<int> arithmetic_prompt_tokens(int a, int b) {
  const std::string text = std::to_string(a) + "+" + std::to_string(b) + "=";
  std::vector<int> ids;
  for (unsigned char ch : text) ids.push_back(static_cast<int>(ch));
  return ids;
}

TokenBatch arithmetic_batch(const ArithTaskSpec& spec, int batch, uint64_t seed) {
  Rng rng(derive_seed(seed, 0xA417));
  TokenBatch out;
  for (int i = 0; i < batch; ++i) {
    const int a = rng.range_int(0, spec.max_operand);
    const int b = rng.range_int(0, spec.max_operand);
    std::vector<int> tokens = arithmetic_prompt_tokens(a, b);
    const size_t prompt_len = tokens.size();
    for (unsigned char ch : std::to_string(a + b)) tokens.push_back(static_cast<int>(ch));
    tokens.push_back('\n');
    std::vector<uint8_t> mask(tokens.size(), 0);
    // losses on the answer digits and the terminator
    for (size_t t = prompt_len - 1; t + 1 < tokens.size(); ++t) mask[t] = 1;
    out.tokens.push_back(std::move(tokens));
    out.mask.push_back(std::move(mask));
  }
  return out;
}

// ---- gradient computation ----------------------------------------------------

BatchGrads batch_gradients(const ModelView<float>& model, const TokenBatch& batch,
                           ParamStore<float>& grads) {
  check_batch_shapes(batch.tokens, batch.mask);
  Tape<float> tape;
  TapeBinder<float> bind(tape, *model.params);
  std::vector<int> ce_nodes;
  std::vector<Matrix<float>> logits;
  long long masked = 0;
  for (size_t b = 0; b < batch.tokens.size(); ++b) {
    const auto& tokens = batch.tokens[b];
    const auto nodes = forward_sample_tape(tape, bind, model, tokens);
    std::vector<int> targets(tokens.size(), 0);
    for (size_t t = 0; t + 1 < tokens.size(); ++t) targets[t] = tokens[t + 1];
    ce_nodes.push_back(tape.masked_ce(nodes.logits, targets, batch.mask[b]));
    logits.push_back(tape.value(nodes.logits));
    for (uint8_t m : batch.mask[b]) masked += m ? 1 : 0;
  }
  if (masked == 0) throw std::invalid_argument("batch_gradients: every position is masked out");
  const int root = tape.sum_scalars(ce_nodes);
  tape.backward(root, 1.0f / static_cast<float>(masked));
  tape.accumulate_param_grads(grads);

  BatchGrads out;
  out.masked = masked;
  out.loss = static_cast<double>(tape.value(root)(0, 0)) / static_cast<double>(masked);
  out.accuracy = masked_next_token_accuracy(logits, batch.tokens, batch.mask);
  return out;
}

// ---- training loop -----------------------------------------------------------

std::vector<float> current_lambdas(const SrmConfig& config, const ParamStore<float>& params) {
  std::vector<float> out;
  for (size_t i = 0; i < params.count(); ++i)
    if (detail::name_ends_with(params.names[i], ".decay_raw"))
      out.push_back(derive_decay(params.tensors[i](0, 0), config.decay_enabled));
  return out;
}

std::string metrics_row_json(const MetricsRow& row) {
  json j;
  j["step"] = row.step;
  j["loss"] = row.loss;
  j["accuracy"] = row.accuracy;
  j["lr"] = row.lr;
  j["grad_norm"] = row.grad_norm;
  j["lambdas"] = row.lambdas;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainConfig cfg;
  if (j.contains("model")) cfg.model = config_from_json(j.at("model").dump());
  auto get = [&](const json& obj, const char* key, auto fallback) {
    using V = decltype(fallback);
    if (!obj.contains(key)) return fallback;
    try {
      return obj.at(key).get<V>();
    } catch (const json::exception&) {
      throw std::invalid_argument(std::string(key) + ": malformed value");
    }
  };
  if (j.contains("training")) {
    const json& t = j.at("training");
    cfg.steps = get(t, "steps", cfg.steps);
    cfg.batch = get(t, "batch", cfg.batch);
    cfg.seed = get(t, "seed", cfg.seed);
    cfg.task = get(t, "task", cfg.task);
    cfg.log_every = get(t, "log_every", cfg.log_every);
    cfg.metrics_path = get(t, "metrics_path", cfg.metrics_path);
    cfg.checkpoint_path = get(t, "checkpoint_path", cfg.checkpoint_path);
    cfg.copy.copy_len = get(t, "copy_len", cfg.copy.copy_len);
    cfg.copy.payload_lo = get(t, "payload_lo", cfg.copy.payload_lo);
    cfg.copy.payload_hi = get(t, "payload_hi", cfg.copy.payload_hi);
    cfg.copy.delimiter_id = get(t, "delimiter_id", cfg.copy.delimiter_id);
    cfg.arith.max_operand = get(t, "max_operand", cfg.arith.max_operand);
    cfg.opt.lr = get(t, "lr", cfg.opt.lr);
    cfg.opt.weight_decay = get(t, "weight_decay", cfg.opt.weight_decay);
    cfg.opt.max_grad_norm = get(t, "max_grad_norm", cfg.opt.max_grad_norm);
    cfg.opt.warmup_steps = get(t, "warmup_steps", cfg.opt.warmup_steps);
    cfg.opt.total_steps = get(t, "total_steps", cfg.steps);
  }
  if (cfg.task != "copy" && cfg.task != "arith")
    throw std::invalid_argument("task: expected copy or arith, got '" + cfg.task + "'");
  if (cfg.task == "copy" && cfg.copy.sequence_len() > cfg.model.n_ctx)
    throw std::invalid_argument("copy_len: 2*copy_len+1 exceeds model n_ctx");
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = json::parse(config_to_json(cfg.model));
  json t;
  t["steps"] = cfg.steps;
  t["batch"] = cfg.batch;
  t["seed"] = cfg.seed;
  t["task"] = cfg.task;
  t["log_every"] = cfg.log_every;
  t["metrics_path"] = cfg.metrics_path;
  t["checkpoint_path"] = cfg.checkpoint_path;
  t["copy_len"] = cfg.copy.copy_len;
  t["payload_lo"] = cfg.copy.payload_lo;
  t["payload_hi"] = cfg.copy.payload_hi;
  t["delimiter_id"] = cfg.copy.delimiter_id;
  t["max_operand"] = cfg.arith.max_operand;
  t["lr"] = cfg.opt.lr;
  t["weight_decay"] = cfg.opt.weight_decay;
  t["max_grad_norm"] = cfg.opt.max_grad_norm;
  t["warmup_steps"] = cfg.opt.warmup_steps;
  t["total_steps"] = cfg.opt.total_steps;
  j["training"] = t;
  return j.dump(2);
}

TrainResult train_loop(const TrainConfig& config, const EvalHook& hook) {
  config.model.validate();
  TrainResult result;
  result.params = init_params<float>(config.model, config.seed);
  AdamState adam = init_adam_state(config.model);
  OptimizerConfig opt = config.opt;
  if (opt.total_steps == 0) opt.total_steps = config.steps;
  ParamStore<float> grads = make_param_store<float>(config.model);
  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("train_loop: cannot open " + config.metrics_path);
  }
  ParamStore<float> last_good = result.params;
  for (int step = 0; step < config.steps; ++step) {
    const TokenBatch batch =
        config.task == "copy"
            ? copy_task_batch(config.copy, config.batch, derive_seed(config.seed, step))
            : arithmetic_batch(config.arith, config.batch, derive_seed(config.seed, step));
    const ModelView<float> view = make_model_view(config.model, result.params);
    grads.zero();
    const BatchGrads bg = batch_gradients(view, batch, grads);
    if (!std::isfinite(bg.loss)) {
      result.params = last_good;
      result.aborted_non_finite = true;
      result.abort_reason = "non-finite loss at step " + std::to_string(step);
      break;
    }
    if (auto bad = first_non_finite(grads)) {
      result.params = last_good;
      result.aborted_non_finite = true;
      result.abort_reason = "non-finite gradient in " + *bad + " at step " + std::to_string(step);
      break;
    }
    last_good = result.params;
    const double norm = clip_grad_norm(grads, opt.max_grad_norm);
    const float lr = schedule_lr(opt, adam.step);
    adamw_step(result.params, grads, adam, opt);

    if (step % config.log_every == 0 || step + 1 == config.steps) {
      MetricsRow row;
      row.step = step;
      row.loss = bg.loss;
      row.accuracy = bg.accuracy;
      row.lr = lr;
      row.grad_norm = norm;
      row.lambdas = current_lambdas(config.model, result.params);
      if (metrics.is_open()) metrics << metrics_row_json(row) << "\n";
      result.log.push_back(std::move(row));
    }
    if (hook) hook(step, result.params);
  }
  if (!config.checkpoint_path.empty())
    save_checkpoint(config.checkpoint_path, config.model, result.params);
  return result;
}

}  // namespace srm
