#include "srm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace srm {

namespace {

std::vector<float> softmax(std::span<const float> logits, float inv_temp) {
  std::vector<float> p(logits.size());
  float mx = logits[0];
  for (float v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) * inv_temp);
    sum += p[i];
  }
  for (auto& v : p) v = static_cast<float>(v / sum);
  return p;
}

}  // namespace

std::vector<float> sampling_distribution(std::span<const float> logits, const SamplerSpec& spec) {
  if (logits.empty()) throw std::invalid_argument("sampling_distribution: empty logits");
  if (spec.temperature <= 0.0f) {
    std::vector<float> p(logits.size(), 0.0f);
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;  // ties keep the lower id
    p[best] = 1.0f;
    return p;
  }
  std::vector<float> p = softmax(logits, 1.0f / spec.temperature);
  if (spec.top_p >= 1.0f) return p;
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p[static_cast<size_t>(a)] != p[static_cast<size_t>(b)])
      return p[static_cast<size_t>(a)] > p[static_cast<size_t>(b)];
    return a < b;
  });
  // top token always kept; extend while the cumulative mass stays <= top_p
  double cum = p[static_cast<size_t>(order[0])];
  size_t keep = 1;
  while (keep < order.size() && cum + p[static_cast<size_t>(order[keep])] <= spec.top_p) {
    cum += p[static_cast<size_t>(order[keep])];
    ++keep;
  }
  std::vector<float> out(p.size(), 0.0f);
  for (size_t i = 0; i < keep; ++i) {
    const int id = order[i];
    out[static_cast<size_t>(id)] = static_cast<float>(p[static_cast<size_t>(id)] / cum);
  }
  return out;
}

SampleDraw sample_token(std::span<const float> logits, const SamplerSpec& spec, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
  if (spec.temperature <= 0.0f) {
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    return {static_cast<int>(best), 0.0f};  // degenerate distribution: log 1
  }
  const std::vector<float> p = sampling_distribution(logits, spec);
  const double u = rng.real01();
  double cum = 0.0;
  int chosen = -1;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0f) continue;
    cum += p[i];
    if (u < cum) {
      chosen = static_cast<int>(i);
      break;
    }
  }
  if (chosen < 0) {  // rounding spill: take the last token with mass
    for (size_t i = p.size(); i-- > 0;)
      if (p[i] > 0.0f) {
        chosen = static_cast<int>(i);
        break;
      }
  }
  return {chosen, std::log(p[static_cast<size_t>(chosen)])};
}

GenerationResult generate(const ModelView<float>& model,
                          const std::vector<std::vector<int>>& prompts, int max_new,
                          const SamplerSpec& spec, uint64_t seed, PrefillMode prefill,
                          CachePrecision prec) {
  const SrmConfig& cfg = model.config;
  const int batch = static_cast<int>(prompts.size());
  if (batch < 1) throw std::invalid_argument("generate: empty batch");
  if (max_new < 0) throw std::invalid_argument("generate: negative max_new");

  std::vector<std::vector<int>> effective(prompts.begin(), prompts.end());
  for (auto& p : effective)
    if (p.empty()) p.assign(1, cfg.bos_id);
  for (const auto& p : effective)
    if (static_cast<int>(p.size()) + max_new > cfg.n_ctx)
      throw ContextOverflowError("generate: prompt length + max_new exceeds n_ctx");

  GenerationState<float> state = init_generation_state<float>(cfg, batch);
  for (int b = 0; b < batch; ++b) {
    if (prefill == PrefillMode::Parallel)
      prefill_parallel(model, effective[static_cast<size_t>(b)], state.samples[static_cast<size_t>(b)]);
    else
      prefill_recurrent(model, effective[static_cast<size_t>(b)], state.samples[static_cast<size_t>(b)],
                        prec);
  }

  GenerationResult result;
  result.tokens.resize(static_cast<size_t>(batch));
  result.logprobs.resize(static_cast<size_t>(batch));
  Rng rng(derive_seed(seed, 0x5A3D));
  std::vector<int> next(static_cast<size_t>(batch), cfg.bos_id);
  for (int step = 0; step < max_new; ++step) {
    for (int b = 0; b < batch; ++b) {
      SampleState<float>& sample = state.samples[static_cast<size_t>(b)];
      if (sample.finished) continue;
      const SampleDraw draw = sample_token(sample.last_logits, spec, rng);
      result.tokens[static_cast<size_t>(b)].push_back(draw.token);
      result.logprobs[static_cast<size_t>(b)].push_back(draw.logprob);
      next[static_cast<size_t>(b)] = draw.token;
    }
    forward_recurrent_step<float>(model, next, state, prec);
  }
  return result;
}

// Float accumulation mirrors the tape's fused softmax exactly, so reference
// log-probs computed here are bit-identical to the tape's current log-probs
// when both policies share one parameter set (the step-1 KL is exactly 0).
float column_logprob(const Matrix<float>& logits, int col, int token) {
  float mx = logits(0, col);
  for (int r = 1; r < logits.rows(); ++r) mx = std::max(mx, logits(r, col));
  float sum = 0.0f;
  for (int r = 0; r < logits.rows(); ++r) sum += std::exp(logits(r, col) - mx);
  return std::log(std::exp(logits(token, col) - mx) / sum);
}

std::vector<float> sequence_logprobs(const ModelView<float>& model, std::span<const int> tokens,
                                     int first) {
  if (first < 1 || first > static_cast<int>(tokens.size()))
    throw std::invalid_argument("sequence_logprobs: first must be in [1, len]");
  const Matrix<float> logits = forward_parallel_one(model, tokens);
  std::vector<float> out;
  out.reserve(tokens.size() - static_cast<size_t>(first));
  for (int t = first; t < static_cast<int>(tokens.size()); ++t)
    out.push_back(column_logprob(logits, t - 1, tokens[static_cast<size_t>(t)]));
  return out;
}

}  // namespace srm
