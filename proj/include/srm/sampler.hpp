#pragma once

#include <span>
#include <vector>

#include "srm/model.hpp"
#include "srm/rng.hpp"

namespace srm {

// temperature == 0 selects the argmax (ties break to the lower id). With
// top_p < 1 the nucleus is the largest prefix of the sorted distribution
// whose cumulative probability stays <= top_p; the top token is always kept.
struct SamplerSpec {
  float temperature = 1.0f;
  float top_p = 1.0f;
};

struct SampleDraw {
  int token = -1;
  float logprob = 0.0f;  // under the sampling-time distribution
};

SampleDraw sample_token(std::span<const float> logits, const SamplerSpec& spec, Rng& rng);

// Softmax probabilities of `logits` after temperature scaling and nucleus
// truncation; exposed for tests.
std::vector<float> sampling_distribution(std::span<const float> logits, const SamplerSpec& spec);

enum class PrefillMode { Recurrent, Parallel };

struct GenerationResult {
  std::vector<std::vector<int>> tokens;      // emitted tokens per sample
  std::vector<std::vector<float>> logprobs;  // aligned with tokens
};

// Batch generation in the recurrent representation. Empty prompts start from
// the configured begin-of-sequence id. Deterministic for a fixed seed.
GenerationResult generate(const ModelView<float>& model,
                          const std::vector<std::vector<int>>& prompts, int max_new,
                          const SamplerSpec& spec, uint64_t seed,
                          PrefillMode prefill = PrefillMode::Recurrent,
                          CachePrecision prec = CachePrecision::Full32);

// log softmax(logits[:, col])[token]; temperature-1 model log-probability.
float column_logprob(const Matrix<float>& logits, int col, int token);

// Model log-probabilities of tokens[first..] given the preceding context,
// from one parallel forward.
std::vector<float> sequence_logprobs(const ModelView<float>& model, std::span<const int> tokens,
                                     int first);

}  // namespace srm
