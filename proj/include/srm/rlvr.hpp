#pragma once

#include <memory>
#include <string>
#include <vector>

#include "srm/model.hpp"
#include "srm/sampler.hpp"
#include "srm/training.hpp"

namespace srm {

// One generated sample with its verifiable reward. Log-probabilities are the
// per-token values recorded at sampling time.
struct RolloutRecord {
  int question_id = -1;
  std::vector<int> tokens;       // emitted tokens only
  std::vector<float> logprobs;   // aligned with tokens
  float reward = 0.0f;           // binary: 1.0 correct, 0.0 incorrect
  int group_id = -1;
};

struct ResampleSpec {
  int batch_b = 8;       // training batch size
  int group_size = 8;    // rollouts generated per question
  uint64_t seed = 0;
};

struct ResampleResult {
  std::vector<RolloutRecord> records;  // exactly batch_b entries
  bool with_replacement = false;       // fallback when the pool is too small
};

// Picks up to floor(b/2) rewarded samples without replacement, fills the
// rest with unrewarded ones, topping up from whichever side has members
// left. Pools smaller than b fall back to drawing with replacement.
ResampleResult balanced_resample(const std::vector<RolloutRecord>& pool, const ResampleSpec& spec);

// Per-token KL estimator: exp(ref - cur) - (ref - cur) - 1.
double kl_estimate(double ref_logprob, double cur_logprob);

// Group-normalized terminal rewards (population std, floored at 1e-4),
// broadcast per token by the objective.
std::vector<float> group_advantages(const std::vector<RolloutRecord>& records);

struct GrpoObjective {
  double objective = 0.0;                       // value to maximize
  std::vector<float> sample_advantages;         // A_i per record
  std::vector<std::vector<float>> advantages;   // A_i broadcast over tokens
};

// Mean over samples of mean over tokens of (A_i - beta * kl_t), with the
// record log-probs as the current policy and `ref_logprobs` aligned
// token-wise. All-equal rewards give all-zero advantages (reported, not an
// error).
GrpoObjective grpo_objective(const std::vector<RolloutRecord>& records,
                             const std::vector<std::vector<float>>& ref_logprobs, float beta);

// P(at least one of k draws is correct) = 1 - C(n-c, k) / C(n, k).
double pass_at_k(int n, int c, int k);

// ---- verifiers -----------------------------------------------------------

// Pure check of a decoded output text for one question.
class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual int verify(const std::string& text, int question_id) = 0;
};

class ExactMatchVerifier : public Verifier {
 public:
  void expect(int question_id, std::string answer);
  int verify(const std::string& text, int question_id) override;

 private:
  std::vector<std::pair<int, std::string>> expected_;
};

// Compares the last integer appearing in the text against the expected
// value for the question.
class LastNumberVerifier : public Verifier {
 public:
  void expect(int question_id, long long answer);
  int verify(const std::string& text, int question_id) override;

 private:
  std::vector<std::pair<int, long long>> expected_;
};

// Runs `command <question_id>` with the text on stdin and reads 0/1 from its
// stdout; the plug-in contract for external verifiers.
class CommandVerifier : public Verifier {
 public:
  explicit CommandVerifier(std::string command);
  int verify(const std::string& text, int question_id) override;

 private:
  std::string command_;
};

// Extracts the last integer in `text`, if any.
bool last_number(const std::string& text, long long& out);

// ---- GRPO training step ----------------------------------------------------

struct Question {
  int id = 0;
  std::vector<int> prompt;
};

struct GrpoSpec {
  ResampleSpec resample;
  float beta = 0.04f;
  int max_new = 8;
  SamplerSpec sampler{0.7f, 0.9f};
  uint64_t seed = 0;
};

struct GrpoStepMetrics {
  double mean_reward = 0.0;   // over all generated rollouts
  double objective = 0.0;     // Eq. value on the resampled batch
  int good = 0;               // rewarded rollouts in the resampled batch
  int bad = 0;
  bool with_replacement = false;
  double grad_norm = 0.0;
  int verifier_failures = 0;  // exceptions, logged as reward 0
};

// One GRPO update: generate G rollouts per question in the recurrent
// representation, verify, pool, balanced-resample to b, then ascend the
// objective via the parallel representation on the same parameter store.
GrpoStepMetrics grpo_train_step(const SrmConfig& config, ParamStore<float>& params,
                                const ParamStore<float>& ref_params, AdamState& adam,
                                const OptimizerConfig& opt,
                                const std::vector<Question>& questions, Verifier& verifier,
                                const GrpoSpec& spec);

}  // namespace srm
