#include "srm/rlvr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include "srm/tokenizer.hpp"

namespace srm {

// ---- balanced resampling ----------------------------------------------------

namespace {

// Seeded draw of `take` distinct indices from `from` (order of draws kept).
std::vector<size_t> draw_without_replacement(std::vector<size_t> from, size_t take, Rng& rng) {
  std::vector<size_t> out;
  out.reserve(take);
  for (size_t i = 0; i < take && !from.empty(); ++i) {
    const size_t j = rng.below(from.size());
    out.push_back(from[j]);
    from[j] = from.back();
    from.pop_back();
  }
  return out;
}

}  // namespace

ResampleResult balanced_resample(const std::vector<RolloutRecord>& pool,
                                 const ResampleSpec& spec) {
  if (pool.empty()) throw std::invalid_argument("balanced_resample: empty pool");
  if (spec.batch_b < 2) throw std::invalid_argument("balanced_resample: batch must be >= 2");
  const size_t b = static_cast<size_t>(spec.batch_b);
  Rng rng(derive_seed(spec.seed, 0xBA1A));

  std::vector<size_t> good, bad;
  for (size_t i = 0; i < pool.size(); ++i)
    (pool[i].reward > 0.5f ? good : bad).push_back(i);

  ResampleResult result;
  if (pool.size() < b) {
    // not enough distinct records: draw with replacement, same preference
    result.with_replacement = true;
    size_t taken_good = 0;
    for (size_t i = 0; i < b; ++i) {
      const bool use_good = !good.empty() && (taken_good < b / 2 || bad.empty());
      const auto& side = use_good ? good : bad;
      result.records.push_back(pool[side[rng.below(side.size())]]);
      if (use_good) taken_good++;
    }
    return result;
  }

  const size_t good_take = std::min(good.size(), b / 2);
  std::vector<size_t> chosen = draw_without_replacement(good, good_take, rng);
  const size_t bad_take = std::min(bad.size(), b - chosen.size());
  std::vector<size_t> chosen_bad = draw_without_replacement(bad, bad_take, rng);
  chosen.insert(chosen.end(), chosen_bad.begin(), chosen_bad.end());
  if (chosen.size() < b) {
    // bad records exhausted: top up from the good records not yet taken
    std::vector<size_t> leftover;
    for (size_t i : good)
      if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) leftover.push_back(i);
    std::vector<size_t> extra = draw_without_replacement(leftover, b - chosen.size(), rng);
    chosen.insert(chosen.end(), extra.begin(), extra.end());
  }
  for (size_t i : chosen) result.records.push_back(pool[i]);
  return result;
}

// ---- objective ----------------------------------------------------------------

double kl_estimate(double ref_logprob, double cur_logprob) {
  const double delta = ref_logprob - cur_logprob;
  return std::exp(delta) - delta - 1.0;
}

std::vector<float> group_advantages(const std::vector<RolloutRecord>& records) {
  std::vector<float> adv(records.size(), 0.0f);
  if (records.empty()) return adv;
  double mean = 0.0;
  for (const auto& r : records) mean += r.reward;
  mean /= static_cast<double>(records.size());
  double var = 0.0;
  for (const auto& r : records) var += (r.reward - mean) * (r.reward - mean);
  var /= static_cast<double>(records.size());
  const double std_dev = std::max(std::sqrt(var), 1e-4);
  for (size_t i = 0; i < records.size(); ++i)
    adv[i] = static_cast<float>((records[i].reward - mean) / std_dev);
  if (var == 0.0) std::fill(adv.begin(), adv.end(), 0.0f);  // all-equal rewards
  return adv;
}

GrpoObjective grpo_objective(const std::vector<RolloutRecord>& records,
                             const std::vector<std::vector<float>>& ref_logprobs, float beta) {
  if (records.size() != ref_logprobs.size())
    throw std::invalid_argument("grpo_objective: reference log-probs batch mismatch");
  GrpoObjective out;
  out.sample_advantages = group_advantages(records);
  double total = 0.0;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.logprobs.size() != ref_logprobs[i].size())
      throw std::invalid_argument("grpo_objective: reference log-probs not aligned token-wise");
    std::vector<float> token_adv(rec.tokens.size(), out.sample_advantages[i]);
    out.advantages.push_back(std::move(token_adv));
    if (rec.tokens.empty()) continue;
    double sample_term = 0.0;
    for (size_t t = 0; t < rec.tokens.size(); ++t)
      sample_term += out.sample_advantages[i] -
                     beta * kl_estimate(ref_logprobs[i][t], rec.logprobs[t]);
    total += sample_term / static_cast<double>(rec.tokens.size());
  }
  out.objective = records.empty() ? 0.0 : total / static_cast<double>(records.size());
  return out;
}

// ---- pass@k -------------------------------------------------------------------

double pass_at_k(int n, int c, int k) {
  if (n < 0 || c < 0 || c > n) throw std::invalid_argument("pass_at_k: need 0 <= c <= n");
  if (k < 1 || k > n) throw std::invalid_argument("pass_at_k: need 1 <= k <= n");
  if (c == 0) return 0.0;
  if (k > n - c) return 1.0;
  if (n <= 62) {
    // binomials fit in uint64: exact integer ratio
    auto binom = [](int nn, int kk) {
      kk = std::min(kk, nn - kk);
      __uint128_t r = 1;
      for (int i = 1; i <= kk; ++i) r = r * static_cast<unsigned>(nn - kk + i) / static_cast<unsigned>(i);
      return static_cast<unsigned long long>(r);
    };
    const double fail = static_cast<double>(binom(n - c, k)) / static_cast<double>(binom(n, k));
    return 1.0 - fail;
  }
  // log-space for large n
  const double log_fail = std::lgamma(n - c + 1.0) - std::lgamma(n - c - k + 1.0) -
                          std::lgamma(n + 1.0) + std::lgamma(n - k + 1.0);
  return 1.0 - std::exp(log_fail);
}

// ---- verifiers ------------------------------------------------------------------

void ExactMatchVerifier::expect(int question_id, std::string answer) {
  expected_.emplace_back(question_id, std::move(answer));
}

int ExactMatchVerifier::verify(const std::string& text, int question_id) {
  for (const auto& [id, answer] : expected_)
    if (id == question_id) return text == answer ? 1 : 0;
  throw std::out_of_range("ExactMatchVerifier: unknown question id");
}

bool last_number(const std::string& text, long long& out) {
  bool found = false;
  for (size_t i = 0; i < text.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(text[i])) ||
        (text[i] == '-' && i + 1 < text.size() &&
         std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      size_t end = i + 1;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
      try {
        out = std::stoll(text.substr(i, end - i));
        found = true;
      } catch (const std::exception&) {
      }
      i = end - 1;
    }
  }
  return found;
}

void LastNumberVerifier::expect(int question_id, long long answer) {
  expected_.emplace_back(question_id, answer);
}

int LastNumberVerifier::verify(const std::string& text, int question_id) {
  for (const auto& [id, answer] : expected_)
    if (id == question_id) {
      long long value = 0;
      return last_number(text, value) && value == answer ? 1 : 0;
    }
  throw std::out_of_range("LastNumberVerifier: unknown question id");
}

CommandVerifier::CommandVerifier(std::string command) : command_(std::move(command)) {}

int CommandVerifier::verify(const std::string& text, int question_id) {
  // text goes in on stdin; a single 0/1 comes back on stdout
  std::string cmd = "printf '%s' \"$SRM_VERIFY_TEXT\" | " + command_ + " " +
                    std::to_string(question_id);
  setenv("SRM_VERIFY_TEXT", text.c_str(), 1);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("CommandVerifier: popen failed");
  char buf[16] = {0};
  const size_t got = fread(buf, 1, sizeof(buf) - 1, pipe);
  const int status = pclose(pipe);
  if (status != 0) throw std::runtime_error("CommandVerifier: verifier exited nonzero");
  if (got == 0) throw std::runtime_error("CommandVerifier: empty verifier output");
  return buf[0] == '1' ? 1 : 0;
}

// ---- GRPO training step ----------------------------------------------------------

GrpoStepMetrics grpo_train_step(const SrmConfig& config, ParamStore<float>& params,
                                const ParamStore<float>& ref_params, AdamState& adam,
                                const OptimizerConfig& opt,
                                const std::vector<Question>& questions, Verifier& verifier,
                                const GrpoSpec& spec) {
  if (questions.empty()) throw std::invalid_argument("grpo_train_step: no questions");
  GrpoStepMetrics metrics;
  const ModelView<float> view = make_model_view(config, params);
  const ModelView<float> ref_view = make_model_view(config, ref_params);

  // 1. rollouts via the recurrent representation
  std::vector<RolloutRecord> pool;
  for (size_t q = 0; q < questions.size(); ++q) {
    const Question& question = questions[q];
    std::vector<std::vector<int>> prompts(static_cast<size_t>(spec.resample.group_size),
                                          question.prompt);
    const GenerationResult gen = generate(view, prompts, spec.max_new, spec.sampler,
                                          derive_seed(spec.seed, 0x6E40 + q));
    for (int g = 0; g < spec.resample.group_size; ++g) {
      RolloutRecord rec;
      rec.question_id = question.id;
      rec.group_id = static_cast<int>(q);
      rec.tokens = gen.tokens[static_cast<size_t>(g)];
      rec.logprobs = gen.logprobs[static_cast<size_t>(g)];
      try {
        rec.reward = verifier.verify(decode_bytes(rec.tokens), question.id) ? 1.0f : 0.0f;
      } catch (const std::exception&) {
        rec.reward = 0.0f;
        metrics.verifier_failures++;
      }
      pool.push_back(std::move(rec));
    }
  }
  double reward_sum = 0.0;
  for (const auto& r : pool) reward_sum += r.reward;
  metrics.mean_reward = reward_sum / static_cast<double>(pool.size());

  // 2. balanced resampling to the training batch
  ResampleSpec rs = spec.resample;
  rs.seed = derive_seed(spec.seed, 0x4E5);
  const ResampleResult resampled = balanced_resample(pool, rs);
  metrics.with_replacement = resampled.with_replacement;
  for (const auto& r : resampled.records) (r.reward > 0.5f ? metrics.good : metrics.bad)++;

  // 3. objective on the resampled batch via the parallel representation,
  //    reading the same parameter store the generation step just used
  const std::vector<float> advantages = group_advantages(resampled.records);
  Tape<float> tape;
  TapeBinder<float> bind(tape, params);
  std::vector<int> terms;
  std::vector<std::vector<float>> ref_lp;
  const size_t batch_n = resampled.records.size();
  for (size_t i = 0; i < batch_n; ++i) {
    const RolloutRecord& rec = resampled.records[i];
    const Question& question = *std::find_if(questions.begin(), questions.end(),
                                             [&](const Question& q) { return q.id == rec.question_id; });
    if (rec.tokens.empty()) {
      ref_lp.emplace_back();
      continue;
    }
    std::vector<int> full = question.prompt;
    full.insert(full.end(), rec.tokens.begin(), rec.tokens.end());
    const int prompt_len = static_cast<int>(question.prompt.size());
    ref_lp.push_back(sequence_logprobs(ref_view, full, prompt_len));
    const auto nodes = forward_sample_tape(tape, bind, view, full);
    const float weight = 1.0f / (static_cast<float>(batch_n) *
                                 static_cast<float>(rec.tokens.size()));
    terms.push_back(tape.grpo_sequence_term(nodes.logits, prompt_len - 1, rec.tokens,
                                            advantages[i], ref_lp.back(), spec.beta, weight));
  }
  if (!terms.empty()) {
    const int root = tape.sum_scalars(terms);
    metrics.objective = tape.value(root)(0, 0);
    ParamStore<float> grads = make_param_store<float>(config);
    tape.backward(root, -1.0f);  // ascend the objective
    tape.accumulate_param_grads(grads);
    metrics.grad_norm = clip_grad_norm(grads, opt.max_grad_norm);
    adamw_step(params, grads, adam, opt);
  }
  return metrics;
}

}  // namespace srm
