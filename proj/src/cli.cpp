#include "srm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "srm/bench.hpp"
#include "srm/checkpoint.hpp"
#include "srm/equivalence.hpp"
#include "srm/rlvr.hpp"
#include "srm/sampler.hpp"
#include "srm/tokenizer.hpp"
#include "srm/training.hpp"

namespace srm {

namespace {

using nlohmann::json;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SrmConfig load_model_arg(const std::string& config_path, const std::string& checkpoint_path,
                         ParamStore<float>& params, uint64_t seed) {
  if (!checkpoint_path.empty()) {
    auto [config, loaded] = load_checkpoint(checkpoint_path);
    params = std::move(loaded);
    return config;
  }
  if (config_path.empty())
    throw CLI::ValidationError("model", "either --config or --checkpoint is required");
  json j = json::parse(slurp(config_path), nullptr, true);
  const SrmConfig config =
      config_from_json(j.contains("model") ? j.at("model").dump() : j.dump());
  params = init_params<float>(config, seed);
  return config;
}

int cmd_train(const std::string& config_path) {
  TrainConfig config = train_config_from_json(slurp(config_path));
  const TrainResult result = train_loop(config);
  if (result.aborted_non_finite) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    return 3;
  }
  if (!result.log.empty()) {
    const MetricsRow& last = result.log.back();
    std::cout << "final step " << last.step << " loss " << last.loss << " accuracy "
              << last.accuracy << "\n";
  }
  return 0;
}

int cmd_generate(const std::string& checkpoint_path, const std::string& prompt, int max_new,
                 float temperature, float top_p, uint64_t seed, const std::string& prefill) {
  auto [config, params] = load_checkpoint(checkpoint_path);
  const ModelView<float> view = make_model_view(config, params);
  SamplerSpec spec{temperature, top_p};
  const PrefillMode mode = prefill == "parallel" ? PrefillMode::Parallel : PrefillMode::Recurrent;
  const GenerationResult result =
      generate(view, {encode_bytes(prompt)}, max_new, spec, seed, mode);
  std::cout << decode_bytes(result.tokens.front()) << "\n";
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& checkpoint_path,
              std::vector<int> batches, int gen_len, uint64_t seed, int workers,
              const std::string& report_path) {
  ParamStore<float> params;
  const SrmConfig config = load_model_arg(config_path, checkpoint_path, params, seed);
  const ModelView<float> view = make_model_view(config, params);
  if (batches.empty()) batches = {1, 2, 4, 8, 16, 32};
  BenchOptions options;
  options.gen_len = gen_len;
  options.seed = seed;
  options.workers = workers;
  const BenchReport report = bench_decode(view, batches, options);
  for (const auto& row : report.rows) {
    if (row.alloc_failed) {
      std::cout << "batch " << row.batch << " allocation failed (concurrency ceiling)\n";
      continue;
    }
    std::cout << "batch " << row.batch << (row.argmax ? " +argmax" : " logits-only")
              << " tokens/s " << row.tokens_per_s << " p50_us " << row.p50_us << " p95_us "
              << row.p95_us << " cache_bytes/sample " << row.cache_bytes_per_sample << "\n";
  }
  if (!report_path.empty()) write_bench_report(report_path, report);
  return 0;
}

int cmd_check_equivalence(uint64_t seed, int rounds, const std::string& report_path) {
  const EquivalenceSummary summary = run_equivalence_grid(seed, rounds);
  std::cout << "configs " << summary.configs << "\n";
  std::cout << "max |parallel - recurrent| fp32: " << summary.max_dev_fp32 << "\n";
  std::cout << "max |parallel - recurrent| fp16 cache: " << summary.max_dev_fp16 << "\n";
  std::cout << "max prefill path deviation: " << summary.max_prefill_dev << "\n";
  if (!report_path.empty()) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "check-equivalence";
    j["seed"] = seed;
    j["configs"] = summary.configs;
    j["max_dev_fp32"] = summary.max_dev_fp32;
    j["max_dev_fp16"] = summary.max_dev_fp16;
    j["max_prefill_dev"] = summary.max_prefill_dev;
    std::ofstream os(report_path, std::ios::trunc);
    os << j.dump(2) << "\n";
  }
  if (summary.max_dev_fp32 > 1e-4f || summary.max_dev_fp16 > 5e-2f ||
      summary.max_prefill_dev > 1e-4f)
    throw CheckFailure("representation equivalence deviation above threshold");
  return 0;
}

int cmd_passk(int n, int c, int k) {
  std::printf("%.6f\n", pass_at_k(n, c, k));
  return 0;
}

int cmd_inspect(const std::string& config_path, int batch, const std::string& report_path) {
  json j = json::parse(slurp(config_path), nullptr, true);
  const SrmConfig config =
      config_from_json(j.contains("model") ? j.at("model").dump() : j.dump());
  const CacheBytesReport cache = cache_bytes(config, batch, 4);
  const long long capacity = compression_capacity(config.d_model, 2.0, 0.5, 14.8);
  std::cout << "parameters: " << param_count(config) << "\n";
  std::cout << "cache bytes per sample (fp32): " << cache.recurrent_bytes / std::max(batch, 1)
            << "\n";
  std::cout << "cache bytes for batch " << batch << ": " << cache.recurrent_bytes << "\n";
  std::cout << "attention-equivalent cache bytes for batch " << batch << ": "
            << cache.attention_equiv_bytes << "\n";
  std::cout << "compression capacity (2 bytes/param, 0.5 tokens/byte, 14.8x): " << capacity
            << " tokens\n";
  if (!report_path.empty()) {
    json out;
    out["schema_version"] = 1;
    out["kind"] = "inspect";
    out["config"] = json::parse(config_to_json(config));
    out["parameters"] = param_count(config);
    out["cache_bytes_per_sample"] = cache.recurrent_bytes / std::max(batch, 1);
    out["cache_bytes"] = cache.recurrent_bytes;
    out["attention_equiv_bytes"] = cache.attention_equiv_bytes;
    out["compression_capacity"] = capacity;
    std::ofstream os(report_path, std::ios::trunc);
    os << out.dump(2) << "\n";
  }
  return 0;
}

int cmd_grpo(const std::string& config_path) {
  json j = json::parse(slurp(config_path), nullptr, true);
  ParamStore<float> params;
  SrmConfig config;
  if (j.contains("checkpoint")) {
    auto [cfg, loaded] = load_checkpoint(j.at("checkpoint").get<std::string>());
    config = cfg;
    params = std::move(loaded);
  } else {
    config = config_from_json(j.at("model").dump());
    params = init_params<float>(config, 0);
  }
  const json g = j.value("grpo", json::object());
  const int steps = g.value("steps", 50);
  const int questions_per_step = g.value("questions", 4);
  const int max_operand = g.value("max_operand", 9);
  GrpoSpec spec;
  spec.resample.group_size = g.value("group_size", 8);
  spec.resample.batch_b = g.value("batch", 8);
  spec.beta = g.value("beta", 0.04f);
  spec.max_new = g.value("max_new", 4);
  spec.sampler.temperature = g.value("temperature", 0.7f);
  spec.sampler.top_p = g.value("top_p", 0.9f);
  const uint64_t seed = g.value("seed", 0);
  OptimizerConfig opt;
  opt.lr = g.value("lr", 2e-5f);
  opt.max_grad_norm = g.value("max_grad_norm", 0.1f);
  opt.weight_decay = g.value("weight_decay", 0.1f);
  opt.warmup_steps = g.value("warmup_steps", steps / 10);
  opt.total_steps = steps;
  const std::string metrics_path = g.value("metrics_path", std::string());

  const ParamStore<float> ref_params = params;  // frozen reference policy
  AdamState adam = init_adam_state(config);
  LastNumberVerifier verifier;
  for (int a = 0; a <= max_operand; ++a)
    for (int b = 0; b <= max_operand; ++b)
      verifier.expect(a * 100 + b, a + b);
  std::ofstream metrics;
  if (!metrics_path.empty()) metrics.open(metrics_path, std::ios::app);
  Rng rng(derive_seed(seed, 0x9609));
  for (int step = 0; step < steps; ++step) {
    std::vector<Question> questions;
    for (int q = 0; q < questions_per_step; ++q) {
      const int a = rng.range_int(0, max_operand);
      const int b = rng.range_int(0, max_operand);
      questions.push_back({a * 100 + b, arithmetic_prompt_tokens(a, b)});
    }
    GrpoSpec step_spec = spec;
    step_spec.seed = derive_seed(seed, 7000 + step);
    const GrpoStepMetrics m =
        grpo_train_step(config, params, ref_params, adam, opt, questions, verifier, step_spec);
    std::cout << "step " << step << " mean_reward " << m.mean_reward << " objective "
              << m.objective << " good " << m.good << " bad " << m.bad << "\n";
    if (metrics.is_open()) {
      json row;
      row["step"] = step;
      row["mean_reward"] = m.mean_reward;
      row["objective"] = m.objective;
      row["good"] = m.good;
      row["bad"] = m.bad;
      metrics << row.dump() << "\n";
    }
  }
  if (j.contains("output_checkpoint"))
    save_checkpoint(j.at("output_checkpoint").get<std::string>(), config, params);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Structured recurrent mixer: training, generation, and benchmarks"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, report_path, prompt, prefill = "recurrent";
  uint64_t seed = 0;
  int max_new = 64, batch = 1, rounds = 4;
  float temperature = 1.0f, top_p = 1.0f;
  std::vector<int> batches;
  int passk_n = 0, passk_c = 0, passk_k = 0;
  int workers = 1;

  auto* train = app.add_subcommand("train", "run a training config");
  train->add_option("--config", config_path, "training config JSON")->required();

  auto* gen = app.add_subcommand("generate", "sample from a checkpoint");
  gen->add_option("--checkpoint", checkpoint_path)->required();
  gen->add_option("--prompt", prompt);
  gen->add_option("--max-new", max_new);
  gen->add_option("--temperature", temperature);
  gen->add_option("--top-p", top_p);
  gen->add_option("--seed", seed);
  gen->add_option("--prefill", prefill)->check(CLI::IsMember({"recurrent", "parallel"}));

  auto* bench = app.add_subcommand("bench", "decode throughput/latency benchmark");
  bench->add_option("--config", config_path);
  bench->add_option("--checkpoint", checkpoint_path);
  bench->add_option("--batch", batches, "batch sizes (repeatable)");
  bench->add_option("--max-new", max_new, "decode length");
  bench->add_option("--seed", seed);
  bench->add_option("--workers", workers);
  bench->add_option("--report", report_path);

  auto* check = app.add_subcommand("check-equivalence", "parallel vs recurrent sweep");
  check->add_option("--seed", seed);
  check->add_option("--rounds", rounds, "rounds per grid combination");
  check->add_option("--report", report_path);

  auto* grpo = app.add_subcommand("grpo", "GRPO on the toy arithmetic task");
  grpo->add_option("--config", config_path)->required();

  auto* passk = app.add_subcommand("passk", "coverage estimate 1 - C(n-c,k)/C(n,k)");
  passk->add_option("--n", passk_n)->required();
  passk->add_option("--c", passk_c)->required();
  passk->add_option("--k", passk_k)->required();

  auto* inspect = app.add_subcommand("inspect", "parameter and cache accounting");
  inspect->add_option("--config", config_path)->required();
  inspect->add_option("--batch", batch);
  inspect->add_option("--report", report_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (gen->parsed())
      return cmd_generate(checkpoint_path, prompt, max_new, temperature, top_p, seed, prefill);
    if (bench->parsed())
      return cmd_bench(config_path, checkpoint_path, batches, max_new, seed, workers, report_path);
    if (check->parsed()) return cmd_check_equivalence(seed, rounds, report_path);
    if (grpo->parsed()) return cmd_grpo(config_path);
    if (passk->parsed()) return cmd_passk(passk_n, passk_c, passk_k);
    if (inspect->parsed()) return cmd_inspect(config_path, batch, report_path);
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace srm
