#include "srm/bench.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <new>
#include <numeric>
#include <string>

namespace srm {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

CacheBytesReport cache_bytes(const SrmConfig& config, int batch, int bytes_per_scalar) {
  CacheBytesReport report;
  const long long per_layer = layer_cache_scalar_count(config.layer_spec());
  report.recurrent_bytes = static_cast<long long>(batch) * config.n_layers * per_layer *
                           bytes_per_scalar;
  report.attention_equiv_bytes = static_cast<long long>(batch) * config.n_layers *
                                 config.d_model * config.n_ctx * 2LL * bytes_per_scalar;
  return report;
}

long long compression_capacity(double d_model, double bytes_per_param, double tokens_per_byte,
                               double compression_ratio) {
  if (d_model <= 0 || bytes_per_param <= 0 || tokens_per_byte <= 0 || compression_ratio <= 0)
    throw std::invalid_argument("compression_capacity: inputs must be positive");
  return static_cast<long long>(
      std::floor(d_model * bytes_per_param * tokens_per_byte * compression_ratio));
}

long long read_peak_rss_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      long long kb = 0;
      for (char ch : line)
        if (ch >= '0' && ch <= '9') kb = kb * 10 + (ch - '0');
      return kb * 1024;
    }
  }
  return 0;
}

namespace {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double idx = p * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(idx);
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

int argmax_row(const Matrix<float>& logits, int row) {
  int best = 0;
  for (int c = 1; c < logits.cols(); ++c)
    if (logits(row, c) > logits(row, best)) best = c;
  return best;
}

BenchRow run_one(const ModelView<float>& model, int batch, bool argmax,
                 const BenchOptions& options) {
  const SrmConfig& cfg = model.config;
  BenchRow row;
  row.batch = batch;
  row.argmax = argmax;
  row.warmup_discarded = options.warmup_steps;
  const int total_steps = options.gen_len + options.warmup_steps;
  if (total_steps + 1 > cfg.n_ctx)
    throw std::invalid_argument("bench_decode: gen_len + warmup exceeds n_ctx");
  if (options.gen_len == 0) return row;

  GenerationState<float> state = init_generation_state<float>(cfg, batch);
  const auto prefill_start = Clock::now();
  std::vector<int> tokens(static_cast<size_t>(batch), cfg.bos_id);
  StepResult<float> step = forward_recurrent_step<float>(model, tokens, state);
  row.prefill_ms = std::chrono::duration<double, std::milli>(Clock::now() - prefill_start).count();
  row.cache_bytes_per_sample = state.samples.front().cache_scalar_count() *
                               static_cast<long long>(sizeof(float));

  std::vector<double> step_us;
  step_us.reserve(static_cast<size_t>(options.gen_len));
  double timed_total = 0.0;
  for (int s = 0; s < total_steps; ++s) {
    const auto t0 = Clock::now();
    if (argmax) {
      for (int b = 0; b < batch; ++b) tokens[static_cast<size_t>(b)] = argmax_row(step.logits, b);
    }
    // logits-only mode feeds a fixed token: measures the model step without
    // the token-selection pass
    step = forward_recurrent_step<float>(model, tokens, state);
    const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
    if (s >= options.warmup_steps) {
      step_us.push_back(us);
      timed_total += us;
    }
  }
  row.steps_measured = static_cast<int>(step_us.size());
  row.tokens_per_s = timed_total > 0.0
                         ? static_cast<double>(batch) * row.steps_measured / (timed_total * 1e-6)
                         : 0.0;
  row.p50_us = percentile(step_us, 0.50);
  row.p95_us = percentile(step_us, 0.95);
  row.peak_rss_bytes = read_peak_rss_bytes();
  return row;
}

}  // namespace

BenchReport bench_decode(const ModelView<float>& model, const std::vector<int>& batch_sizes,
                         const BenchOptions& options) {
  BenchReport report;
  report.config = model.config;
  report.seed = options.seed;
  report.gen_len = options.gen_len;
  report.workers = options.workers;
  for (int batch : batch_sizes) {
    for (int mode = 0; mode < (options.logits_only_pass ? 2 : 1); ++mode) {
      const bool argmax = mode == 0;
      try {
        report.rows.push_back(run_one(model, batch, argmax, options));
      } catch (const std::bad_alloc&) {
        BenchRow row;
        row.batch = batch;
        row.argmax = argmax;
        row.alloc_failed = true;  // concurrency ceiling for this config
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

double decode_latency_at(const ModelView<float>& model, int batch, int token_index, int window,
                         uint64_t seed) {
  (void)seed;
  const SrmConfig& cfg = model.config;
  if (token_index + window / 2 + 2 > cfg.n_ctx)
    throw std::invalid_argument("decode_latency_at: window exceeds n_ctx");
  GenerationState<float> state = init_generation_state<float>(cfg, batch);
  std::vector<int> tokens(static_cast<size_t>(batch), cfg.bos_id);
  StepResult<float> step = forward_recurrent_step<float>(model, tokens, state);
  std::vector<double> samples;
  const int first = token_index - window / 2;
  const int last = token_index + window / 2;
  for (int s = 0; s <= last; ++s) {
    for (int b = 0; b < batch; ++b) tokens[static_cast<size_t>(b)] = argmax_row(step.logits, b);
    const auto t0 = Clock::now();
    step = forward_recurrent_step<float>(model, tokens, state);
    const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
    if (s >= first) samples.push_back(us);
  }
  return percentile(samples, 0.5);
}

std::string bench_report_json(const BenchReport& report) {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "bench";
  j["config"] = json::parse(config_to_json(report.config));
  j["seed"] = report.seed;
  j["gen_len"] = report.gen_len;
  j["workers"] = report.workers;
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row;
    row["batch"] = r.batch;
    row["argmax"] = r.argmax;
    row["steps_measured"] = r.steps_measured;
    row["warmup_discarded"] = r.warmup_discarded;
    row["tokens_per_s"] = r.tokens_per_s;
    row["p50_us"] = r.p50_us;
    row["p95_us"] = r.p95_us;
    row["prefill_ms"] = r.prefill_ms;
    row["cache_bytes_per_sample"] = r.cache_bytes_per_sample;
    row["peak_rss_bytes"] = r.peak_rss_bytes;
    row["alloc_failed"] = r.alloc_failed;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2);
}

void write_bench_report(const std::string& path, const BenchReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_bench_report: cannot open " + path);
  os << bench_report_json(report) << "\n";
}

}  // namespace srm
