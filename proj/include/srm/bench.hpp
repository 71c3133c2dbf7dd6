#pragma once

#include <string>
#include <vector>

#include "srm/model.hpp"

namespace srm {

struct CacheBytesReport {
  long long recurrent_bytes = 0;       // batch * layers * cache scalars * bytes
  long long attention_equiv_bytes = 0; // hypothetical KV figure for comparison
};

// Exact recurrent-cache footprint for a config, next to the KV-cache figure
// (batch * layers * d * n_ctx * 2 * bytes) a same-shape attention model
// would need.
CacheBytesReport cache_bytes(const SrmConfig& config, int batch, int bytes_per_scalar);

// Tokens a d_model-wide state is expected to compress losslessly:
// floor(d_model * bytes_per_param * tokens_per_byte * compression_ratio).
long long compression_capacity(double d_model, double bytes_per_param, double tokens_per_byte,
                               double compression_ratio);

struct BenchRow {
  int batch = 0;
  bool argmax = true;          // token selection included in the step
  int steps_measured = 0;
  int warmup_discarded = 0;
  double tokens_per_s = 0.0;   // decode phase only
  double p50_us = 0.0;
  double p95_us = 0.0;
  double prefill_ms = 0.0;     // reported separately from decode throughput
  long long cache_bytes_per_sample = 0;
  long long peak_rss_bytes = 0;
  bool alloc_failed = false;   // this batch size is the concurrency ceiling
};

struct BenchReport {
  SrmConfig config;
  uint64_t seed = 0;
  int gen_len = 0;
  int workers = 1;
  std::vector<BenchRow> rows;
};

struct BenchOptions {
  int gen_len = 128;
  int warmup_steps = 10;
  uint64_t seed = 0;
  int workers = 1;
  bool logits_only_pass = true;  // also measure without token selection
};

// Greedy decode timing per batch size. An allocation failure at some batch
// size is recorded as that size's ceiling and the run continues.
BenchReport bench_decode(const ModelView<float>& model, const std::vector<int>& batch_sizes,
                         const BenchOptions& options);

// Median per-step decode latency (microseconds) over a window of steps
// centered on `token_index`; used by the constant-step-cost checks.
double decode_latency_at(const ModelView<float>& model, int batch, int token_index, int window,
                         uint64_t seed);

std::string bench_report_json(const BenchReport& report);
void write_bench_report(const std::string& path, const BenchReport& report);

long long read_peak_rss_bytes();

}  // namespace srm
