#pragma once

#include <cstdint>
#include <vector>

#include "srm/config.hpp"

namespace srm {

struct EquivalenceRow {
  SrmConfig config;
  uint64_t seed = 0;
  int seq_len = 0;
  float max_dev_fp32 = 0.0f;    // |parallel - recurrent|, 32-bit caches
  float max_dev_fp16 = 0.0f;    // |parallel - recurrent|, emulated fp16 caches
  float prefill_dev = 0.0f;     // recurrent vs parallel prefill state gap
};

struct EquivalenceSummary {
  std::vector<EquivalenceRow> rows;
  float max_dev_fp32 = 0.0f;
  float max_dev_fp16 = 0.0f;
  float max_prefill_dev = 0.0f;
  int configs = 0;
};

// Random-config sweep over all head modes x decay x projections x kernel
// size (plus head-parallel / diagonal / non-headed variants), comparing the
// sequence-parallel logits against the teacher-forced recurrent pass.
EquivalenceSummary run_equivalence_grid(uint64_t seed, int rounds_per_combo = 4);

}  // namespace srm
