#include "srm/equivalence.hpp"

#include <algorithm>
#include <cmath>

#include "srm/model.hpp"
#include "srm/rng.hpp"

namespace srm {

namespace {

float matrix_max_abs_diff(const Matrix<float>& a, const Matrix<float>& b) {
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

float state_max_abs_diff(const SampleState<float>& a, const SampleState<float>& b) {
  float m = 0.0f;
  for (size_t l = 0; l < a.layers.size(); ++l)
    for (size_t h = 0; h < a.layers[l].heads.size(); ++h) {
      const auto& sa = a.layers[l].heads[h].state;
      const auto& sb = b.layers[l].heads[h].state;
      for (size_t i = 0; i < sa.size(); ++i) m = std::max(m, std::abs(sa[i] - sb[i]));
    }
  return m;
}

}  // namespace

EquivalenceSummary run_equivalence_grid(uint64_t seed, int rounds_per_combo) {
  const HeadMode modes[] = {HeadMode::Mixed, HeadMode::Combined, HeadMode::RowOnly,
                            HeadMode::ColumnOnly};
  const bool flags[] = {false, true};
  const int kernels[] = {1, 4};

  EquivalenceSummary summary;
  uint64_t case_id = 0;
  for (HeadMode mode : modes)
    for (bool decay : flags)
      for (bool projections : flags)
        for (int kernel : kernels)
          for (int round = 0; round < rounds_per_combo; ++round) {
            Rng rng(derive_seed(seed, ++case_id));
            SrmConfig cfg;
            cfg.head_mode = mode;
            cfg.decay_enabled = decay;
            cfg.use_projections = projections;
            cfg.kernel_size = kernel;
            cfg.head_parallel = projections && rng.coin();
            cfg.diag_const_enabled = rng.range_int(0, 3) == 0;
            if (mode == HeadMode::Mixed && kernel == 1) {
              cfg.n_heads = rng.coin() ? 2 : 4;
            } else {
              const int choices[] = {0, 1, 2, 4};
              cfg.n_heads = choices[rng.range_int(0, 3)];
            }
            const int head_dims[] = {4, 8, 16};
            const int dh = head_dims[rng.range_int(0, 2)];
            cfg.d_model = cfg.effective_heads() * dh;  // <= 64 for all combos
            cfg.n_layers = rng.range_int(1, 2);
            cfg.n_ctx = rng.range_int(4, 64);
            cfg.vocab_size = rng.range_int(11, 48);
            cfg.bos_id = 0;
            cfg.validate();

            const int n = rng.range_int(2, std::min(64, cfg.n_ctx));
            ParamStore<float> params = init_params<float>(cfg, rng.next_u64());
            ModelView<float> view = make_model_view(cfg, params);
            std::vector<int> tokens(static_cast<size_t>(n));
            for (auto& t : tokens) t = rng.range_int(0, cfg.vocab_size - 1);

            const Matrix<float> parallel = forward_parallel_one(view, tokens);
            const Matrix<float> rec32 = forward_recurrent_teacher<float>(view, tokens);
            const Matrix<float> rec16 =
                forward_recurrent_teacher<float>(view, tokens, CachePrecision::Emulated16);

            EquivalenceRow row;
            row.config = cfg;
            row.seed = seed;
            row.seq_len = n;
            row.max_dev_fp32 = matrix_max_abs_diff(parallel, rec32);
            row.max_dev_fp16 = matrix_max_abs_diff(parallel, rec16);

            // both prefill paths must land in the same cache state
            SampleState<float> via_loop = init_sample_state<float>(cfg);
            prefill_recurrent(view, tokens, via_loop);
            SampleState<float> via_parallel = init_sample_state<float>(cfg);
            prefill_parallel(view, tokens, via_parallel);
            row.prefill_dev = std::max(state_max_abs_diff(via_loop, via_parallel),
                                       static_cast<float>(std::abs(
                                           static_cast<double>(via_loop.position) -
                                           via_parallel.position)));

            summary.max_dev_fp32 = std::max(summary.max_dev_fp32, row.max_dev_fp32);
            summary.max_dev_fp16 = std::max(summary.max_dev_fp16, row.max_dev_fp16);
            summary.max_prefill_dev = std::max(summary.max_prefill_dev, row.prefill_dev);
            summary.rows.push_back(std::move(row));
          }
  summary.configs = static_cast<int>(summary.rows.size());
  return summary;
}

}  // namespace srm
