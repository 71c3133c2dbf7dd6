#include "srm/params.hpp"

namespace srm {

namespace {

void add_mixer(std::vector<TensorSpec>& out, const std::string& prefix, const SrmConfig& c,
               bool with_bias) {
  out.push_back({prefix + ".alpha", c.n_ctx, 1});
  out.push_back({prefix + ".decay_raw", 1, 1});
  if (c.diag_const_enabled) out.push_back({prefix + ".diag_const", 1, 1});
  if (with_bias) out.push_back({prefix + ".bias", c.head_dim(), c.n_ctx});
}

}  // namespace

std::vector<TensorSpec> param_schema(const SrmConfig& config) {
  config.validate();
  std::vector<TensorSpec> out;
  const int d = config.d_model;
  const int dh = config.head_dim();
  const int heads = config.effective_heads();
  const int ff_dim = config.ff_expansion * d;
  out.push_back({"embed.weight", config.vocab_size, d});
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string lp = "layers." + std::to_string(l) + ".";
    out.push_back({lp + "norm_mix.gain", d, 1});
    if (config.use_projections) {
      if (config.head_parallel) {
        out.push_back({lp + "in_proj.weight", d, d});
      } else {
        for (int h = 0; h < heads; ++h)
          out.push_back({lp + "heads." + std::to_string(h) + ".in_proj.weight", dh, d});
      }
    }
    for (int h = 0; h < heads; ++h) {
      const std::string hp = lp + "heads." + std::to_string(h) + ".";
      if (config.kernelized()) {
        for (int f = 0; f < config.kernel_size; ++f)
          add_mixer(out, hp + "mix.filters." + std::to_string(f), config, /*with_bias=*/f == 0);
      } else if (config.head_mode == HeadMode::Combined) {
        add_mixer(out, hp + "row_mix", config, true);
        add_mixer(out, hp + "col_mix", config, true);
        out.push_back({hp + "combine", 2, 1});
      } else {
        add_mixer(out, hp + "mix", config, true);
      }
    }
    if (config.use_projections) out.push_back({lp + "out_proj.weight", d, d});
    out.push_back({lp + "norm_ff.gain", d, 1});
    out.push_back({lp + "ff.w1", ff_dim, d});
    out.push_back({lp + "ff.b1", ff_dim, 1});
    out.push_back({lp + "ff.w2", d, ff_dim});
    out.push_back({lp + "ff.b2", d, 1});
  }
  out.push_back({"final_norm.gain", d, 1});
  out.push_back({"lm_head.weight", config.vocab_size, d});
  return out;
}

long long param_count(const SrmConfig& config) {
  long long n = 0;
  for (const auto& spec : param_schema(config))
    n += static_cast<long long>(spec.rows) * spec.cols;
  return n;
}

}  // namespace srm
