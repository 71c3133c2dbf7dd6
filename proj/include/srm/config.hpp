#pragma once

#include <string>

#include "srm/recurrent.hpp"

namespace srm {

enum class HeadMode { Mixed, Combined, RowOnly, ColumnOnly };

std::string head_mode_name(HeadMode mode);
HeadMode head_mode_from_name(const std::string& name);

// Full architecture hyperparameters. n_heads == 0 selects a single non-headed
// mixer of width d_model. kernel_size > 1 switches every head to kernelized
// column-repeat mixing regardless of head_mode.
struct SrmConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int n_ctx = 64;
  int vocab_size = 258;   // 256 bytes + begin + pad
  HeadMode head_mode = HeadMode::Mixed;
  bool head_parallel = false;   // shared input projection sliced into heads
  bool use_projections = true;  // per-head inputs and out projection present
  bool decay_enabled = true;
  bool diag_const_enabled = false;
  int kernel_size = 1;
  int ff_expansion = 4;
  int bos_id = 256;

  int effective_heads() const { return n_heads > 0 ? n_heads : 1; }
  int head_dim() const { return d_model / effective_heads(); }
  bool kernelized() const { return kernel_size > 1; }

  LayerSpec layer_spec() const {
    LayerSpec spec;
    spec.n_heads = effective_heads();
    spec.head_dim = head_dim();
    spec.combined = !kernelized() && head_mode == HeadMode::Combined;
    spec.kernel_size = kernelized() ? kernel_size : 1;
    return spec;
  }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

std::string config_to_json(const SrmConfig& config);
SrmConfig config_from_json(const std::string& json_text);

}  // namespace srm
