#include "srm/config.hpp"

#include <json.hpp>

#include <stdexcept>

namespace srm {

using nlohmann::json;

std::string head_mode_name(HeadMode mode) {
  switch (mode) {
    case HeadMode::Mixed: return "mixed";
    case HeadMode::Combined: return "combined";
    case HeadMode::RowOnly: return "row_only";
    case HeadMode::ColumnOnly: return "column_only";
  }
  throw std::invalid_argument("head_mode: unknown value");
}

HeadMode head_mode_from_name(const std::string& name) {
  if (name == "mixed") return HeadMode::Mixed;
  if (name == "combined") return HeadMode::Combined;
  if (name == "row_only") return HeadMode::RowOnly;
  if (name == "column_only") return HeadMode::ColumnOnly;
  throw std::invalid_argument("head_mode: expected one of mixed|combined|row_only|column_only, got '" +
                              name + "'");
}

void SrmConfig::validate() const {
  if (d_model < 1) throw std::invalid_argument("d_model: must be positive");
  if (n_layers < 1) throw std::invalid_argument("n_layers: must be positive");
  if (n_heads < 0) throw std::invalid_argument("n_heads: must be >= 0");
  if (n_heads > 0 && d_model % n_heads != 0)
    throw std::invalid_argument("n_heads: d_model must be divisible by n_heads");
  if (!kernelized() && head_mode == HeadMode::Mixed && effective_heads() % 2 != 0)
    throw std::invalid_argument("head_mode: mixed requires an even number of heads");
  if (n_ctx < 1) throw std::invalid_argument("n_ctx: must be positive");
  if (vocab_size < 2) throw std::invalid_argument("vocab_size: must be >= 2");
  if (kernel_size < 1) throw std::invalid_argument("kernel_size: must be >= 1");
  if (ff_expansion < 1) throw std::invalid_argument("ff_expansion: must be >= 1");
  if (bos_id < 0 || bos_id >= vocab_size)
    throw std::invalid_argument("bos_id: must lie in [0, vocab_size)");
}

namespace {
json config_to_json_obj(const SrmConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["n_ctx"] = c.n_ctx;
  j["vocab_size"] = c.vocab_size;
  j["head_mode"] = head_mode_name(c.head_mode);
  j["head_parallel"] = c.head_parallel;
  j["use_projections"] = c.use_projections;
  j["decay_enabled"] = c.decay_enabled;
  j["diag_const_enabled"] = c.diag_const_enabled;
  j["kernel_size"] = c.kernel_size;
  j["ff_expansion"] = c.ff_expansion;
  j["bos_id"] = c.bos_id;
  return j;
}

}  // namespace

std::string config_to_json(const SrmConfig& config) { return config_to_json_obj(config).dump(); }

namespace {
template <typename T>
T get_field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string(key) + ": malformed value");
  }
}

SrmConfig config_from_json_obj(const json& j) {
  SrmConfig c;
  c.d_model = get_field(j, "d_model", c.d_model);
  c.n_layers = get_field(j, "n_layers", c.n_layers);
  c.n_heads = get_field(j, "n_heads", c.n_heads);
  c.n_ctx = get_field(j, "n_ctx", c.n_ctx);
  c.vocab_size = get_field(j, "vocab_size", c.vocab_size);
  if (j.contains("head_mode")) c.head_mode = head_mode_from_name(j.at("head_mode").get<std::string>());
  c.head_parallel = get_field(j, "head_parallel", c.head_parallel);
  c.use_projections = get_field(j, "use_projections", c.use_projections);
  c.decay_enabled = get_field(j, "decay_enabled", c.decay_enabled);
  c.diag_const_enabled = get_field(j, "diag_const_enabled", c.diag_const_enabled);
  c.kernel_size = get_field(j, "kernel_size", c.kernel_size);
  c.ff_expansion = get_field(j, "ff_expansion", c.ff_expansion);
  c.bos_id = get_field(j, "bos_id", c.bos_id);
  c.validate();
  return c;
}

}  // namespace

SrmConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

}  // namespace srm
