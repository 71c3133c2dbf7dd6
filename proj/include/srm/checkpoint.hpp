#pragma once

#include <string>
#include <utility>

#include "srm/config.hpp"
#include "srm/params.hpp"

namespace srm {

// SRM1 checkpoint: magic "SRM1", little-endian u64 header length, a JSON
// header (config + tensor manifest with name/shape/byte offset), then the
// raw little-endian 32-bit float payload in manifest order. Save -> load ->
// save is bit-identical.
void save_checkpoint(const std::string& path, const SrmConfig& config,
                     const ParamStore<float>& params);

std::pair<SrmConfig, ParamStore<float>> load_checkpoint(const std::string& path);

}  // namespace srm
