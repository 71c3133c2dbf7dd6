#include "srm/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace srm {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'R', 'M', '1'};

void write_u64_le(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f32_le(std::ostream& os, const float* data, size_t count) {
  // assumes little-endian float storage (x86/aarch64); asserted at startup
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

}  // namespace

void save_checkpoint(const std::string& path, const SrmConfig& config,
                     const ParamStore<float>& params) {
  json header;
  header["format_version"] = 1;
  header["config"] = json::parse(config_to_json(config));
  json manifest = json::array();
  uint64_t offset = 0;
  for (size_t i = 0; i < params.count(); ++i) {
    const Matrix<float>& t = params.tensors[i];
    json entry;
    entry["name"] = params.names[i];
    entry["shape"] = {t.rows(), t.cols()};
    entry["offset"] = offset;
    manifest.push_back(entry);
    offset += static_cast<uint64_t>(t.size()) * 4;
  }
  header["tensors"] = manifest;
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_u64_le(os, header_text.size());
  os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& t : params.tensors) write_f32_le(os, t.data(), t.size());
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::pair<SrmConfig, ParamStore<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint64_t header_len = read_u64_le(is);
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: malformed header: ") + e.what());
  }
  const SrmConfig config = config_from_json(header.at("config").dump());
  ParamStore<float> params = make_param_store<float>(config);
  const auto& manifest = header.at("tensors");
  if (manifest.size() != params.count())
    throw std::runtime_error("load_checkpoint: manifest size does not match config schema");
  for (size_t i = 0; i < params.count(); ++i) {
    const auto& entry = manifest.at(i);
    if (entry.at("name").get<std::string>() != params.names[i])
      throw std::runtime_error("load_checkpoint: tensor order mismatch at " + params.names[i]);
    const auto shape = entry.at("shape");
    if (shape.at(0).get<int>() != params.tensors[i].rows() ||
        shape.at(1).get<int>() != params.tensors[i].cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + params.names[i]);
  }
  for (auto& t : params.tensors) {
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
    if (!is) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
  }
  return {config, std::move(params)};
}

}  // namespace srm
