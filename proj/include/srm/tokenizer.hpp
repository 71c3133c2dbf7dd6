#pragma once

#include <span>
#include <string>
#include <vector>

namespace srm {

// Byte-level vocabulary: ids 0..255 are raw bytes, then begin and pad.
inline constexpr int kByteVocabSize = 258;
inline constexpr int kByteBosId = 256;
inline constexpr int kBytePadId = 257;

inline std::vector<int> encode_bytes(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char ch : text) ids.push_back(static_cast<int>(ch));
  return ids;
}

inline std::string decode_bytes(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids)
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  return out;
}

}  // namespace srm
