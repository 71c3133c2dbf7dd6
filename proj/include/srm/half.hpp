#pragma once

#include <cstdint>
#include <cstring>
#include <span>

namespace srm {

// IEEE 754 binary16 conversion (round-to-nearest-even), used to emulate a
// half-precision recurrent cache on hardware without native fp16.

inline uint16_t float_to_half_bits(float f) {
  uint32_t x;
  std::memcpy(&x, &f, sizeof(x));
  const uint32_t sign = (x >> 16) & 0x8000u;
  uint32_t mant = x & 0x007fffffu;
  const uint32_t fexp = (x >> 23) & 0xffu;
  if (fexp == 0xffu) {  // inf / nan
    return static_cast<uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  }
  const int32_t exp = static_cast<int32_t>(fexp) - 127 + 15;
  if (exp >= 31) return static_cast<uint16_t>(sign | 0x7c00u);  // overflow -> inf
  if (exp <= 0) {
    if (exp < -10) return static_cast<uint16_t>(sign);  // underflow -> signed zero
    mant |= 0x00800000u;
    const int shift = 14 - exp;  // in [14, 24]
    uint32_t half_mant = mant >> shift;
    const uint32_t rem = mant & ((1u << shift) - 1);
    const uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant++;
    return static_cast<uint16_t>(sign | half_mant);
  }
  uint32_t half = sign | (static_cast<uint32_t>(exp) << 10) | (mant >> 13);
  const uint32_t rem = mant & 0x1fffu;
  // Mantissa carry on rounding rolls into the exponent, which is the correct
  // behaviour (e.g. 65520.f -> inf).
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) half++;
  return static_cast<uint16_t>(half);
}

inline float half_bits_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1fu;
  uint32_t mant = h & 0x3ffu;
  uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      int shift = 0;
      while (!(mant & 0x400u)) {
        mant <<= 1;
        shift++;
      }
      mant &= 0x3ffu;
      const uint32_t fexp = static_cast<uint32_t>(127 - 15 - shift);
      x = sign | (fexp << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    x = sign | 0x7f800000u | (mant << 13);
  } else {
    x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &x, sizeof(f));
  return f;
}

inline float round_to_half(float f) { return half_bits_to_float(float_to_half_bits(f)); }

template <typename T>
inline T round_to_half(T v) {  // double path routes through float
  return static_cast<T>(round_to_half(static_cast<float>(v)));
}

template <typename T>
inline void round_span_to_half(std::span<T> v) {
  for (auto& x : v) x = round_to_half(x);
}

}  // namespace srm
