// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "precision.hpp"

#include "error.hpp"

namespace nsad {

double machine_epsilon(Precision p) {
  switch (p) {
    case Precision::B16: return 0x1.0p-10;
    case Precision::B32: return 0x1.0p-23;
    default: return 0x1.0p-52;
  }
}

const char* precision_name(Precision p) {
  switch (p) {
    case Precision::B16: return "b16";
    case Precision::B32: return "b32";
    default: return "b64";
  }
}

Precision precision_from_bits(int bits) {
  switch (bits) {
    case 16: return Precision::B16;
    case 32: return Precision::B32;
    case 64: return Precision::B64;
    default:
      throw Error(ErrorKind::Config,
                  "precision must be one of 16, 32, 64 (got " + std::to_string(bits) + ")");
  }
}

uint16_t f16_encode(double canonical) {
  uint64_t u;
  std::memcpy(&u, &canonical, sizeof u);
  uint16_t sign = static_cast<uint16_t>((u >> 48) & 0x8000u);
  uint64_t mag = u & 0x7fffffffffffffffULL;
  if (mag > 0x7ff0000000000000ULL) return static_cast<uint16_t>(sign | 0x7e00u);  // nan
  if (mag == 0x7ff0000000000000ULL) return static_cast<uint16_t>(sign | 0x7c00u); // inf
  if (mag == 0) return sign;
  NSAD_CHECK(f16_round(canonical) == canonical, ErrorKind::Internal,
             "f16_encode requires a value exactly representable in binary16");
  int e = static_cast<int>(mag >> 52) - 1023;
  if (e >= -14) {
    uint64_t frac = (mag & 0xfffffffffffffULL) >> 42;  // top 10 mantissa bits
    return static_cast<uint16_t>(sign | (static_cast<uint16_t>(e + 15) << 10) |
                                 static_cast<uint16_t>(frac));
  }
  // Subnormal: the value is k * 2^-24 with 0 < k < 1024.
  double k = std::fabs(canonical) * 0x1.0p24;
  return static_cast<uint16_t>(sign | static_cast<uint16_t>(k));
}

double f16_decode(uint16_t bits) {
  double sign = (bits & 0x8000u) ? -1.0 : 1.0;
  int e = (bits >> 10) & 0x1f;
  int frac = bits & 0x3ff;
  if (e == 0x1f) {
    if (frac) return std::numeric_limits<double>::quiet_NaN();
    return sign * std::numeric_limits<double>::infinity();
  }
  if (e == 0) return sign * static_cast<double>(frac) * 0x1.0p-24;
  return sign * static_cast<double>(1024 + frac) * detail::pow2i(e - 25);
}

}  // namespace nsad
