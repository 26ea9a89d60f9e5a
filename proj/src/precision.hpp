// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace nsad {

// IEEE-754 working formats. Values are carried as binary64 doubles that are
// exactly representable in their nominal format ("canonical" values); every
// elementary operation rounds to nearest-even in that format before the
// result is stored. No operation uses extended intermediate precision.
enum class Precision : int { B16 = 16, B32 = 32, B64 = 64 };

double machine_epsilon(Precision p);          // 2^-10, 2^-23, 2^-52
const char* precision_name(Precision p);      // "b16", "b32", "b64"
Precision precision_from_bits(int bits);      // throws Error(Config) otherwise

namespace detail {
inline double pow2i(int n) {
  // n in [-1022, 1023]; assembles the exponent field directly.
  uint64_t bits = static_cast<uint64_t>(n + 1023) << 52;
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}
}  // namespace detail

// Round a binary64 value to the nearest binary16 value (ties to even),
// returning the result as an exactly-representable double. Overflow goes to
// +-Inf at the IEEE threshold (|x| >= 65520), underflow through the binary16
// subnormal range down to +-0.
inline double f16_round(double x) {
  uint64_t u;
  std::memcpy(&u, &x, sizeof u);
  uint64_t mag = u & 0x7fffffffffffffffULL;
  if (mag == 0) return x;                        // +-0
  if (mag >= 0x7ff0000000000000ULL) return x;    // inf, nan
  double a = std::fabs(x);
  double s = std::copysign(1.0, x);
  if (a >= 65520.0) return s * std::numeric_limits<double>::infinity();
  int e = static_cast<int>(mag >> 52) - 1023;    // floor(log2 a) for normals
  double q = (e < -14) ? detail::pow2i(-24)      // binary16 subnormal quantum
                       : detail::pow2i(e - 10);
  // Exact power-of-two scaling brings the quantum to 1; adding and removing
  // 2^52 rounds to integer under the ambient nearest-even mode.
  double scaled = a / q;
  double r = (scaled + 0x1.0p52) - 0x1.0p52;
  return s * (r * q);
}

inline double f32_round(double x) { return static_cast<double>(static_cast<float>(x)); }

inline double round_to(double x, Precision p) {
  switch (p) {
    case Precision::B16: return f16_round(x);
    case Precision::B32: return f32_round(x);
    default: return x;
  }
}

// Bit codecs between canonical doubles and raw binary16 payloads.
// f16_encode requires f16_round(x) == x (checked); NaN maps to a quiet NaN.
uint16_t f16_encode(double canonical);
double f16_decode(uint16_t bits);

// Scalar arithmetic in a given format. Operands must be canonical; the
// result is canonical. For +,-,*,/ and sqrt the double-op-then-round path
// is exact for binary16 and binary32 (the double significand is wide enough
// that no double rounding occurs).
inline double fp_add(double a, double b, Precision p) { return round_to(a + b, p); }
inline double fp_sub(double a, double b, Precision p) { return round_to(a - b, p); }
inline double fp_mul(double a, double b, Precision p) { return round_to(a * b, p); }
inline double fp_div(double a, double b, Precision p) { return round_to(a / b, p); }
inline double fp_sqrt(double a, Precision p) { return round_to(std::sqrt(a), p); }
// Transcendentals evaluate in binary64 via libm, then round once.
inline double fp_exp(double a, Precision p) { return round_to(std::exp(a), p); }
inline double fp_log(double a, Precision p) { return round_to(std::log(a), p); }

// Kernel math policies. S is the scratch scalar type a kernel iterates in;
// load/store convert between canonical doubles and scratch values exactly.
struct MathB64 {
  using S = double;
  static S load(double v) { return v; }
  static double store(S v) { return v; }
  static S add(S a, S b) { return a + b; }
  static S sub(S a, S b) { return a - b; }
  static S mul(S a, S b) { return a * b; }
  static S div(S a, S b) { return a / b; }
};

struct MathB32 {
  // Native float arithmetic rounds correctly to binary32 at every step.
  using S = float;
  static S load(double v) { return static_cast<float>(v); }
  static double store(S v) { return static_cast<double>(v); }
  static S add(S a, S b) { return a + b; }
  static S sub(S a, S b) { return a - b; }
  static S mul(S a, S b) { return a * b; }
  static S div(S a, S b) { return a / b; }
};

struct MathB16 {
  using S = double;
  static S load(double v) { return v; }
  static double store(S v) { return v; }
  static S add(S a, S b) { return f16_round(a + b); }
  static S sub(S a, S b) { return f16_round(a - b); }
  static S mul(S a, S b) { return f16_round(a * b); }
  static S div(S a, S b) { return f16_round(a / b); }
};

// Dispatch helper: invokes fn.template operator()<M>() with the policy
// matching p.
template <class Fn>
decltype(auto) dispatch_precision(Precision p, Fn&& fn) {
  switch (p) {
    case Precision::B16: return fn.template operator()<MathB16>();
    case Precision::B32: return fn.template operator()<MathB32>();
    default: return fn.template operator()<MathB64>();
  }
}

}  // namespace nsad
