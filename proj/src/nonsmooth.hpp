// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace nsad {

// Backward-pass selection for pooling layers. Native routes the whole
// upstream gradient to the first (row-major) index attaining the window
// maximum; Minimal spreads it evenly over all attaining indices; Hybrid
// blends the two with weight beta. The Norm modes select between the two
// zero-window completions of Euclidean-norm pooling.
enum class PoolMode : uint8_t { Native, Minimal, Hybrid, NormZero, NormUniform };

const char* pool_mode_name(PoolMode m);

struct NonsmoothPolicy {
  double relu_s = 0.0;   // value assigned to relu'(0), in [0,1]
  PoolMode pool_mode = PoolMode::Native;
  double beta = 0.0;     // Hybrid blend weight, >= 0

  static NonsmoothPolicy native(double relu_s = 0.0);
  static NonsmoothPolicy minimal(double relu_s = 0.0);
  static NonsmoothPolicy hybrid(double beta, double relu_s = 0.0);
  static NonsmoothPolicy norm_zero();
  static NonsmoothPolicy norm_uniform();

  void validate() const;  // throws Error(Config) on out-of-range fields
  std::string name() const;
};

// Non-overlapping pooling: stride equals the window, trailing rows/columns
// that do not fill a window are dropped.
struct PoolGeometry {
  size_t win_h = 2, win_w = 2;
  size_t in_h = 0, in_w = 0;

  size_t out_h() const { return in_h / win_h; }
  size_t out_w() const { return in_w / win_w; }
  size_t window_size() const { return win_h * win_w; }
  void validate() const;
};

// Window-local flat positions (row-major) attaining the maximum, in
// lexicographic order. Membership is exact bitwise equality with the max;
// values within one ulp but unequal are not tied.
struct ActiveSet {
  std::vector<uint16_t> idx;
  size_t count() const { return idx.size(); }
  uint16_t first() const { return idx[0]; }
};

// 2-D core, iterated per (batch, channel) plane by the tape op.
// Returns the pooled plane and one ActiveSet per output element (row-major).
void maxpool_forward(const double* x, const PoolGeometry& g, double* y, ActiveSet* active);

// Routes the upstream gradient of one pooled plane back through the recorded
// active sets. gx must be zero-initialized; windows are disjoint so no
// accumulation happens. beta is read only in Hybrid mode. Hybrid(0) and
// Hybrid(1) take the exact Native/Minimal code paths, as do single-element
// active sets under every mode, so those equivalences are bitwise.
void maxpool_backward(const double* gy, const ActiveSet* active, const PoolGeometry& g,
                      PoolMode mode, double beta, Precision prec, double* gx);

// Euclidean-norm pooling: y = sqrt(sum of squares of the window), each
// operation rounded, accumulated in ascending window order.
void normpool_forward(const double* x, const PoolGeometry& g, Precision prec, double* y);

// Backward direction x/||x|| per window scaled by the upstream gradient.
// At exactly-zero norms NormZero emits zeros (the smallest-norm selection)
// and NormUniform the uniform unit direction 1/sqrt(window size).
void normpool_backward(const double* x, const double* y, const double* gy,
                       const PoolGeometry& g, PoolMode mode, Precision prec, double* gx);

// relu'(x) with relu'(0) = s; the returned selection is always one of
// {0, s, 1}.
inline double relu_derivative(double x, double s) {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return 0.0;
  return s;
}

}  // namespace nsad
