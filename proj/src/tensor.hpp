// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "precision.hpp"

namespace nsad {

// Dense row-major tensor of canonical values in one working format.
// Immutable by convention once an operation has produced it; operations are
// pure functions of their inputs plus a ReductionOrder.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;
  Precision prec = Precision::B64;

  Tensor() = default;

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t dim(size_t i) const { return shape[i]; }

  static size_t numel(const std::vector<size_t>& shape);
  static Tensor zeros(std::vector<size_t> shape, Precision p);
  static Tensor full(std::vector<size_t> shape, double value, Precision p);
  static Tensor scalar(double value, Precision p);
  // Rounds every element into the target format.
  static Tensor from(std::vector<size_t> shape, std::vector<double> values, Precision p);

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

// Accumulation order for every reduction (sums, inner products, gradient
// fan-in). Sequential is the canonical deterministic order: ascending flat
// index. Shuffled applies a seed-derived permutation; the same seed always
// produces the same permutation.
struct ReductionOrder {
  enum class Mode : uint8_t { Sequential, Shuffled };
  Mode mode = Mode::Sequential;
  uint64_t seed = 0;

  static ReductionOrder sequential() { return {}; }
  static ReductionOrder shuffled(uint64_t seed) { return {Mode::Shuffled, seed}; }

  bool is_sequential() const { return mode == Mode::Sequential; }

  // Independent order for a tagged reduction stream inside a kernel. Each
  // output element of each operation gets its own permutation so two tagged
  // streams never share one.
  ReductionOrder stream(uint64_t tag) const;
};

// Sum of all elements, accumulated one rounded addition at a time in the
// given order. Errors on empty input.
double reduce_sum(const Tensor& t, const ReductionOrder& order);

Tensor cast(const Tensor& t, Precision to);

// Elementwise; operands must agree in shape and precision.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// A[m,k] x B[k,n] -> [m,n]; every inner product accumulates per `order`.
Tensor matmul(const Tensor& a, const Tensor& b, const ReductionOrder& order);

// Valid-padding stride-1 correlation. x is (N,C,H,W), w is (O,C,kh,kw),
// bias is (O) or empty; result (N,O,H-kh+1,W-kw+1). The 2-D overload wraps
// a (H,W) image and (kh,kw) kernel.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              const ReductionOrder& order);
Tensor conv2d(const Tensor& x, const Tensor& w, const ReductionOrder& order);

}  // namespace nsad
