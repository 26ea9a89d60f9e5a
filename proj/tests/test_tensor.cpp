// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdint>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace nsad;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Precision prec, uint64_t seed, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape), prec);
  SplitMix64 gen(seed);
  for (double& v : t.data) v = round_to(gen.uniform(lo, hi), prec);
  return t;
}

// Integer-valued tensors make every product and sum exact in binary64, so an
// int64 reimplementation is a bit-for-bit oracle that shares no code with the
// library kernels.
Tensor int_tensor(std::vector<size_t> shape, uint64_t seed, int lo = -9, int hi = 9) {
  Tensor t = Tensor::zeros(std::move(shape), Precision::B64);
  SplitMix64 gen(seed);
  for (double& v : t.data)
    v = static_cast<double>(lo + static_cast<int>(gen.bounded(static_cast<uint64_t>(hi - lo + 1))));
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape bookkeeping and constructors") {
    Tensor t = Tensor::zeros({2, 3}, Precision::B32);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    Tensor f = Tensor::full({2}, 0.1, Precision::B16);
    CHECK(f.data[0] == f16_round(0.1));
    Tensor s = Tensor::scalar(1.4, Precision::B32);
    CHECK(s.data[0] == f32_round(1.4));
    CHECK(Tensor::from({2, 2}, {1, 2, 3, 4}, Precision::B64).data[3] == 4.0);
  }

  TEST_CASE("sequential reduction rounds after every addition") {
    // Four copies of the binary32 neighbor of 0.35, folded left to right in
    // float arithmetic, written out by hand.
    Tensor t = Tensor::full({4}, 0.35, Precision::B32);
    float acc = 0.0f;
    for (int i = 0; i < 4; ++i) acc += 0.35f;
    CHECK(reduce_sum(t, ReductionOrder::sequential()) == static_cast<double>(acc));
    // At binary64 the same fold differs from 4*0.35: rounding is visible.
    Tensor d = Tensor::full({4}, 0.35, Precision::B64);
    double ref = ((0.35 + 0.35) + 0.35) + 0.35;
    CHECK(reduce_sum(d, ReductionOrder::sequential()) == ref);
  }

  TEST_CASE("reduction order changes the rounded result") {
    // 1e8 + 1 collapses at binary32; an order that pairs the small terms
    // first must produce a different sum than ascending order.
    Tensor t = Tensor::from({4}, {1e8, 1.0, -1e8, 1.0}, Precision::B32);
    double seq = reduce_sum(t, ReductionOrder::sequential());
    CHECK(seq == 1.0);  // 1e8 absorbs the first 1.0
    bool differs = false;
    for (uint64_t seed = 0; seed < 64 && !differs; ++seed)
      differs = reduce_sum(t, ReductionOrder::shuffled(seed)) != seq;
    CHECK(differs);
  }

  TEST_CASE("shuffled reduction is deterministic per seed") {
    Tensor t = random_tensor({257}, Precision::B32, 42);
    ReductionOrder o = ReductionOrder::shuffled(7);
    CHECK(reduce_sum(t, o) == reduce_sum(t, o));
    CHECK(reduce_sum(t, ReductionOrder::shuffled(8)) != reduce_sum(t, o));
  }

  TEST_CASE("stream derivation keeps sequential sequential") {
    CHECK(ReductionOrder::sequential().stream(5).is_sequential());
    ReductionOrder s = ReductionOrder::shuffled(9);
    CHECK(!s.stream(0).is_sequential());
    CHECK(s.stream(0).seed != s.stream(1).seed);
    CHECK(s.stream(3).seed == s.stream(3).seed);
  }

  TEST_CASE("cast canonicalizes into the target format") {
    Tensor t = Tensor::from({3}, {0.1, 1.4, 70000.0}, Precision::B64);
    Tensor h = cast(t, Precision::B16);
    for (double v : h.data) CHECK(f16_round(v) == v);
    CHECK(std::isinf(h.data[2]));  // beyond the binary16 range
    Tensor back = cast(h, Precision::B64);
    CHECK(back.data[0] == f16_round(0.1));
  }

  TEST_CASE("elementwise ops round in the working format") {
    Tensor a = Tensor::full({2}, 1.0, Precision::B16);
    Tensor b = Tensor::full({2}, 0x1p-11, Precision::B16);
    CHECK(add(a, b).data[0] == 1.0);  // increment below half an ulp vanishes
    CHECK(sub(a, b).data[0] == 1.0 - 0x1p-11);  // exact: subnormal spacing is finer below 1
    Tensor c = Tensor::full({2}, 3.0, Precision::B16);
    CHECK(mul(b, c).data[0] == f16_round(3 * 0x1p-11));
  }

  TEST_CASE("matmul matches an integer oracle exactly") {
    Tensor a = int_tensor({5, 7}, 1);
    Tensor b = int_tensor({7, 4}, 2);
    Tensor out = matmul(a, b, ReductionOrder::sequential());
    for (size_t i = 0; i < 5; ++i) {
      for (size_t j = 0; j < 4; ++j) {
        int64_t want = 0;
        for (size_t k = 0; k < 7; ++k)
          want += static_cast<int64_t>(a.data[i * 7 + k]) * static_cast<int64_t>(b.data[k * 4 + j]);
        CHECK(out.data[i * 4 + j] == static_cast<double>(want));
      }
    }
  }

  TEST_CASE("conv2d matches an integer oracle exactly") {
    Tensor x = int_tensor({2, 3, 6, 5}, 3);
    Tensor w = int_tensor({4, 3, 3, 2}, 4);
    Tensor bias = int_tensor({4}, 5);
    Tensor out = conv2d(x, w, bias, ReductionOrder::sequential());
    REQUIRE(out.shape == std::vector<size_t>{2, 4, 4, 4});
    for (size_t n = 0; n < 2; ++n)
      for (size_t o = 0; o < 4; ++o)
        for (size_t yy = 0; yy < 4; ++yy)
          for (size_t z = 0; z < 4; ++z) {
            int64_t want = static_cast<int64_t>(bias.data[o]);
            for (size_t c = 0; c < 3; ++c)
              for (size_t u = 0; u < 3; ++u)
                for (size_t v = 0; v < 2; ++v)
                  want += static_cast<int64_t>(x.data[((n * 3 + c) * 6 + yy + u) * 5 + z + v]) *
                          static_cast<int64_t>(w.data[((o * 3 + c) * 3 + u) * 2 + v]);
            CHECK(out.data[((n * 4 + o) * 4 + yy) * 4 + z] == static_cast<double>(want));
          }
  }

  TEST_CASE("conv2d binary32 accumulation order is channel-row-column") {
    // Freeze the rounded fold: terms must be consumed c-major, then kernel
    // row, then kernel column, with the bias added last.
    Tensor x = random_tensor({1, 2, 3, 3}, Precision::B32, 10);
    Tensor w = random_tensor({1, 2, 3, 3}, Precision::B32, 11);
    Tensor bias = random_tensor({1}, Precision::B32, 12);
    Tensor out = conv2d(x, w, bias, ReductionOrder::sequential());
    float acc = 0.0f;
    for (size_t c = 0; c < 2; ++c)
      for (size_t u = 0; u < 3; ++u)
        for (size_t v = 0; v < 3; ++v)
          acc += static_cast<float>(x.data[(c * 3 + u) * 3 + v]) *
                 static_cast<float>(w.data[(c * 3 + u) * 3 + v]);
    acc += static_cast<float>(bias.data[0]);
    CHECK(out.data[0] == static_cast<double>(acc));
  }

  TEST_CASE("matmul binary16 rounds through the half-precision grid") {
    Tensor a = Tensor::full({1, 3}, 0.1, Precision::B16);
    Tensor b = Tensor::full({3, 1}, 3.0, Precision::B16);
    double p = f16_round(f16_round(0.1) * 3.0);
    double want = f16_round(f16_round(f16_round(0.0 + p) + p) + p);
    CHECK(matmul(a, b, ReductionOrder::sequential()).data[0] == want);
  }

  TEST_CASE("shape validation throws internal errors") {
    Tensor a = Tensor::zeros({2, 3}, Precision::B32);
    Tensor b = Tensor::zeros({2, 3}, Precision::B32);
    CHECK_THROWS_AS(matmul(a, b, ReductionOrder::sequential()), Error);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2}, Precision::B32)), Error);
    CHECK_THROWS_AS(add(a, Tensor::zeros({2, 3}, Precision::B64)), Error);
    CHECK_THROWS_AS(reduce_sum(Tensor{}, ReductionOrder::sequential()), Error);
  }

  TEST_CASE("permutations are unbiased fixed-length rearrangements") {
    std::vector<uint32_t> p;
    fill_permutation(p, 10, 123);
    std::vector<bool> seen(10, false);
    for (uint32_t v : p) {
      REQUIRE(v < 10);
      CHECK(!seen[v]);
      seen[v] = true;
    }
    std::vector<uint32_t> q;
    fill_permutation(q, 10, 123);
    CHECK(p == q);
    fill_permutation(q, 10, 124);
    CHECK(p != q);
  }
}
