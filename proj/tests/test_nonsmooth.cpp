// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "nonsmooth.hpp"
#include "rng.hpp"

using namespace nsad;

namespace {

// Agreement to `ulps` units in the last place of `scale`; the affine blend
// cancels near beta = |A|/(|A|-1), so the output magnitude is not a usable
// yardstick and the caller passes the largest blended term instead.
bool ulp_close(double a, double b, double ulps, double scale) {
  if (a == b) return true;
  return std::fabs(a - b) <= ulps * 0x1p-52 * scale;
}

struct PoolCase {
  PoolGeometry g;
  std::vector<double> x, y;
  std::vector<ActiveSet> active;

  explicit PoolCase(std::vector<double> input, size_t h, size_t w, size_t win = 2) : x(std::move(input)) {
    g.in_h = h;
    g.in_w = w;
    g.win_h = g.win_w = win;
    y.resize(g.out_h() * g.out_w());
    active.resize(y.size());
    maxpool_forward(x.data(), g, y.data(), active.data());
  }

  std::vector<double> backward(PoolMode mode, double beta, Precision prec = Precision::B64) {
    std::vector<double> gy(y.size(), 1.0);
    std::vector<double> gx(x.size(), 0.0);
    maxpool_backward(gy.data(), active.data(), g, mode, beta, prec, gx.data());
    return gx;
  }
};

}  // namespace

TEST_SUITE("nonsmooth") {
  TEST_CASE("policy names and validation") {
    CHECK(NonsmoothPolicy::minimal().name() == "minimal");
    CHECK(NonsmoothPolicy::hybrid(2.5).name() == "hybrid:2.5");
    CHECK(NonsmoothPolicy::native(1.0).name() == "native/relu0=1");
    CHECK_THROWS_AS(NonsmoothPolicy::native(1.5).validate(), Error);
    CHECK_THROWS_AS(NonsmoothPolicy::hybrid(-0.25).validate(), Error);
    NonsmoothPolicy ok = NonsmoothPolicy::hybrid(1e4);
    ok.validate();
  }

  TEST_CASE("forward records every attaining index in window order") {
    PoolCase p({2, 2,  //
                1, 2}, 2, 2);
    CHECK(p.y[0] == 2.0);
    REQUIRE(p.active[0].count() == 3);
    CHECK(p.active[0].idx == std::vector<uint16_t>{0, 1, 3});
    CHECK(p.active[0].first() == 0);
  }

  TEST_CASE("membership is exact equality, not closeness") {
    double near = 2.0 - 0x1p-52;
    PoolCase p({2.0, near, near, near}, 2, 2);
    CHECK(p.active[0].count() == 1);
  }

  TEST_CASE("trailing rows and columns that do not fill a window are dropped") {
    // 5x5 plane, 2x2 windows: the fifth row and column never pool.
    std::vector<double> x(25, 0.0);
    x[4] = 100.0;        // column 4: dropped
    x[20] = 100.0;       // row 4: dropped
    x[0] = 1.0;
    PoolCase p(x, 5, 5);
    REQUIRE(p.y.size() == 4);
    CHECK(p.y[0] == 1.0);
    CHECK(p.y[1] == 0.0);  // the 100 at column 4 is outside every window
    auto gx = p.backward(PoolMode::Native, 0.0);
    CHECK(gx[4] == 0.0);
    CHECK(gx[20] == 0.0);
    CHECK(gx[0] == 1.0);
  }

  TEST_CASE("native routes everything to the first attaining index") {
    PoolCase p({1, 3,  //
                3, 0}, 2, 2);
    auto gx = p.backward(PoolMode::Native, 0.0);
    CHECK(gx == std::vector<double>{0, 1, 0, 0});
  }

  TEST_CASE("minimal spreads the gradient over the active set") {
    PoolCase p({1, 3,  //
                3, 0}, 2, 2);
    auto gx = p.backward(PoolMode::Minimal, 0.0);
    CHECK(gx == std::vector<double>{0, 0.5, 0.5, 0});
  }

  TEST_CASE("hybrid blend at beta=2 with a fully tied window") {
    PoolCase p({7, 7,  //
                7, 7}, 2, 2);
    REQUIRE(p.active[0].count() == 4);
    auto gx = p.backward(PoolMode::Hybrid, 2.0);
    CHECK(gx == std::vector<double>{-0.5, 0.5, 0.5, 0.5});
  }

  TEST_CASE("hybrid endpoints take the exact native and minimal paths") {
    SplitMix64 gen(99);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> x(16);
      for (double& v : x) v = std::floor(gen.uniform(0.0, 4.0));  // many ties
      PoolCase p(x, 4, 4);
      CHECK(p.backward(PoolMode::Hybrid, 0.0) == p.backward(PoolMode::Native, 0.0));
      CHECK(p.backward(PoolMode::Hybrid, 1.0) == p.backward(PoolMode::Minimal, 0.0));
    }
  }

  TEST_CASE("singleton active sets route natively under every mode") {
    PoolCase p({4, 3,  //
                2, 1}, 2, 2);
    REQUIRE(p.active[0].count() == 1);
    for (double beta : {0.0, 0.5, 7.0})
      CHECK(p.backward(PoolMode::Hybrid, beta) == std::vector<double>{1, 0, 0, 0});
    CHECK(p.backward(PoolMode::Minimal, 0.0) == std::vector<double>{1, 0, 0, 0});
  }

  TEST_CASE("hybrid is affine in beta and conserves window mass") {
    SplitMix64 gen(7);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> x(4);
      double tied = gen.uniform(-1.0, 1.0);
      size_t nt = 2 + gen.bounded(3);
      for (size_t i = 0; i < 4; ++i) x[i] = i < nt ? tied : tied - gen.uniform(0.1, 1.0);
      double beta = gen.uniform(0.0, 4.0);
      PoolCase p(x, 2, 2);
      REQUIRE(p.active[0].count() == nt);
      auto nat = p.backward(PoolMode::Native, 0.0);
      auto min = p.backward(PoolMode::Minimal, 0.0);
      auto hyb = p.backward(PoolMode::Hybrid, beta);
      double mass = 0;
      for (size_t i = 0; i < 4; ++i) {
        double scale = std::max({std::fabs((1 - beta) * nat[i]), std::fabs(beta * min[i]), 1.0});
        CHECK(ulp_close(hyb[i], (1 - beta) * nat[i] + beta * min[i], 2.0, scale));
        mass += hyb[i];
      }
      CHECK(ulp_close(mass, 1.0, 2.0, std::max(beta, 1.0)));
    }
  }

  TEST_CASE("minimal is the least-norm selection over the routing hull") {
    // Candidate selections form the convex hull of one-hot routings over the
    // active set; the centroid minimizes the Euclidean norm. Random hull
    // samples must never beat the minimal selection.
    SplitMix64 gen(13);
    for (size_t nt = 2; nt <= 4; ++nt) {
      std::vector<double> x(4, 5.0);
      for (size_t i = nt; i < 4; ++i) x[i] = 1.0;
      PoolCase p(x, 2, 2);
      REQUIRE(p.active[0].count() == nt);
      auto min = p.backward(PoolMode::Minimal, 0.0);
      double min_norm2 = 0;
      for (double v : min) min_norm2 += v * v;
      for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> lam(nt);
        double tot = 0;
        for (double& l : lam) tot += (l = -std::log(gen.unit()));
        double norm2 = 0;
        for (size_t i = 0; i < nt; ++i) norm2 += (lam[i] / tot) * (lam[i] / tot);
        CHECK(min_norm2 <= norm2 + 1e-12);
      }
      CHECK(min_norm2 == doctest::Approx(1.0 / static_cast<double>(nt)).epsilon(1e-12));
    }
  }

  TEST_CASE("norm pooling forward folds squares in window order") {
    std::vector<double> x = {f32_round(0.1), f32_round(0.2), f32_round(0.3), f32_round(0.4)};
    PoolGeometry g;
    g.in_h = g.in_w = 2;
    double y = 0;
    normpool_forward(x.data(), g, Precision::B32, &y);
    float acc = 0.0f;
    for (double v : x) acc += static_cast<float>(v) * static_cast<float>(v);
    // Rounded sqrt of the window-order rounded sum of squares, nothing else.
    CHECK(y == fp_sqrt(static_cast<double>(acc), Precision::B32));
  }

  TEST_CASE("norm pooling backward follows the unit direction") {
    std::vector<double> x = {3.0, 4.0, 0.0, 0.0};
    PoolGeometry g;
    g.in_h = g.in_w = 2;
    double y = 0;
    normpool_forward(x.data(), g, Precision::B64, &y);
    CHECK(y == 5.0);
    double gy = 2.0;
    std::vector<double> gx(4, 0.0);
    normpool_backward(x.data(), &y, &gy, g, PoolMode::NormZero, Precision::B64, gx.data());
    CHECK(gx[0] == 2.0 * (3.0 / 5.0));
    CHECK(gx[1] == 2.0 * (4.0 / 5.0));
    CHECK(gx[2] == 0.0);
  }

  TEST_CASE("the two completions at an exactly zero window") {
    std::vector<double> x(4, 0.0);
    PoolGeometry g;
    g.in_h = g.in_w = 2;
    double y = 0;
    normpool_forward(x.data(), g, Precision::B32, &y);
    REQUIRE(y == 0.0);
    double gy = 3.0;
    std::vector<double> gz(4, 0.0), gu(4, 0.0);
    normpool_backward(x.data(), &y, &gy, g, PoolMode::NormZero, Precision::B32, gz.data());
    normpool_backward(x.data(), &y, &gy, g, PoolMode::NormUniform, Precision::B32, gu.data());
    CHECK(gz == std::vector<double>{0, 0, 0, 0});
    double unit = fp_div(1.0, fp_sqrt(4.0, Precision::B32), Precision::B32);
    double want = fp_mul(3.0, unit, Precision::B32);
    CHECK(gu == std::vector<double>{want, want, want, want});
    CHECK(want == 1.5);  // 1/sqrt(4) is exact, so the halves are too
  }

  TEST_CASE("mode mismatches are configuration errors") {
    PoolGeometry g;
    g.in_h = g.in_w = 2;
    std::vector<double> x(4, 1.0), y(1, 1.0), gy(1, 1.0), gx(4, 0.0);
    ActiveSet a;
    a.idx = {0};
    CHECK_THROWS_AS(
        maxpool_backward(gy.data(), &a, g, PoolMode::NormZero, 0.0, Precision::B64, gx.data()),
        Error);
    CHECK_THROWS_AS(normpool_backward(x.data(), y.data(), gy.data(), g, PoolMode::Native,
                                      Precision::B64, gx.data()),
                    Error);
    PoolGeometry bad;
    bad.in_h = 1;
    bad.in_w = 4;
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("relu derivative selections") {
    CHECK(relu_derivative(2.0, 0.0) == 1.0);
    CHECK(relu_derivative(-2.0, 1.0) == 0.0);
    CHECK(relu_derivative(0.0, 0.0) == 0.0);
    CHECK(relu_derivative(0.0, 1.0) == 1.0);
    CHECK(relu_derivative(0.0, 0.5) == 0.5);
  }
}
