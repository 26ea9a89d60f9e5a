// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "data_io.hpp"
#include "error.hpp"
#include "montecarlo.hpp"

using namespace nsad;

namespace {

bool rel_close(double a, double b, double tol) {
  return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1.0});
}

}  // namespace

TEST_SUITE("montecarlo") {
  TEST_CASE("concentration margins match their closed forms") {
    // sqrt(ln(2/alpha) / 2n) and sqrt((1/M + 1/R) ln(2/alpha) / 2).
    CHECK(rel_close(hoeffding_margin(0.05, 1000), std::sqrt(std::log(40.0) / 2000.0), 1e-12));
    CHECK(rel_close(hoeffding_margin(0.01, 500), std::sqrt(std::log(200.0) / 1000.0), 1e-12));
    CHECK(rel_close(mcdiarmid_margin(0.05, 1000, 16),
                    std::sqrt(0.5 * (1.0 / 1000 + 1.0 / 16) * std::log(40.0)), 1e-12));
    CHECK(rel_close(mcdiarmid_margin(0.1, 50, 4),
                    std::sqrt(0.5 * (1.0 / 50 + 1.0 / 4) * std::log(20.0)), 1e-12));
    // The family is monotone: more samples, tighter margin.
    CHECK(hoeffding_margin(0.05, 2000) < hoeffding_margin(0.05, 1000));
    CHECK(mcdiarmid_margin(0.05, 1000, 32) < mcdiarmid_margin(0.05, 1000, 16));

    CHECK_THROWS_AS(hoeffding_margin(0.0, 10), Error);
    CHECK_THROWS_AS(hoeffding_margin(1.0, 10), Error);
    CHECK_THROWS_AS(hoeffding_margin(0.05, 0), Error);
    CHECK_THROWS_AS(mcdiarmid_margin(0.05, 0, 4), Error);
    CHECK_THROWS_AS(mcdiarmid_margin(-0.1, 10, 4), Error);
  }

  TEST_CASE("volume estimates refold from their own records") {
    ProgramPair pair;
    pair.spec = NetworkSpec::from_name("mini1", Precision::B32);
    pair.policy_p = NonsmoothPolicy::native();
    pair.policy_q = NonsmoothPolicy::minimal();
    Dataset ds = synth_digits(6, 3, Precision::B32);

    std::vector<VariationRecord> records;
    VolumeEstimate est = estimate_volume(pair, 0.0, 3, ds.images, ds.labels, 2, 5, 0.05, &records);
    REQUIRE(records.size() == 9);
    CHECK(est.draws == 3);
    CHECK(est.batches == 3);
    CHECK(est.tau == 0.0);
    CHECK(est.alpha == 0.05);
    CHECK(est.nonfinite_records == 0);
    CHECK(est.hoeffding == hoeffding_margin(0.05, 3));
    CHECK(est.mcdiarmid == mcdiarmid_margin(0.05, 3, 3));

    auto refold = [&](const VolumeEstimate& e, double tau) {
      ZoneClassification zone = classify_zone(records, tau);
      CHECK(e.prop_theta_in_s ==
            static_cast<double>(zone.draws_in_s) / static_cast<double>(e.draws));
      CHECK(e.prop_batches_impacted ==
            static_cast<double>(zone.impacted_records) /
                static_cast<double>(zone.finite_records));
    };
    refold(est, 0.0);

    // Same pair and seed at a threshold splitting the observed distances:
    // the records must reproduce bitwise and the proportions must refold.
    std::vector<double> ds_sorted;
    double d_max = 0;
    for (const VariationRecord& r : records) {
      ds_sorted.push_back(r.d);
      d_max = std::max(d_max, r.d);
    }
    std::sort(ds_sorted.begin(), ds_sorted.end());
    double tau_mid = ds_sorted[ds_sorted.size() / 2];

    std::vector<VariationRecord> again;
    VolumeEstimate mid =
        estimate_volume(pair, tau_mid, 3, ds.images, ds.labels, 2, 5, 0.05, &again);
    REQUIRE(again.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) CHECK(again[i].d == records[i].d);
    refold(mid, tau_mid);
    // A draw lands in the zone when any of its batches is impacted.
    CHECK(mid.prop_theta_in_s >= mid.prop_batches_impacted);

    // Nothing exceeds the largest observed distance.
    VolumeEstimate top = estimate_volume(pair, d_max, 3, ds.images, ds.labels, 2, 5);
    CHECK(top.prop_theta_in_s == 0.0);
    CHECK(top.prop_batches_impacted == 0.0);

    // Identical programs on both sides never separate.
    ProgramPair same;
    same.spec = pair.spec;
    VolumeEstimate zero = estimate_volume(same, 0.0, 2, ds.images, ds.labels, 3, 7);
    CHECK(zero.prop_theta_in_s == 0.0);
    CHECK(zero.prop_batches_impacted == 0.0);
  }

  TEST_CASE("estimates are seed-deterministic") {
    ProgramPair pair;
    pair.spec = NetworkSpec::from_name("mini1", Precision::B32);
    pair.policy_p = NonsmoothPolicy::native();
    pair.policy_q = NonsmoothPolicy::minimal();
    Dataset ds = synth_digits(6, 3, Precision::B32);

    std::vector<VariationRecord> r1, r2;
    VolumeEstimate a = estimate_volume(pair, 1e-8, 2, ds.images, ds.labels, 3, 9, 0.05, &r1);
    VolumeEstimate b = estimate_volume(pair, 1e-8, 2, ds.images, ds.labels, 3, 9, 0.05, &r2);
    CHECK(a.prop_theta_in_s == b.prop_theta_in_s);
    CHECK(a.prop_batches_impacted == b.prop_batches_impacted);
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) {
      CHECK(r1[i].d == r2[i].d);
      CHECK(r1[i].scale == r2[i].scale);
    }
  }

  TEST_CASE("sweep dimension names round-trip") {
    for (SweepDimension d :
         {SweepDimension::BatchSize, SweepDimension::Depth, SweepDimension::BatchNorm})
      CHECK(sweep_dimension_from_name(sweep_dimension_name(d)) == d);
    CHECK_THROWS_AS(sweep_dimension_from_name("width"), Error);
  }

  TEST_CASE("sweeps substitute one dimension and keep the rest of the base") {
    Dataset ds = synth_digits(8, 13, Precision::B32);
    SweepBase base;
    base.network = "mini1";
    base.prec = Precision::B32;
    base.policy_p = NonsmoothPolicy::native();
    base.policy_q = NonsmoothPolicy::minimal();
    base.tau = 1e-8;
    base.draws = 2;
    base.batch = 4;
    base.seed = 3;

    auto cells = sweep(SweepDimension::BatchSize, {2, 4}, base, ds.images, ds.labels);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].value == 2);
    CHECK(cells[0].estimate.batches == 4);  // 8 images / batch 2
    CHECK(cells[1].value == 4);
    CHECK(cells[1].estimate.batches == 2);
    CHECK(cells[0].estimate.draws == 2);

    auto depth = sweep(SweepDimension::Depth, {1, 2}, base, ds.images, ds.labels);
    REQUIRE(depth.size() == 2);
    CHECK(depth[0].estimate.batches == 2);  // base batch, not the swept one

    auto bn = sweep(SweepDimension::BatchNorm, {0, 1}, base, ds.images, ds.labels);
    REQUIRE(bn.size() == 2);

    // Repeating the base cell reproduces the same proportions.
    auto again = sweep(SweepDimension::BatchSize, {2, 4}, base, ds.images, ds.labels);
    for (size_t i = 0; i < cells.size(); ++i) {
      CHECK(again[i].estimate.prop_theta_in_s == cells[i].estimate.prop_theta_in_s);
      CHECK(again[i].estimate.prop_batches_impacted ==
            cells[i].estimate.prop_batches_impacted);
    }

    CHECK_THROWS_AS(sweep(SweepDimension::Depth, {4}, base, ds.images, ds.labels), Error);
    CHECK_THROWS_AS(sweep(SweepDimension::BatchSize, {}, base, ds.images, ds.labels), Error);
    CHECK_THROWS_AS(sweep(SweepDimension::BatchSize, {0}, base, ds.images, ds.labels), Error);
  }
}
