// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "network.hpp"

namespace nsad {

// Two differentiations of one shared forward pass. The forward tape is built
// once per (draw, batch) under a Sequential order; only the backward policy
// and backward reduction order differ between P and Q.
struct ProgramPair {
  NetworkSpec spec;
  NonsmoothPolicy policy_p = NonsmoothPolicy::native();
  NonsmoothPolicy policy_q = NonsmoothPolicy::native();
  ReductionOrder order_p = ReductionOrder::sequential();
  ReductionOrder order_q = ReductionOrder::sequential();
};

struct VariationRecord {
  size_t m = 0;  // parameter draw index
  size_t q = 0;  // mini-batch index
  double d = 0;  // L1 distance between the two gradients (double accumulation)
  double scale = 0;  // L1 norm of the P gradient, same accumulation
  bool nonfinite = false;
};

struct VariationStats {
  size_t nonfinite_records = 0;
};

// Gradient of the summed mini-batch loss under both programs for every
// (draw, batch). Shuffled base orders are re-streamed per (m, q) so each
// record sees an independent permutation.
std::vector<VariationRecord> measure_variation(const ProgramPair& pair, size_t draws,
                                               const Tensor& images,
                                               const std::vector<int>& labels,
                                               size_t batch_size, uint64_t seed,
                                               VariationStats* stats = nullptr,
                                               size_t threads = 1);

struct ThresholdEstimate {
  double tau1 = 0;
  double tau2 = 0;
  bool tau2_sentinel = false;  // set when no strictly positive record exists
  std::string network;
  Precision prec = Precision::B64;
  size_t draws = 0, batch = 0, records = 0;
};

// Max same-policy variation under emulated reduction-order nondeterminism
// (two independently shuffled backward orders per record). emulate=false
// runs both backwards under Sequential and therefore returns 0.
ThresholdEstimate estimate_tau1(const NetworkSpec& spec, const NonsmoothPolicy& policy,
                                size_t draws, const Tensor& images,
                                const std::vector<int>& labels, size_t batch_size,
                                uint64_t seed, size_t repeats = 1, bool emulate = true,
                                size_t threads = 1);

// Min strictly positive variation between relu'(0)=0 and relu'(0)=1 under a
// deterministic Sequential order; sentinel when every record is zero.
ThresholdEstimate estimate_tau2(const NetworkSpec& spec, size_t draws, const Tensor& images,
                                const std::vector<int>& labels, size_t batch_size,
                                uint64_t seed, size_t threads = 1);

struct ZoneClassification {
  std::vector<uint8_t> draw_in_s;        // indexed by draw m
  std::vector<uint8_t> record_impacted;  // parallel to the record list
  size_t draws = 0, draws_in_s = 0, impacted_records = 0, finite_records = 0;
};

// Draw m is in the bifurcation zone iff any of its batches exceeds tau.
ZoneClassification classify_zone(const std::vector<VariationRecord>& records, double tau);

void write_variation_csv(std::ostream& out, const std::vector<VariationRecord>& records,
                         const ProgramPair& pair, uint64_t seed);

struct HistogramBin {
  int log10_lo = 0;  // bin covers [10^log10_lo, 10^(log10_lo+1))
  size_t count = 0;
};

struct VariationHistogram {
  std::vector<HistogramBin> bins;  // ascending, positive records only
  size_t zeros = 0;
  size_t nonfinite = 0;
};

VariationHistogram histogram_log10(const std::vector<VariationRecord>& records);

}  // namespace nsad
