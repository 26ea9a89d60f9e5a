// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "variation.hpp"

namespace nsad {

double hoeffding_margin(double alpha, size_t n);
double mcdiarmid_margin(double alpha, size_t m, size_t r);

struct VolumeEstimate {
  double prop_theta_in_s = 0;       // fraction of draws with any batch over tau
  double prop_batches_impacted = 0; // fraction of (draw, batch) records over tau
  double hoeffding = 0;
  double mcdiarmid = 0;
  double alpha = 0.05;
  double tau = 0;
  size_t draws = 0, batches = 0;
  size_t nonfinite_records = 0;
};

VolumeEstimate estimate_volume(const ProgramPair& pair, double tau, size_t draws,
                               const Tensor& images, const std::vector<int>& labels,
                               size_t batch_size, uint64_t seed, double alpha = 0.05,
                               std::vector<VariationRecord>* records_out = nullptr,
                               size_t threads = 1);

enum class SweepDimension { BatchSize, Depth, BatchNorm };
const char* sweep_dimension_name(SweepDimension d);
SweepDimension sweep_dimension_from_name(const std::string& name);

struct SweepBase {
  std::string network = "lenet";
  Precision prec = Precision::B32;
  NonsmoothPolicy policy_p = NonsmoothPolicy::native();
  NonsmoothPolicy policy_q = NonsmoothPolicy::minimal();
  double tau = 0;
  size_t draws = 50;
  size_t batch = 128;
  uint64_t seed = 1;
  double alpha = 0.05;
  size_t threads = 1;
};

struct SweepCell {
  double value = 0;
  VolumeEstimate estimate;
};

// One estimate per value with everything else held fixed (shared base seed).
// BatchSize varies the mini-batch size; Depth selects mini1..mini3; BatchNorm
// toggles the -bn network variant for values 0/1.
std::vector<SweepCell> sweep(SweepDimension dim, const std::vector<double>& values,
                             const SweepBase& base, const Tensor& images,
                             const std::vector<int>& labels);

}  // namespace nsad
