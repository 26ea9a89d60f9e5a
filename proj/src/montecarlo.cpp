// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "montecarlo.hpp"

#include <cmath>

#include "error.hpp"

namespace nsad {

double hoeffding_margin(double alpha, size_t n) {
  NSAD_CHECK(alpha > 0 && alpha < 1, ErrorKind::Config, "alpha must lie in (0,1)");
  NSAD_CHECK(n >= 1, ErrorKind::Config, "sample count must be >= 1");
  return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(n)));
}

double mcdiarmid_margin(double alpha, size_t m, size_t r) {
  NSAD_CHECK(alpha > 0 && alpha < 1, ErrorKind::Config, "alpha must lie in (0,1)");
  NSAD_CHECK(m >= 1 && r >= 1, ErrorKind::Config, "M and R must be >= 1");
  double inv = 1.0 / static_cast<double>(m) + 1.0 / static_cast<double>(r);
  return std::sqrt(0.5 * inv * std::log(2.0 / alpha));
}

VolumeEstimate estimate_volume(const ProgramPair& pair, double tau, size_t draws,
                               const Tensor& images, const std::vector<int>& labels,
                               size_t batch_size, uint64_t seed, double alpha,
                               std::vector<VariationRecord>* records_out, size_t threads) {
  VariationStats stats;
  std::vector<VariationRecord> records =
      measure_variation(pair, draws, images, labels, batch_size, seed, &stats, threads);
  ZoneClassification zone = classify_zone(records, tau);

  VolumeEstimate est;
  est.tau = tau;
  est.alpha = alpha;
  est.draws = draws;
  est.batches = labels.size() / batch_size;
  est.nonfinite_records = stats.nonfinite_records;
  est.prop_theta_in_s = static_cast<double>(zone.draws_in_s) / static_cast<double>(draws);
  est.prop_batches_impacted =
      zone.finite_records == 0
          ? 0.0
          : static_cast<double>(zone.impacted_records) / static_cast<double>(zone.finite_records);
  est.hoeffding = hoeffding_margin(alpha, draws);
  est.mcdiarmid = mcdiarmid_margin(alpha, draws, est.batches);
  if (records_out) *records_out = std::move(records);
  return est;
}

const char* sweep_dimension_name(SweepDimension d) {
  switch (d) {
    case SweepDimension::BatchSize: return "batch-size";
    case SweepDimension::Depth: return "depth";
    case SweepDimension::BatchNorm: return "batchnorm";
  }
  return "?";
}

SweepDimension sweep_dimension_from_name(const std::string& name) {
  if (name == "batch-size") return SweepDimension::BatchSize;
  if (name == "depth") return SweepDimension::Depth;
  if (name == "batchnorm") return SweepDimension::BatchNorm;
  throw Error(ErrorKind::Config, "unknown sweep dimension '" + name +
                                     "' (expected batch-size, depth, or batchnorm)");
}

namespace {

std::string strip_bn(const std::string& name, bool* had_bn) {
  const std::string suffix = "-bn";
  if (name.size() >= suffix.size() &&
      name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    if (had_bn) *had_bn = true;
    return name.substr(0, name.size() - suffix.size());
  }
  if (had_bn) *had_bn = false;
  return name;
}

}  // namespace

std::vector<SweepCell> sweep(SweepDimension dim, const std::vector<double>& values,
                             const SweepBase& base, const Tensor& images,
                             const std::vector<int>& labels) {
  NSAD_CHECK(!values.empty(), ErrorKind::Config, "sweep needs at least one value");
  std::vector<SweepCell> cells;
  cells.reserve(values.size());
  for (double v : values) {
    SweepCell cell;
    cell.value = v;
    std::string network = base.network;
    size_t batch = base.batch;
    switch (dim) {
      case SweepDimension::BatchSize:
        batch = static_cast<size_t>(v);
        NSAD_CHECK(batch >= 1, ErrorKind::Config, "batch-size sweep value must be >= 1");
        break;
      case SweepDimension::Depth: {
        int depth = static_cast<int>(v);
        NSAD_CHECK(depth >= 1 && depth <= 3, ErrorKind::Config,
                   "depth sweep values must lie in 1..3");
        bool bn = false;
        strip_bn(base.network, &bn);
        network = "mini" + std::to_string(depth) + (bn ? "-bn" : "");
        break;
      }
      case SweepDimension::BatchNorm: {
        bool on = v != 0.0;
        network = strip_bn(base.network, nullptr) + (on ? "-bn" : "");
        break;
      }
    }
    ProgramPair pair;
    pair.spec = NetworkSpec::from_name(network, base.prec);
    pair.policy_p = base.policy_p;
    pair.policy_q = base.policy_q;
    cell.estimate = estimate_volume(pair, base.tau, base.draws, images, labels, batch,
                                    base.seed, base.alpha, nullptr, base.threads);
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace nsad
