// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data_io.hpp"
#include "network.hpp"

namespace nsad {

enum class Optimizer { SGD, Adam };
const char* optimizer_name(Optimizer o);
Optimizer optimizer_from_name(const std::string& name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::SGD;
  double gamma = 0.01;   // step size
  double alpha_q = 1.0;  // per-batch learning rate factor (constant)
  size_t batch = 32;
  size_t epochs = 10;
  NonsmoothPolicy policy = NonsmoothPolicy::native();
  uint64_t seed = 1;
  // B16 models keep optimizer scratch at B32 unless strict_b16 is set; pure
  // B16 Adam state underflows and is only wanted when reproducing that.
  bool strict_b16 = false;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  size_t eval_batch = 256;
  bool keep_snapshots = false;  // store per-epoch trainable tensors in the trace
  void validate() const;
};

struct EpochStats {
  size_t epoch = 0;
  double train_loss = 0;     // mean per-example loss over the epoch
  double test_accuracy = 0;
  double grad_l1 = 0;        // L1 of the first batch gradient this epoch
  double param_l1 = 0;
  bool diverged = false;     // latched: loss exceeded 1000x the initial loss
  bool nonfinite = false;    // latched: non-finite value encountered
};

struct TrainTrace {
  std::vector<EpochStats> epochs;
  std::vector<std::vector<Tensor>> snapshots;  // per epoch, when requested
  double initial_loss = 0;  // mean per-example loss of the very first batch
  double final_accuracy = 0;
  bool diverged = false;
  bool nonfinite = false;
  bool halted = false;  // stopped early on non-finite values
};

// The per-step update: theta -= round(gamma*alpha_q/|B|) * grad, applied
// element-wise in the parameter precision over the summed-loss gradient.
void sgd_apply(Tensor& param, const Tensor& grad, double gamma, double alpha_q,
               size_t batch_size, Precision prec);

struct AdamState {
  std::vector<Tensor> m, v;
  size_t t = 0;
  Precision prec = Precision::B32;  // state precision (see strict_b16)
};

AdamState adam_init(const ParameterSet& params, Precision model_prec, bool strict_b16);
void adam_apply(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state,
                const TrainConfig& cfg, Precision model_prec);

TrainTrace train(const NetworkSpec& spec, ParameterSet& params, const Dataset& train_data,
                 const Dataset& test_data, const TrainConfig& cfg);

// Trains one run per beta from a shared initialization and reports per-epoch
// L1 distances against the beta = 0 baseline. Pair 0 is the "0 vs 0" rerun.
struct DivergenceResult {
  std::vector<double> betas;                      // compared value per pair
  std::vector<std::vector<double>> l1_per_epoch;  // [pair][epoch]
  std::vector<TrainTrace> traces;                 // baseline first, then pairs
};

DivergenceResult weight_divergence(const NetworkSpec& spec, const TrainConfig& base,
                                   const std::vector<double>& betas, const Dataset& train_data,
                                   const Dataset& test_data);

struct BetaSweepCell {
  Precision prec = Precision::B32;
  bool batchnorm = false;
  double beta = 0;
  TrainTrace trace;
};

std::vector<BetaSweepCell> beta_sweep(const std::string& network,
                                      const std::vector<Precision>& precisions,
                                      const std::vector<double>& betas,
                                      const std::vector<bool>& batchnorm, const TrainConfig& base,
                                      const Dataset& train_data, const Dataset& test_data);

}  // namespace nsad
