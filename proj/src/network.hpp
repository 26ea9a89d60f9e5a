// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tape.hpp"

namespace nsad {

enum class LayerKind : uint8_t { Conv, Pool, Relu, BatchNorm, Flatten, Linear };
enum class PoolKind : uint8_t { Max, Norm };

struct LayerDesc {
  LayerKind kind{};
  size_t out = 0;     // conv out-channels / linear out-features
  size_t kernel = 0;  // conv kernel edge (square)
  size_t win = 2;     // pool window edge (square, stride = window)
};

struct NetworkSpec {
  std::string name = "custom";
  std::vector<LayerDesc> layers;
  size_t in_channels = 1, in_h = 28, in_w = 28;
  size_t classes = 10;
  Precision prec = Precision::B64;
  PoolKind pool_kind = PoolKind::Max;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  bool has_batchnorm() const;
  void validate() const;  // shape-chains the layers, throws on mismatch

  static NetworkSpec lenet(Precision prec, bool batchnorm, PoolKind pool = PoolKind::Max);
  // Truncated family: depth conv/pool/relu blocks (kernels 5,5,3; channels
  // 6,16,32) followed by a single classifier layer.
  static NetworkSpec mini(Precision prec, int depth, bool batchnorm,
                          PoolKind pool = PoolKind::Max);
  static NetworkSpec mlp(Precision prec, const std::vector<size_t>& hidden);
  // Names: lenet, lenet-bn, mini1..mini3, mini1-bn.., mlp; suffix "-norm"
  // switches pooling layers to norm pooling.
  static NetworkSpec from_name(const std::string& name, Precision prec);
};

struct ParamTensor {
  std::string name;
  Tensor t;
  bool trainable = true;
};

struct ParameterSet {
  std::vector<ParamTensor> params;   // tape leaves, stable order
  std::vector<ParamTensor> buffers;  // batchnorm running statistics
  size_t total_size() const;
  double l1_norm() const;  // plain double accumulation; analysis-side metric
  Tensor* find(const std::string& name);
};

ParameterSet init_kaiming_uniform(const NetworkSpec& spec, uint64_t seed);

struct ForwardBuild {
  Tape tape;
  int loss = -1;
  int input = -1;
  std::vector<int> param_ids;  // parallel to ParameterSet::params
  explicit ForwardBuild(Precision p) : tape(p) {}
};

// Builds the full tape for one batch. train_mode drives batchnorm statistics
// (and updates the running buffers inside params when true).
ForwardBuild forward_loss(const NetworkSpec& spec, ParameterSet& params, const Tensor& images,
                          const std::vector<int>& labels, const ReductionOrder& fwd_order,
                          bool mean_reduction, bool train_mode);

Tensor forward_logits(const NetworkSpec& spec, ParameterSet& params, const Tensor& images);
std::vector<int> predict(const NetworkSpec& spec, ParameterSet& params, const Tensor& images);
double accuracy(const NetworkSpec& spec, ParameterSet& params, const Tensor& images,
                const std::vector<int>& labels, size_t eval_batch = 256);

}  // namespace nsad
