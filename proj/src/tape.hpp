// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "nonsmooth.hpp"
#include "tensor.hpp"

namespace nsad {

// Reverse-mode tape. Forward values are computed eagerly as nodes are
// appended and saved verbatim; the backward pass applies one derived program
// per node, selected at backward time from a NonsmoothPolicy (or from a
// per-node override frozen into the tape for fixture programs). One tape can
// therefore be differentiated under several policies without re-running or
// perturbing the forward pass.
enum class Op : uint8_t {
  Leaf,
  ScaleVecConst,  // u_j = t * x_j with constant x, scalar input t
  Index,          // scalar y = x[flat index]
  Add,
  Sub,
  Mul,            // elementwise
  Scale,          // y = c * x with constant c
  Relu,
  Linear,         // y[n,o] = sum_i x[n,i] w[o,i] + b[o]
  Conv2d,         // valid padding, stride 1, with bias
  MaxPool,
  NormPool,
  BatchNorm,
  Flatten,
  SoftmaxCE,      // scalar cross-entropy over logits + integer labels
};

struct Node {
  Op op = Op::Leaf;
  int a = -1, b = -1, c = -1;      // input node ids
  Tensor val;                      // saved forward value
  Tensor aux, aux2, aux3;          // op-specific saved tensors
  std::vector<ActiveSet> actives;  // MaxPool: one per window, plane-major
  PoolGeometry geom;
  size_t planes = 0;               // pools: batch * channels
  double scale = 0.0;
  size_t index = 0;
  bool has_override = false;       // relu s / pool mode frozen into the node
  double s_override = 0.0;
  PoolMode mode_override = PoolMode::Native;
  double beta_override = 0.0;
  std::vector<int> labels;
  bool mean_reduction = false;
  bool train_mode = false;
  double bn_eps = 0.0;
  bool trainable = false;          // leaves: participates in parameter grads
};

struct Tape {
  Precision prec;
  ReductionOrder fwd_order = ReductionOrder::sequential();
  std::vector<Node> nodes;
  int root = -1;

  // Set during forward construction; grad_check consults these to stay away
  // from nonsmooth loci.
  bool pool_tie = false;
  bool relu_at_zero = false;
  bool norm_zero_window = false;

  explicit Tape(Precision p) : prec(p) {}

  const Tensor& val(int id) const { return nodes[static_cast<size_t>(id)].val; }
  int add_node(Node n);  // computes and saves the forward value
  void set_root(int id);
  bool touches_nonsmooth() const { return pool_tie || relu_at_zero || norm_zero_window; }

  // Builders. All forward arithmetic rounds per the tape precision and
  // accumulates per fwd_order.
  int leaf(Tensor t, bool trainable);
  int scale_vec_const(int t_scalar, Tensor x_const);
  int index(int x, size_t flat_index);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int x, double c);
  int relu(int x);
  int relu_fixed(int x, double s);  // per-node relu'(0), for fixture programs
  int linear(int x, int w, int b);
  int conv2d(int x, int w, int b);
  int maxpool(int x, size_t win_h, size_t win_w);
  int maxpool_fixed(int x, size_t win_h, size_t win_w, PoolMode mode, double beta = 0.0);
  int normpool(int x, size_t win_h, size_t win_w);
  // Training-mode batchnorm normalizes with the batch statistics and updates
  // the running buffers in place; eval mode reads them and is a pure affine
  // map. Buffers hold the running mean and running inverse standard
  // deviation per channel.
  int batchnorm(int x, int gamma, int beta, Tensor* run_mean, Tensor* run_invstd,
                bool train, double eps, double momentum);
  int flatten(int x);
  int softmax_ce(int logits, std::vector<int> labels, bool mean_reduction);

  // Recomputes every non-leaf forward value from the leaves and verifies it
  // matches the saved value bitwise.
  bool replay_matches() const;
};

struct Gradient {
  std::vector<Tensor> grads;  // aligned with the wrt list passed to backprop
  bool nonfinite = false;     // some forward value was NaN/Inf
};

// Vector-Jacobian products right to left from the scalar root. Adjoint
// arithmetic runs in the tape precision; every reduction (kernel inner sums
// and fan-in of multiple consumers) follows `order`. Fan-in contributions
// fold in ascending consumer-node-id order under Sequential and in a
// seed-derived permutation under Shuffled.
Gradient backprop(const Tape& tape, const NonsmoothPolicy& policy,
                  const ReductionOrder& order, const std::vector<int>& wrt);

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t evaluated = 0;
  bool nonsmooth_skipped = false;  // evaluation point touched a nonsmooth locus
  bool pass = false;
};

// Central-difference check of analytic gradients for a scalar function of a
// parameter list. Samples up to `samples_per_tensor` coordinates per tensor.
// `f` must be a pure function of the parameters. If `touched_nonsmooth`
// returns true at the evaluation point the check is skipped and flagged.
GradCheckReport grad_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& at, const std::vector<Tensor>& analytic,
    double h, double tol, int samples_per_tensor, uint64_t seed,
    const std::function<bool()>& touched_nonsmooth = {});

}  // namespace nsad
