// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "tape.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace nsad {

namespace {

thread_local std::vector<double> tl_terms;
thread_local std::vector<uint32_t> tl_order;

// Folds already-rounded terms, one rounded addition at a time, in ascending
// order (Sequential) or a seed-derived permutation (Shuffled). The fold runs
// in the format's scratch type; for canonical operands that matches fp_add
// step for step.
double ordered_sum(const double* terms, size_t n, Precision prec, const ReductionOrder& ord) {
  return dispatch_precision(prec, [&]<class M>() {
    typename M::S acc = M::load(0.0);
    if (ord.is_sequential()) {
      for (size_t i = 0; i < n; ++i) acc = M::add(acc, M::load(terms[i]));
    } else {
      fill_permutation(tl_order, n, ord.seed);
      for (size_t i = 0; i < n; ++i) acc = M::add(acc, M::load(terms[tl_order[i]]));
    }
    return M::store(acc);
  });
}

// Per-node reduction stream roles keep every reduction in the graph on an
// independent permutation stream.
enum Role : uint64_t {
  kFwd = 0,
  kBwdInput = 1,
  kBwdWeight = 2,
  kBwdBias = 3,
  kBwdExtra = 4,
  kFanIn = 5,
};

ReductionOrder node_stream(const ReductionOrder& base, int node_id, uint64_t role) {
  return base.stream(static_cast<uint64_t>(node_id) * 8 + role);
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

void relu_forward(const Tensor& x, Tensor& out) {
  out.shape = x.shape;
  out.prec = x.prec;
  out.data.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x.data[i];
    out.data[i] = v > 0.0 ? v : 0.0;
  }
}

template <class M>
void linear_forward_kernel(const Tensor& x, const Tensor& w, const Tensor* bias,
                           const ReductionOrder& base, Tensor& out) {
  size_t n = x.shape[0], in = x.shape[1], outf = w.shape[0];
  for (size_t r = 0; r < n; ++r) {
    const double* xr = &x.data[r * in];
    for (size_t o = 0; o < outf; ++o) {
      ReductionOrder ord = base.stream(r * outf + o);
      const double* wo = &w.data[o * in];
      typename M::S acc = M::load(0.0);
      if (ord.is_sequential()) {
        for (size_t i = 0; i < in; ++i)
          acc = M::add(acc, M::mul(M::load(xr[i]), M::load(wo[i])));
      } else {
        fill_permutation(tl_order, in, ord.seed);
        for (size_t i = 0; i < in; ++i) {
          size_t u = tl_order[i];
          acc = M::add(acc, M::mul(M::load(xr[u]), M::load(wo[u])));
        }
      }
      if (bias) acc = M::add(acc, M::load(bias->data[o]));
      out.data[r * outf + o] = M::store(acc);
    }
  }
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Precision prec,
                    const ReductionOrder& base, Tensor& out) {
  size_t n = x.shape[0], in = x.shape[1], outf = w.shape[0];
  NSAD_CHECK(w.shape[1] == in, ErrorKind::Internal, "linear: weight shape mismatch");
  out = Tensor::zeros({n, outf}, prec);
  dispatch_precision(prec,
                     [&]<class M>() { linear_forward_kernel<M>(x, w, bias, base, out); });
}

// Batch statistic folds gather batch-major, then within-plane. The per-channel
// scalars (mean, var, invstd) stay on fp_* so the sqrt keeps its single
// rounding; everything elementwise runs in the scratch type.
template <class M>
void batchnorm_train_kernel(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                            double eps, Precision prec, const ReductionOrder& base, Tensor& out,
                            Tensor& xhat, Tensor& invstd_c, Tensor& mean_c) {
  size_t nb = x.shape[0], ch = x.shape[1], hw = x.shape[2] * x.shape[3];
  size_t neff = nb * hw;
  for (size_t c = 0; c < ch; ++c) {
    ReductionOrder o1 = base.stream(2 * c);
    typename M::S sum = M::load(0.0);
    if (o1.is_sequential()) {
      for (size_t b = 0; b < nb; ++b) {
        const double* xp = &x.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k) sum = M::add(sum, M::load(xp[k]));
      }
    } else {
      fill_permutation(tl_order, neff, o1.seed);
      for (size_t t = 0; t < neff; ++t) {
        size_t k = tl_order[t];
        sum = M::add(sum, M::load(x.data[((k / hw) * ch + c) * hw + k % hw]));
      }
    }
    double mean = fp_div(M::store(sum), static_cast<double>(neff), prec);
    typename M::S mS = M::load(mean);
    ReductionOrder o2 = base.stream(2 * c + 1);
    typename M::S vsum = M::load(0.0);
    if (o2.is_sequential()) {
      for (size_t b = 0; b < nb; ++b) {
        const double* xp = &x.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k) {
          typename M::S cent = M::sub(M::load(xp[k]), mS);
          vsum = M::add(vsum, M::mul(cent, cent));
        }
      }
    } else {
      fill_permutation(tl_order, neff, o2.seed);
      for (size_t t = 0; t < neff; ++t) {
        size_t k = tl_order[t];
        typename M::S cent = M::sub(M::load(x.data[((k / hw) * ch + c) * hw + k % hw]), mS);
        vsum = M::add(vsum, M::mul(cent, cent));
      }
    }
    double var = fp_div(M::store(vsum), static_cast<double>(neff), prec);
    double invstd = fp_div(1.0, fp_sqrt(fp_add(var, eps, prec), prec), prec);
    invstd_c.data[c] = invstd;
    mean_c.data[c] = mean;
    typename M::S iS = M::load(invstd);
    typename M::S gS = M::load(gamma.data[c]), sS = M::load(shift.data[c]);
    for (size_t b = 0; b < nb; ++b) {
      const double* xp = &x.data[(b * ch + c) * hw];
      double* hp = &xhat.data[(b * ch + c) * hw];
      double* op = &out.data[(b * ch + c) * hw];
      for (size_t k = 0; k < hw; ++k) {
        typename M::S xh = M::mul(M::sub(M::load(xp[k]), mS), iS);
        hp[k] = M::store(xh);
        op[k] = M::store(M::add(M::mul(gS, xh), sS));
      }
    }
  }
}

template <class M>
void batchnorm_eval_kernel(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                           const Tensor& invstd_c, const Tensor& mean_c, Tensor& out,
                           Tensor& xhat) {
  size_t nb = x.shape[0], ch = x.shape[1], hw = x.shape[2] * x.shape[3];
  for (size_t c = 0; c < ch; ++c) {
    typename M::S mS = M::load(mean_c.data[c]), iS = M::load(invstd_c.data[c]);
    typename M::S gS = M::load(gamma.data[c]), sS = M::load(shift.data[c]);
    for (size_t b = 0; b < nb; ++b) {
      const double* xp = &x.data[(b * ch + c) * hw];
      double* hp = &xhat.data[(b * ch + c) * hw];
      double* op = &out.data[(b * ch + c) * hw];
      for (size_t k = 0; k < hw; ++k) {
        typename M::S xh = M::mul(M::sub(M::load(xp[k]), mS), iS);
        hp[k] = M::store(xh);
        op[k] = M::store(M::add(M::mul(gS, xh), sS));
      }
    }
  }
}

}  // namespace

Tensor forward_value(const Tape& tape, Node& n, int id) {
  const Precision prec = tape.prec;
  auto in = [&](int i) -> const Tensor& { return tape.nodes[static_cast<size_t>(i)].val; };
  switch (n.op) {
    case Op::Leaf:
      return n.val;  // set by builder
    case Op::ScaleVecConst: {
      const Tensor& t = in(n.a);
      Tensor out = Tensor::zeros(n.aux.shape, prec);
      for (size_t i = 0; i < n.aux.size(); ++i)
        out.data[i] = fp_mul(t.data[0], n.aux.data[i], prec);
      return out;
    }
    case Op::Index: {
      const Tensor& x = in(n.a);
      return Tensor::scalar(x.data[n.index], prec);
    }
    case Op::Add: return add(in(n.a), in(n.b));
    case Op::Sub: return sub(in(n.a), in(n.b));
    case Op::Mul: return mul(in(n.a), in(n.b));
    case Op::Scale: {
      const Tensor& x = in(n.a);
      Tensor out = Tensor::zeros(x.shape, prec);
      for (size_t i = 0; i < x.size(); ++i) out.data[i] = fp_mul(n.scale, x.data[i], prec);
      return out;
    }
    case Op::Relu: {
      Tensor out;
      relu_forward(in(n.a), out);
      return out;
    }
    case Op::Linear: {
      Tensor out;
      const Tensor* bias = n.c >= 0 ? &in(n.c) : nullptr;
      linear_forward(in(n.a), in(n.b), bias, prec, node_stream(tape.fwd_order, id, kFwd), out);
      return out;
    }
    case Op::Conv2d: {
      Tensor no_bias;
      const Tensor& bias = n.c >= 0 ? in(n.c) : no_bias;
      return conv2d(in(n.a), in(n.b), bias, node_stream(tape.fwd_order, id, kFwd));
    }
    case Op::MaxPool: {
      const Tensor& x = in(n.a);
      n.planes = x.shape[0] * x.shape[1];
      n.geom.in_h = x.shape[2];
      n.geom.in_w = x.shape[3];
      n.geom.validate();
      size_t oh = n.geom.out_h(), ow = n.geom.out_w();
      Tensor out = Tensor::zeros({x.shape[0], x.shape[1], oh, ow}, prec);
      n.actives.assign(n.planes * oh * ow, ActiveSet{});
      size_t in_plane = n.geom.in_h * n.geom.in_w, out_plane = oh * ow;
      for (size_t p = 0; p < n.planes; ++p) {
        maxpool_forward(x.data.data() + p * in_plane, n.geom, out.data.data() + p * out_plane,
                        n.actives.data() + p * out_plane);
      }
      return out;
    }
    case Op::NormPool: {
      const Tensor& x = in(n.a);
      n.planes = x.shape[0] * x.shape[1];
      n.geom.in_h = x.shape[2];
      n.geom.in_w = x.shape[3];
      n.geom.validate();
      size_t oh = n.geom.out_h(), ow = n.geom.out_w();
      Tensor out = Tensor::zeros({x.shape[0], x.shape[1], oh, ow}, prec);
      size_t in_plane = n.geom.in_h * n.geom.in_w, out_plane = oh * ow;
      for (size_t p = 0; p < n.planes; ++p)
        normpool_forward(x.data.data() + p * in_plane, n.geom, prec,
                         out.data.data() + p * out_plane);
      return out;
    }
    case Op::BatchNorm: {
      const Tensor& x = in(n.a);
      const Tensor& gamma = in(n.b);
      const Tensor& shift = in(n.c);
      Tensor out = Tensor::zeros(x.shape, prec);
      n.aux = Tensor::zeros(x.shape, prec);  // normalized values
      ReductionOrder base = node_stream(tape.fwd_order, id, kFwd);
      if (n.train_mode) {
        size_t ch = x.shape[1];
        n.aux2 = Tensor::zeros({ch}, prec);  // invstd
        n.aux3 = Tensor::zeros({ch}, prec);  // batch mean
        double eps = round_to(n.bn_eps, prec);
        dispatch_precision(prec, [&]<class M>() {
          batchnorm_train_kernel<M>(x, gamma, shift, eps, prec, base, out, n.aux, n.aux2, n.aux3);
        });
      } else {
        // Eval mode: affine map with the snapshotted running statistics.
        dispatch_precision(prec, [&]<class M>() {
          batchnorm_eval_kernel<M>(x, gamma, shift, n.aux2, n.aux3, out, n.aux);
        });
      }
      return out;
    }
    case Op::Flatten: {
      const Tensor& x = in(n.a);
      Tensor out;
      out.prec = prec;
      out.shape = {x.shape[0], x.size() / x.shape[0]};
      out.data = x.data;
      return out;
    }
    case Op::SoftmaxCE: {
      const Tensor& l = in(n.a);
      size_t nb = l.shape[0], k = l.shape[1];
      NSAD_CHECK(n.labels.size() == nb, ErrorKind::Internal, "softmax_ce: label count mismatch");
      n.aux = Tensor::zeros({nb, k}, prec);  // probabilities
      ReductionOrder base = node_stream(tape.fwd_order, id, kFwd);
      tl_terms.resize(nb);
      std::vector<double> shifted(k);
      for (size_t r = 0; r < nb; ++r) {
        const double* lp = &l.data[r * k];
        NSAD_CHECK(n.labels[r] >= 0 && static_cast<size_t>(n.labels[r]) < k, ErrorKind::Data,
                   "label out of class range");
        // The row max is treated as a constant shift, the usual stabilized
        // softmax; it does not enter the derivative.
        double m = lp[0];
        for (size_t j = 1; j < k; ++j)
          if (lp[j] > m) m = lp[j];
        std::vector<double> exps(k);
        for (size_t j = 0; j < k; ++j) {
          shifted[j] = fp_sub(lp[j], m, prec);
          exps[j] = fp_exp(shifted[j], prec);
        }
        double s = ordered_sum(exps.data(), k, prec, base.stream(r));
        double logs = fp_log(s, prec);
        for (size_t j = 0; j < k; ++j) n.aux.data[r * k + j] = fp_div(exps[j], s, prec);
        tl_terms[r] = fp_sub(logs, shifted[static_cast<size_t>(n.labels[r])], prec);
      }
      double total = ordered_sum(tl_terms.data(), nb, prec, base.stream(nb));
      if (n.mean_reduction) total = fp_div(total, static_cast<double>(nb), prec);
      return Tensor::scalar(total, prec);
    }
  }
  throw Error(ErrorKind::Internal, "unhandled op in forward");
}

int Tape::add_node(Node n) {
  int id = static_cast<int>(nodes.size());
  nodes.push_back(std::move(n));
  Node& node = nodes.back();
  if (node.op != Op::Leaf) node.val = forward_value(*this, node, id);
  switch (node.op) {
    case Op::MaxPool:
      for (const ActiveSet& a : node.actives)
        if (a.count() > 1) { pool_tie = true; break; }
      break;
    case Op::Relu: {
      const Tensor& x = nodes[static_cast<size_t>(node.a)].val;
      for (double v : x.data)
        if (v == 0.0) { relu_at_zero = true; break; }
      break;
    }
    case Op::NormPool:
      for (double v : node.val.data)
        if (v == 0.0) { norm_zero_window = true; break; }
      break;
    default: break;
  }
  return id;
}

void Tape::set_root(int id) {
  NSAD_CHECK(id >= 0 && static_cast<size_t>(id) < nodes.size(), ErrorKind::Internal,
             "root id out of range");
  root = id;
}

int Tape::leaf(Tensor t, bool trainable) {
  Node n;
  n.op = Op::Leaf;
  n.trainable = trainable;
  n.val = cast(t, prec);
  return add_node(std::move(n));
}

int Tape::scale_vec_const(int t_scalar, Tensor x_const) {
  NSAD_CHECK(val(t_scalar).size() == 1, ErrorKind::Internal,
             "scale_vec_const expects a scalar input");
  Node n;
  n.op = Op::ScaleVecConst;
  n.a = t_scalar;
  n.aux = cast(x_const, prec);
  return add_node(std::move(n));
}

int Tape::index(int x, size_t flat_index) {
  NSAD_CHECK(flat_index < val(x).size(), ErrorKind::Internal, "index out of range");
  Node n;
  n.op = Op::Index;
  n.a = x;
  n.index = flat_index;
  return add_node(std::move(n));
}

int Tape::add(int a, int b) {
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  return add_node(std::move(n));
}

int Tape::sub(int a, int b) {
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  return add_node(std::move(n));
}

int Tape::mul(int a, int b) {
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  return add_node(std::move(n));
}

int Tape::scale(int x, double c) {
  Node n;
  n.op = Op::Scale;
  n.a = x;
  n.scale = round_to(c, prec);
  return add_node(std::move(n));
}

int Tape::relu(int x) {
  Node n;
  n.op = Op::Relu;
  n.a = x;
  return add_node(std::move(n));
}

int Tape::relu_fixed(int x, double s) {
  NSAD_CHECK(s >= 0.0 && s <= 1.0, ErrorKind::Config, "relu'(0) selection must lie in [0,1]");
  Node n;
  n.op = Op::Relu;
  n.a = x;
  n.has_override = true;
  n.s_override = s;
  return add_node(std::move(n));
}

int Tape::linear(int x, int w, int b) {
  Node n;
  n.op = Op::Linear;
  n.a = x;
  n.b = w;
  n.c = b;
  return add_node(std::move(n));
}

int Tape::conv2d(int x, int w, int b) {
  Node n;
  n.op = Op::Conv2d;
  n.a = x;
  n.b = w;
  n.c = b;
  return add_node(std::move(n));
}

int Tape::maxpool(int x, size_t win_h, size_t win_w) {
  Node n;
  n.op = Op::MaxPool;
  n.a = x;
  n.geom.win_h = win_h;
  n.geom.win_w = win_w;
  return add_node(std::move(n));
}

int Tape::maxpool_fixed(int x, size_t win_h, size_t win_w, PoolMode mode, double beta) {
  Node n;
  n.op = Op::MaxPool;
  n.a = x;
  n.geom.win_h = win_h;
  n.geom.win_w = win_w;
  n.has_override = true;
  n.mode_override = mode;
  n.beta_override = beta;
  return add_node(std::move(n));
}

int Tape::normpool(int x, size_t win_h, size_t win_w) {
  Node n;
  n.op = Op::NormPool;
  n.a = x;
  n.geom.win_h = win_h;
  n.geom.win_w = win_w;
  return add_node(std::move(n));
}

int Tape::batchnorm(int x, int gamma, int beta, Tensor* run_mean, Tensor* run_invstd,
                    bool train, double eps, double momentum) {
  Node n;
  n.op = Op::BatchNorm;
  n.a = x;
  n.b = gamma;
  n.c = beta;
  n.train_mode = train;
  n.bn_eps = eps;
  if (!train) {
    NSAD_CHECK(run_mean && run_invstd, ErrorKind::Internal,
               "eval-mode batchnorm requires running statistics");
    n.aux3 = *run_mean;   // snapshots; replay uses these, not live buffers
    n.aux2 = *run_invstd;
  }
  int id = add_node(std::move(n));
  if (train && run_mean && run_invstd) {
    const Node& node = nodes[static_cast<size_t>(id)];
    double mom = round_to(momentum, prec);
    double keep = fp_sub(1.0, mom, prec);
    for (size_t c = 0; c < run_mean->size(); ++c) {
      run_mean->data[c] = fp_add(fp_mul(keep, run_mean->data[c], prec),
                                 fp_mul(mom, node.aux3.data[c], prec), prec);
      run_invstd->data[c] = fp_add(fp_mul(keep, run_invstd->data[c], prec),
                                   fp_mul(mom, node.aux2.data[c], prec), prec);
    }
  }
  return id;
}

int Tape::flatten(int x) {
  Node n;
  n.op = Op::Flatten;
  n.a = x;
  return add_node(std::move(n));
}

int Tape::softmax_ce(int logits, std::vector<int> labels, bool mean_reduction) {
  Node n;
  n.op = Op::SoftmaxCE;
  n.a = logits;
  n.labels = std::move(labels);
  n.mean_reduction = mean_reduction;
  return add_node(std::move(n));
}

bool Tape::replay_matches() const {
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].op == Op::Leaf) continue;
    Node copy = nodes[i];
    Tensor redone = forward_value(*this, copy, static_cast<int>(i));
    if (redone.data != nodes[i].val.data) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

struct BackCtx {
  const Tape& tape;
  const NonsmoothPolicy& policy;
  const ReductionOrder& order;
  std::vector<std::vector<Tensor>> contrib;
  std::vector<char> need;

  Precision prec() const { return tape.prec; }

  void send(int target, Tensor t) {
    if (target < 0 || !need[static_cast<size_t>(target)]) return;
    contrib[static_cast<size_t>(target)].push_back(std::move(t));
  }
};

// The backward reductions fold product terms directly in the scratch type,
// one rounded multiply and add per term, in the same term order the staged
// path used; Shuffled permutes the same enumeration.
template <class M>
void linear_bwd_dx_kernel(const Tensor& g, const Tensor& w, const ReductionOrder& base,
                          Tensor& dx) {
  size_t nb = dx.shape[0], in = dx.shape[1], outf = w.shape[0];
  for (size_t r = 0; r < nb; ++r) {
    const double* gr = &g.data[r * outf];
    for (size_t i = 0; i < in; ++i) {
      ReductionOrder ord = base.stream(r * in + i);
      typename M::S acc = M::load(0.0);
      if (ord.is_sequential()) {
        for (size_t o = 0; o < outf; ++o)
          acc = M::add(acc, M::mul(M::load(gr[o]), M::load(w.data[o * in + i])));
      } else {
        fill_permutation(tl_order, outf, ord.seed);
        for (size_t t = 0; t < outf; ++t) {
          size_t o = tl_order[t];
          acc = M::add(acc, M::mul(M::load(gr[o]), M::load(w.data[o * in + i])));
        }
      }
      dx.data[r * in + i] = M::store(acc);
    }
  }
}

template <class M>
void linear_bwd_dw_kernel(const Tensor& g, const Tensor& x, const ReductionOrder& base,
                          Tensor& dw) {
  size_t nb = x.shape[0], in = x.shape[1], outf = dw.shape[0];
  for (size_t o = 0; o < outf; ++o) {
    for (size_t i = 0; i < in; ++i) {
      ReductionOrder ord = base.stream(o * in + i);
      typename M::S acc = M::load(0.0);
      if (ord.is_sequential()) {
        for (size_t r = 0; r < nb; ++r)
          acc = M::add(acc, M::mul(M::load(g.data[r * outf + o]), M::load(x.data[r * in + i])));
      } else {
        fill_permutation(tl_order, nb, ord.seed);
        for (size_t t = 0; t < nb; ++t) {
          size_t r = tl_order[t];
          acc = M::add(acc, M::mul(M::load(g.data[r * outf + o]), M::load(x.data[r * in + i])));
        }
      }
      dw.data[o * in + i] = M::store(acc);
    }
  }
}

template <class M>
void linear_bwd_db_kernel(const Tensor& g, const ReductionOrder& base, Tensor& db) {
  size_t nb = g.shape[0], outf = g.shape[1];
  for (size_t o = 0; o < outf; ++o) {
    ReductionOrder ord = base.stream(o);
    typename M::S acc = M::load(0.0);
    if (ord.is_sequential()) {
      for (size_t r = 0; r < nb; ++r) acc = M::add(acc, M::load(g.data[r * outf + o]));
    } else {
      fill_permutation(tl_order, nb, ord.seed);
      for (size_t t = 0; t < nb; ++t) acc = M::add(acc, M::load(g.data[tl_order[t] * outf + o]));
    }
    db.data[o] = M::store(acc);
  }
}

void backward_linear(BackCtx& ctx, const Node& n, int id, const Tensor& g) {
  const Tensor& x = ctx.tape.val(n.a);
  const Tensor& w = ctx.tape.val(n.b);
  const Precision prec = ctx.prec();
  if (ctx.need[static_cast<size_t>(n.a)]) {
    ReductionOrder base = node_stream(ctx.order, id, kBwdInput);
    Tensor dx = Tensor::zeros(x.shape, prec);
    dispatch_precision(prec, [&]<class M>() { linear_bwd_dx_kernel<M>(g, w, base, dx); });
    ctx.send(n.a, std::move(dx));
  }
  {
    ReductionOrder base = node_stream(ctx.order, id, kBwdWeight);
    Tensor dw = Tensor::zeros(w.shape, prec);
    dispatch_precision(prec, [&]<class M>() { linear_bwd_dw_kernel<M>(g, x, base, dw); });
    ctx.send(n.b, std::move(dw));
  }
  if (n.c >= 0) {
    ReductionOrder base = node_stream(ctx.order, id, kBwdBias);
    Tensor db = Tensor::zeros({w.shape[0]}, prec);
    dispatch_precision(prec, [&]<class M>() { linear_bwd_db_kernel<M>(g, base, db); });
    ctx.send(n.c, std::move(db));
  }
}

// Input-gradient terms enumerate (out-channel, kernel row, kernel col)
// ascending over the clipped window; Shuffled permutes that enumeration.
template <class M>
void conv_bwd_dx_kernel(const Tensor& g, const Tensor& w, const ReductionOrder& base,
                        Tensor& dx) {
  size_t nb = dx.shape[0], ci = dx.shape[1], h = dx.shape[2], wd = dx.shape[3];
  size_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  size_t oh = h - kh + 1, ow = wd - kw + 1;
  size_t elem = 0;
  for (size_t b = 0; b < nb; ++b) {
    for (size_t c = 0; c < ci; ++c) {
      for (size_t y = 0; y < h; ++y) {
        size_t u_lo = (y + 1 > oh) ? y + 1 - oh : 0;
        size_t u_hi = std::min(kh - 1, y);
        for (size_t z = 0; z < wd; ++z, ++elem) {
          size_t v_lo = (z + 1 > ow) ? z + 1 - ow : 0;
          size_t v_hi = std::min(kw - 1, z);
          ReductionOrder ord = base.stream(elem);
          typename M::S acc = M::load(0.0);
          if (ord.is_sequential()) {
            for (size_t o = 0; o < co; ++o) {
              for (size_t u = u_lo; u <= u_hi; ++u) {
                const double* gp = &g.data[((b * co + o) * oh + (y - u)) * ow + z];
                const double* wp = &w.data[((o * ci + c) * kh + u) * kw];
                for (size_t v = v_lo; v <= v_hi; ++v)
                  acc = M::add(acc, M::mul(M::load(*(gp - v)), M::load(wp[v])));
              }
            }
          } else {
            size_t nu = u_hi - u_lo + 1, nv = v_hi - v_lo + 1;
            size_t cnt = co * nu * nv;
            fill_permutation(tl_order, cnt, ord.seed);
            for (size_t t = 0; t < cnt; ++t) {
              size_t k = tl_order[t];
              size_t o = k / (nu * nv), rem = k % (nu * nv);
              size_t u = u_lo + rem / nv, v = v_lo + rem % nv;
              acc = M::add(acc,
                           M::mul(M::load(g.data[((b * co + o) * oh + (y - u)) * ow + (z - v)]),
                                  M::load(w.data[((o * ci + c) * kh + u) * kw + v])));
            }
          }
          dx.data[elem] = M::store(acc);
        }
      }
    }
  }
}

// Weight-gradient terms enumerate (batch, out row, out col) ascending.
template <class M>
void conv_bwd_dw_kernel(const Tensor& g, const Tensor& x, const ReductionOrder& base,
                        Tensor& dw) {
  size_t nb = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
  size_t co = dw.shape[0], kh = dw.shape[2], kw = dw.shape[3];
  size_t oh = h - kh + 1, ow = wd - kw + 1;
  size_t n_out = nb * oh * ow;
  size_t elem = 0;
  for (size_t o = 0; o < co; ++o) {
    for (size_t c = 0; c < ci; ++c) {
      for (size_t u = 0; u < kh; ++u) {
        for (size_t v = 0; v < kw; ++v, ++elem) {
          ReductionOrder ord = base.stream(elem);
          typename M::S acc = M::load(0.0);
          if (ord.is_sequential()) {
            for (size_t b = 0; b < nb; ++b) {
              for (size_t y = 0; y < oh; ++y) {
                const double* gp = &g.data[((b * co + o) * oh + y) * ow];
                const double* xp = &x.data[((b * ci + c) * h + y + u) * wd + v];
                for (size_t z = 0; z < ow; ++z)
                  acc = M::add(acc, M::mul(M::load(gp[z]), M::load(xp[z])));
              }
            }
          } else {
            fill_permutation(tl_order, n_out, ord.seed);
            for (size_t t = 0; t < n_out; ++t) {
              size_t k = tl_order[t];
              size_t b = k / (oh * ow), rem = k % (oh * ow);
              size_t y = rem / ow, z = rem % ow;
              acc = M::add(acc, M::mul(M::load(g.data[((b * co + o) * oh + y) * ow + z]),
                                       M::load(x.data[((b * ci + c) * h + y + u) * wd + v + z])));
            }
          }
          dw.data[elem] = M::store(acc);
        }
      }
    }
  }
}

template <class M>
void conv_bwd_db_kernel(const Tensor& g, const ReductionOrder& base, Tensor& db) {
  size_t nb = g.shape[0], co = g.shape[1], oh = g.shape[2], ow = g.shape[3];
  size_t n_out = nb * oh * ow;
  for (size_t o = 0; o < co; ++o) {
    ReductionOrder ord = base.stream(o);
    typename M::S acc = M::load(0.0);
    if (ord.is_sequential()) {
      for (size_t b = 0; b < nb; ++b) {
        const double* gp = &g.data[(b * co + o) * oh * ow];
        for (size_t k = 0; k < oh * ow; ++k) acc = M::add(acc, M::load(gp[k]));
      }
    } else {
      fill_permutation(tl_order, n_out, ord.seed);
      for (size_t t = 0; t < n_out; ++t) {
        size_t k = tl_order[t];
        acc = M::add(acc, M::load(g.data[(k / (oh * ow) * co + o) * oh * ow + k % (oh * ow)]));
      }
    }
    db.data[o] = M::store(acc);
  }
}

void backward_conv(BackCtx& ctx, const Node& n, int id, const Tensor& g) {
  const Tensor& x = ctx.tape.val(n.a);
  const Tensor& w = ctx.tape.val(n.b);
  const Precision prec = ctx.prec();
  if (ctx.need[static_cast<size_t>(n.a)]) {
    ReductionOrder base = node_stream(ctx.order, id, kBwdInput);
    Tensor dx = Tensor::zeros(x.shape, prec);
    dispatch_precision(prec, [&]<class M>() { conv_bwd_dx_kernel<M>(g, w, base, dx); });
    ctx.send(n.a, std::move(dx));
  }
  {
    ReductionOrder base = node_stream(ctx.order, id, kBwdWeight);
    Tensor dw = Tensor::zeros(w.shape, prec);
    dispatch_precision(prec, [&]<class M>() { conv_bwd_dw_kernel<M>(g, x, base, dw); });
    ctx.send(n.b, std::move(dw));
  }
  if (n.c >= 0) {
    ReductionOrder base = node_stream(ctx.order, id, kBwdBias);
    Tensor db = Tensor::zeros({w.shape[0]}, prec);
    dispatch_precision(prec, [&]<class M>() { conv_bwd_db_kernel<M>(g, base, db); });
    ctx.send(n.c, std::move(db));
  }
}

template <class M>
void batchnorm_bwd_kernel(const Tensor& g, const Tensor& xhat, const Tensor& gamma,
                          const Tensor& invstd_c, bool train_mode, Precision prec,
                          const ReductionOrder& b1, const ReductionOrder& b2, Tensor& dx,
                          Tensor& dgamma, Tensor& dshift) {
  size_t nb = g.shape[0], ch = g.shape[1], hw = g.size() / (nb * ch);
  size_t neff = nb * hw;
  for (size_t c = 0; c < ch; ++c) {
    ReductionOrder o1 = b1.stream(c);
    typename M::S s1acc = M::load(0.0);
    if (o1.is_sequential()) {
      for (size_t b = 0; b < nb; ++b) {
        const double* gp = &g.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k) s1acc = M::add(s1acc, M::load(gp[k]));
      }
    } else {
      fill_permutation(tl_order, neff, o1.seed);
      for (size_t t = 0; t < neff; ++t) {
        size_t k = tl_order[t];
        s1acc = M::add(s1acc, M::load(g.data[((k / hw) * ch + c) * hw + k % hw]));
      }
    }
    ReductionOrder o2 = b2.stream(c);
    typename M::S s2acc = M::load(0.0);
    if (o2.is_sequential()) {
      for (size_t b = 0; b < nb; ++b) {
        const double* gp = &g.data[(b * ch + c) * hw];
        const double* hp = &xhat.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k)
          s2acc = M::add(s2acc, M::mul(M::load(gp[k]), M::load(hp[k])));
      }
    } else {
      fill_permutation(tl_order, neff, o2.seed);
      for (size_t t = 0; t < neff; ++t) {
        size_t k = tl_order[t];
        size_t idx = ((k / hw) * ch + c) * hw + k % hw;
        s2acc = M::add(s2acc, M::mul(M::load(g.data[idx]), M::load(xhat.data[idx])));
      }
    }
    double s1 = M::store(s1acc);
    double s2 = M::store(s2acc);
    dshift.data[c] = s1;
    dgamma.data[c] = s2;
    double k_c = fp_mul(gamma.data[c], invstd_c.data[c], prec);
    typename M::S kS = M::load(k_c);
    if (train_mode) {
      typename M::S m1 = M::load(fp_div(s1, static_cast<double>(neff), prec));
      typename M::S m2 = M::load(fp_div(s2, static_cast<double>(neff), prec));
      for (size_t b = 0; b < nb; ++b) {
        const double* gp = &g.data[(b * ch + c) * hw];
        const double* hp = &xhat.data[(b * ch + c) * hw];
        double* dp = &dx.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k) {
          typename M::S centered = M::sub(M::load(gp[k]), m1);
          dp[k] = M::store(M::mul(kS, M::sub(centered, M::mul(M::load(hp[k]), m2))));
        }
      }
    } else {
      for (size_t b = 0; b < nb; ++b) {
        const double* gp = &g.data[(b * ch + c) * hw];
        double* dp = &dx.data[(b * ch + c) * hw];
        for (size_t k = 0; k < hw; ++k) dp[k] = M::store(M::mul(M::load(gp[k]), kS));
      }
    }
  }
}

void backward_batchnorm(BackCtx& ctx, const Node& n, int id, const Tensor& g) {
  const Tensor& x = ctx.tape.val(n.a);
  const Tensor& gamma = ctx.tape.val(n.b);
  const Precision prec = ctx.prec();
  Tensor dx = Tensor::zeros(x.shape, prec);
  Tensor dgamma = Tensor::zeros({x.shape[1]}, prec);
  Tensor dshift = Tensor::zeros({x.shape[1]}, prec);
  ReductionOrder b1 = node_stream(ctx.order, id, kBwdBias);
  ReductionOrder b2 = node_stream(ctx.order, id, kBwdWeight);
  dispatch_precision(prec, [&]<class M>() {
    batchnorm_bwd_kernel<M>(g, n.aux, gamma, n.aux2, n.train_mode, prec, b1, b2, dx, dgamma,
                            dshift);
  });
  ctx.send(n.a, std::move(dx));
  ctx.send(n.b, std::move(dgamma));
  ctx.send(n.c, std::move(dshift));
}

void backward_node(BackCtx& ctx, int id, const Tensor& g) {
  const Node& n = ctx.tape.nodes[static_cast<size_t>(id)];
  const Precision prec = ctx.prec();
  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::ScaleVecConst: {
      ReductionOrder ord = node_stream(ctx.order, id, kBwdInput);
      tl_terms.resize(n.aux.size());
      for (size_t i = 0; i < n.aux.size(); ++i)
        tl_terms[i] = fp_mul(g.data[i], n.aux.data[i], prec);
      ctx.send(n.a, Tensor::scalar(ordered_sum(tl_terms.data(), tl_terms.size(), prec, ord),
                                   prec));
      return;
    }
    case Op::Index: {
      Tensor dx = Tensor::zeros(ctx.tape.val(n.a).shape, prec);
      dx.data[n.index] = g.data[0];
      ctx.send(n.a, std::move(dx));
      return;
    }
    case Op::Add:
      ctx.send(n.a, g);
      ctx.send(n.b, g);
      return;
    case Op::Sub: {
      ctx.send(n.a, g);
      Tensor db = Tensor::zeros(g.shape, prec);
      for (size_t i = 0; i < g.size(); ++i) db.data[i] = -g.data[i];
      ctx.send(n.b, std::move(db));
      return;
    }
    case Op::Mul: {
      const Tensor& av = ctx.tape.val(n.a);
      const Tensor& bv = ctx.tape.val(n.b);
      Tensor da = Tensor::zeros(g.shape, prec);
      Tensor db = Tensor::zeros(g.shape, prec);
      for (size_t i = 0; i < g.size(); ++i) {
        da.data[i] = fp_mul(g.data[i], bv.data[i], prec);
        db.data[i] = fp_mul(g.data[i], av.data[i], prec);
      }
      ctx.send(n.a, std::move(da));
      ctx.send(n.b, std::move(db));
      return;
    }
    case Op::Scale: {
      Tensor da = Tensor::zeros(g.shape, prec);
      for (size_t i = 0; i < g.size(); ++i) da.data[i] = fp_mul(n.scale, g.data[i], prec);
      ctx.send(n.a, std::move(da));
      return;
    }
    case Op::Relu: {
      const Tensor& x = ctx.tape.val(n.a);
      double s = n.has_override ? n.s_override : ctx.policy.relu_s;
      double s_r = round_to(s, prec);
      Tensor dx = Tensor::zeros(x.shape, prec);
      for (size_t i = 0; i < x.size(); ++i) {
        double v = x.data[i];
        if (v > 0.0) dx.data[i] = g.data[i];
        else if (v == 0.0 && s_r != 0.0)
          dx.data[i] = (s_r == 1.0) ? g.data[i] : fp_mul(s_r, g.data[i], prec);
      }
      ctx.send(n.a, std::move(dx));
      return;
    }
    case Op::Linear:
      backward_linear(ctx, n, id, g);
      return;
    case Op::Conv2d:
      backward_conv(ctx, n, id, g);
      return;
    case Op::MaxPool: {
      PoolMode mode = n.has_override ? n.mode_override : ctx.policy.pool_mode;
      double beta = n.has_override ? n.beta_override : ctx.policy.beta;
      NSAD_CHECK(mode == PoolMode::Native || mode == PoolMode::Minimal ||
                     mode == PoolMode::Hybrid,
                 ErrorKind::Config,
                 std::string("policy mode '") + pool_mode_name(mode) +
                     "' cannot differentiate a max pooling layer");
      const Tensor& x = ctx.tape.val(n.a);
      Tensor dx = Tensor::zeros(x.shape, prec);
      size_t in_plane = n.geom.in_h * n.geom.in_w;
      size_t out_plane = n.geom.out_h() * n.geom.out_w();
      for (size_t p = 0; p < n.planes; ++p) {
        maxpool_backward(g.data.data() + p * out_plane, n.actives.data() + p * out_plane,
                         n.geom, mode, beta, prec, dx.data.data() + p * in_plane);
      }
      ctx.send(n.a, std::move(dx));
      return;
    }
    case Op::NormPool: {
      PoolMode mode = n.has_override ? n.mode_override : ctx.policy.pool_mode;
      NSAD_CHECK(mode == PoolMode::NormZero || mode == PoolMode::NormUniform,
                 ErrorKind::Config,
                 std::string("policy mode '") + pool_mode_name(mode) +
                     "' cannot differentiate a norm pooling layer");
      const Tensor& x = ctx.tape.val(n.a);
      Tensor dx = Tensor::zeros(x.shape, prec);
      size_t in_plane = n.geom.in_h * n.geom.in_w;
      size_t out_plane = n.geom.out_h() * n.geom.out_w();
      for (size_t p = 0; p < n.planes; ++p) {
        normpool_backward(x.data.data() + p * in_plane, n.val.data.data() + p * out_plane,
                          g.data.data() + p * out_plane, n.geom, mode, prec,
                          dx.data.data() + p * in_plane);
      }
      ctx.send(n.a, std::move(dx));
      return;
    }
    case Op::BatchNorm:
      backward_batchnorm(ctx, n, id, g);
      return;
    case Op::Flatten: {
      Tensor dx;
      dx.prec = prec;
      dx.shape = ctx.tape.val(n.a).shape;
      dx.data = g.data;
      ctx.send(n.a, std::move(dx));
      return;
    }
    case Op::SoftmaxCE: {
      const Tensor& l = ctx.tape.val(n.a);
      size_t nb = l.shape[0], k = l.shape[1];
      double c = g.data[0];
      if (n.mean_reduction) c = fp_div(c, static_cast<double>(nb), prec);
      Tensor dl = Tensor::zeros(l.shape, prec);
      for (size_t r = 0; r < nb; ++r) {
        size_t y = static_cast<size_t>(n.labels[r]);
        for (size_t j = 0; j < k; ++j) {
          double p = n.aux.data[r * k + j];
          double centered = (j == y) ? fp_sub(p, 1.0, prec) : p;
          dl.data[r * k + j] = fp_mul(centered, c, prec);
        }
      }
      ctx.send(n.a, std::move(dl));
      return;
    }
  }
  throw Error(ErrorKind::Internal, "unhandled op in backward");
}

}  // namespace

Gradient backprop(const Tape& tape, const NonsmoothPolicy& policy,
                  const ReductionOrder& order, const std::vector<int>& wrt) {
  policy.validate();
  NSAD_CHECK(tape.root >= 0, ErrorKind::Internal, "tape has no root");
  const size_t count = tape.nodes.size();
  NSAD_CHECK(tape.nodes[static_cast<size_t>(tape.root)].val.size() == 1, ErrorKind::Internal,
             "backprop requires a scalar-valued root");

  Gradient out;
  for (const Node& n : tape.nodes) {
    for (double v : n.val.data) {
      if (!std::isfinite(v)) { out.nonfinite = true; break; }
    }
    if (out.nonfinite) break;
  }

  BackCtx ctx{tape, policy, order, {}, {}};
  ctx.contrib.resize(count);
  ctx.need.assign(count, 0);
  for (size_t i = 0; i < count; ++i)
    if (tape.nodes[i].op != Op::Leaf) ctx.need[i] = 1;
  for (int id : wrt) {
    NSAD_CHECK(id >= 0 && static_cast<size_t>(id) < count, ErrorKind::Internal,
               "gradient requested for an id outside the tape");
    ctx.need[static_cast<size_t>(id)] = 1;
  }

  ctx.contrib[static_cast<size_t>(tape.root)].push_back(Tensor::scalar(1.0, tape.prec));

  std::vector<char> requested(count, 0);
  for (int id : wrt) requested[static_cast<size_t>(id)] = 1;
  std::vector<Tensor> adjoint(count);
  std::vector<uint32_t> positions;
  for (size_t ri = count; ri-- > 0;) {
    auto& list = ctx.contrib[ri];
    if (list.empty()) continue;
    Tensor adj;
    if (list.size() == 1) {
      adj = std::move(list[0]);
    } else {
      // Contributions arrive in descending consumer id; fold ascending, or in
      // a seed-derived permutation when the order is Shuffled.
      positions.resize(list.size());
      for (size_t k = 0; k < list.size(); ++k)
        positions[k] = static_cast<uint32_t>(list.size() - 1 - k);
      if (!order.is_sequential()) {
        SplitMix64 gen(mix_seed(order.seed, 0xFA17F0ULL + ri));
        for (size_t i = positions.size(); i > 1; --i) {
          size_t j = static_cast<size_t>(gen.bounded(i));
          std::swap(positions[i - 1], positions[j]);
        }
      }
      adj = Tensor::zeros(tape.nodes[ri].val.shape, tape.prec);
      for (uint32_t p : positions) {
        const Tensor& c = list[p];
        for (size_t e = 0; e < adj.data.size(); ++e)
          adj.data[e] = fp_add(adj.data[e], c.data[e], tape.prec);
      }
    }
    list.clear();
    list.shrink_to_fit();
    if (tape.nodes[ri].op == Op::Leaf) {
      adjoint[ri] = std::move(adj);
    } else {
      if (requested[ri]) adjoint[ri] = adj;
      backward_node(ctx, static_cast<int>(ri), adj);
    }
  }

  out.grads.reserve(wrt.size());
  for (int id : wrt) {
    Tensor& a = adjoint[static_cast<size_t>(id)];
    if (a.size() == 0) a = Tensor::zeros(tape.val(id).shape, tape.prec);
    out.grads.push_back(a);
  }
  return out;
}

GradCheckReport grad_check(const std::function<double(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& at, const std::vector<Tensor>& analytic,
                           double h, double tol, int samples_per_tensor, uint64_t seed,
                           const std::function<bool()>& touched_nonsmooth) {
  NSAD_CHECK(at.size() == analytic.size(), ErrorKind::Internal,
             "grad_check: parameter/gradient arity mismatch");
  GradCheckReport report;
  if (touched_nonsmooth) {
    f(at);  // evaluate once at the base point so the probe flags are fresh
    if (touched_nonsmooth()) {
      report.nonsmooth_skipped = true;
      return report;
    }
  }
  std::vector<Tensor> work = at;
  for (size_t t = 0; t < at.size(); ++t) {
    size_t n = at[t].size();
    if (n == 0) continue;
    SplitMix64 gen(mix_seed(seed, t));
    size_t budget = std::min<size_t>(static_cast<size_t>(samples_per_tensor), n);
    for (size_t s = 0; s < budget; ++s) {
      size_t i = (budget == n) ? s : static_cast<size_t>(gen.bounded(n));
      double keep = work[t].data[i];
      work[t].data[i] = keep + h;
      double up = f(work);
      work[t].data[i] = keep - h;
      double down = f(work);
      work[t].data[i] = keep;
      double fd = (up - down) / (2.0 * h);
      double a = analytic[t].data[i];
      double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1.0});
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.evaluated;
    }
  }
  report.pass = !report.nonsmooth_skipped && report.max_rel_err <= tol;
  return report;
}

}  // namespace nsad
