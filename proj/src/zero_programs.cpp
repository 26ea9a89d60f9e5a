// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "zero_programs.hpp"

#include "error.hpp"
#include "tape.hpp"

namespace nsad {

const char* zero_variant_name(ZeroVariant v) {
  switch (v) {
    case ZeroVariant::MaxPair: return "max-pair";
    case ZeroVariant::ReluBuilt: return "relu-built";
  }
  return "?";
}

ZeroVariant zero_variant_from_name(const std::string& name) {
  if (name == "max-pair") return ZeroVariant::MaxPair;
  if (name == "relu-built") return ZeroVariant::ReluBuilt;
  throw Error(ErrorKind::Config, "unknown zero-program variant '" + name +
                                     "' (expected max-pair or relu-built)");
}

namespace {

// max(a,b) = (a+b)/2 + relu((a-b)/2) + relu((b-a)/2). At a == b both relu
// arguments are exactly zero; s1 is the relu'(0) selection of the first one.
int max_of_two(Tape& tape, int a, int b, double s1) {
  int mean = tape.scale(tape.add(a, b), 0.5);
  int r1 = tape.relu_fixed(tape.scale(tape.sub(a, b), 0.5), s1);
  int r2 = tape.relu_fixed(tape.scale(tape.sub(b, a), 0.5), 0.0);
  return tape.add(tape.add(mean, r1), r2);
}

}  // namespace

ZeroTableRow zero_program_eval(ZeroVariant variant, const std::vector<double>& x, double t,
                               Precision prec) {
  NSAD_CHECK(!x.empty(), ErrorKind::Config, "zero program needs a non-empty vector");
  ZeroTableRow row;
  row.t = t;
  Tape tape(prec);
  int t_leaf = tape.leaf(Tensor::scalar(t, prec), true);
  int root = -1;
  if (variant == ZeroVariant::MaxPair) {
    Tensor xv = Tensor::from({1, 1, 1, x.size()}, x, prec);
    int u = tape.scale_vec_const(t_leaf, xv);
    int m_native = tape.maxpool_fixed(u, 1, x.size(), PoolMode::Native);
    int m_minimal = tape.maxpool_fixed(u, 1, x.size(), PoolMode::Minimal);
    root = tape.sub(m_native, m_minimal);
  } else {
    NSAD_CHECK(x.size() == 4, ErrorKind::Config,
               "relu-built zero program expects exactly 4 vector entries");
    Tensor xv = Tensor::from({x.size()}, x, prec);
    int u = tape.scale_vec_const(t_leaf, xv);
    int u0 = tape.index(u, 0), u1 = tape.index(u, 1);
    int u2 = tape.index(u, 2), u3 = tape.index(u, 3);
    // Same tournament twice; only the relu'(0) selection differs.
    int m1 = max_of_two(tape, max_of_two(tape, u0, u1, 0.0), max_of_two(tape, u2, u3, 0.0), 0.0);
    int m2 = max_of_two(tape, max_of_two(tape, u0, u1, 1.0), max_of_two(tape, u2, u3, 1.0), 1.0);
    root = tape.sub(m1, m2);
  }
  tape.set_root(root);
  row.value = tape.val(root).data[0];
  Gradient g = backprop(tape, NonsmoothPolicy::native(), ReductionOrder::sequential(), {t_leaf});
  row.derivative = g.grads[0].data[0];
  return row;
}

std::vector<ZeroTableRow> zero_table(ZeroVariant variant, const std::vector<double>& x,
                                     const std::vector<double>& ts, Precision prec) {
  std::vector<ZeroTableRow> rows;
  rows.reserve(ts.size());
  for (double t : ts) rows.push_back(zero_program_eval(variant, x, t, prec));
  return rows;
}

}  // namespace nsad
