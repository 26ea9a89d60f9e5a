// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "nonsmooth.hpp"

#include <cmath>
#include <sstream>

#include "error.hpp"

namespace nsad {

const char* pool_mode_name(PoolMode m) {
  switch (m) {
    case PoolMode::Native: return "native";
    case PoolMode::Minimal: return "minimal";
    case PoolMode::Hybrid: return "hybrid";
    case PoolMode::NormZero: return "norm-zero";
    default: return "norm-uniform";
  }
}

NonsmoothPolicy NonsmoothPolicy::native(double relu_s) { return {relu_s, PoolMode::Native, 0.0}; }
NonsmoothPolicy NonsmoothPolicy::minimal(double relu_s) { return {relu_s, PoolMode::Minimal, 0.0}; }
NonsmoothPolicy NonsmoothPolicy::hybrid(double beta, double relu_s) {
  return {relu_s, PoolMode::Hybrid, beta};
}
NonsmoothPolicy NonsmoothPolicy::norm_zero() { return {0.0, PoolMode::NormZero, 0.0}; }
NonsmoothPolicy NonsmoothPolicy::norm_uniform() { return {0.0, PoolMode::NormUniform, 0.0}; }

void NonsmoothPolicy::validate() const {
  NSAD_CHECK(relu_s >= 0.0 && relu_s <= 1.0, ErrorKind::Config,
             "relu'(0) selection must lie in [0,1]");
  NSAD_CHECK(!(pool_mode == PoolMode::Hybrid) || beta >= 0.0, ErrorKind::Config,
             "hybrid blend weight must be >= 0");
}

std::string NonsmoothPolicy::name() const {
  std::ostringstream os;
  os << pool_mode_name(pool_mode);
  if (pool_mode == PoolMode::Hybrid) os << ':' << beta;
  if (relu_s != 0.0) os << "/relu0=" << relu_s;
  return os.str();
}

void PoolGeometry::validate() const {
  NSAD_CHECK(win_h > 0 && win_w > 0, ErrorKind::Config, "pooling window must be nonempty");
  NSAD_CHECK(in_h >= win_h && in_w >= win_w, ErrorKind::Config,
             "pooling window larger than its input plane");
  NSAD_CHECK(window_size() <= 0xffff, ErrorKind::Config, "pooling window too large");
}

void maxpool_forward(const double* x, const PoolGeometry& g, double* y, ActiveSet* active) {
  const size_t oh = g.out_h(), ow = g.out_w();
  for (size_t i = 0; i < oh; ++i) {
    for (size_t j = 0; j < ow; ++j) {
      const double* base = x + (i * g.win_h) * g.in_w + j * g.win_w;
      double best = base[0];
      for (size_t u = 0; u < g.win_h; ++u) {
        for (size_t v = 0; v < g.win_w; ++v) {
          double val = base[u * g.in_w + v];
          if (val > best) best = val;
        }
      }
      ActiveSet& a = active[i * ow + j];
      a.idx.clear();
      for (size_t u = 0; u < g.win_h; ++u) {
        for (size_t v = 0; v < g.win_w; ++v) {
          if (base[u * g.in_w + v] == best)
            a.idx.push_back(static_cast<uint16_t>(u * g.win_w + v));
        }
      }
      y[i * ow + j] = best;
    }
  }
}

void maxpool_backward(const double* gy, const ActiveSet* active, const PoolGeometry& g,
                      PoolMode mode, double beta, Precision prec, double* gx) {
  NSAD_CHECK(mode == PoolMode::Native || mode == PoolMode::Minimal || mode == PoolMode::Hybrid,
             ErrorKind::Config, "max pooling backward requires native, minimal, or hybrid mode");
  const size_t oh = g.out_h(), ow = g.out_w();
  PoolMode eff = mode;
  if (mode == PoolMode::Hybrid) {
    if (beta == 0.0) eff = PoolMode::Native;
    else if (beta == 1.0) eff = PoolMode::Minimal;
  }
  for (size_t i = 0; i < oh; ++i) {
    for (size_t j = 0; j < ow; ++j) {
      const ActiveSet& a = active[i * ow + j];
      double gv = gy[i * ow + j];
      double* base = gx + (i * g.win_h) * g.in_w + j * g.win_w;
      auto put = [&](uint16_t wpos, double v) {
        base[(wpos / g.win_w) * g.in_w + (wpos % g.win_w)] = v;
      };
      if (a.count() == 1 || eff == PoolMode::Native) {
        put(a.first(), gv);
        continue;
      }
      if (eff == PoolMode::Minimal) {
        double share = fp_div(gv, static_cast<double>(a.count()), prec);
        for (uint16_t wpos : a.idx) put(wpos, share);
        continue;
      }
      // Hybrid with beta not in {0,1}: every attaining index receives
      // beta*g/|A|, the first additionally (1-beta)*g.
      double share = fp_div(fp_mul(round_to(beta, prec), gv, prec),
                            static_cast<double>(a.count()), prec);
      double first_extra = fp_mul(fp_sub(1.0, round_to(beta, prec), prec), gv, prec);
      for (uint16_t wpos : a.idx) put(wpos, share);
      put(a.first(), fp_add(first_extra, share, prec));
    }
  }
}

void normpool_forward(const double* x, const PoolGeometry& g, Precision prec, double* y) {
  const size_t oh = g.out_h(), ow = g.out_w();
  for (size_t i = 0; i < oh; ++i) {
    for (size_t j = 0; j < ow; ++j) {
      const double* base = x + (i * g.win_h) * g.in_w + j * g.win_w;
      double acc = 0.0;
      for (size_t u = 0; u < g.win_h; ++u) {
        for (size_t v = 0; v < g.win_w; ++v) {
          double val = base[u * g.in_w + v];
          acc = fp_add(acc, fp_mul(val, val, prec), prec);
        }
      }
      y[i * ow + j] = fp_sqrt(acc, prec);
    }
  }
}

void normpool_backward(const double* x, const double* y, const double* gy,
                       const PoolGeometry& g, PoolMode mode, Precision prec, double* gx) {
  NSAD_CHECK(mode == PoolMode::NormZero || mode == PoolMode::NormUniform, ErrorKind::Config,
             "norm pooling backward requires a norm mode");
  const size_t oh = g.out_h(), ow = g.out_w();
  for (size_t i = 0; i < oh; ++i) {
    for (size_t j = 0; j < ow; ++j) {
      double norm = y[i * ow + j];
      double gv = gy[i * ow + j];
      const double* xb = x + (i * g.win_h) * g.in_w + j * g.win_w;
      double* gb = gx + (i * g.win_h) * g.in_w + j * g.win_w;
      if (norm == 0.0) {
        if (mode == PoolMode::NormZero) continue;  // zero selection, gx already 0
        double unit = fp_div(1.0, fp_sqrt(static_cast<double>(g.window_size()), prec), prec);
        double v = fp_mul(gv, unit, prec);
        for (size_t u = 0; u < g.win_h; ++u)
          for (size_t w = 0; w < g.win_w; ++w) gb[u * g.in_w + w] = v;
        continue;
      }
      for (size_t u = 0; u < g.win_h; ++u) {
        for (size_t w = 0; w < g.win_w; ++w) {
          double dir = fp_div(xb[u * g.in_w + w], norm, prec);
          gb[u * g.in_w + w] = fp_mul(dir, gv, prec);
        }
      }
    }
  }
}

}  // namespace nsad
