// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "tensor.hpp"

#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace nsad {

size_t Tensor::numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<size_t> shape, Precision p) {
  Tensor t;
  t.prec = p;
  t.data.assign(numel(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double value, Precision p) {
  Tensor t;
  t.prec = p;
  t.data.assign(numel(shape), round_to(value, p));
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double value, Precision p) { return full({1}, value, p); }

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> values, Precision p) {
  NSAD_CHECK(numel(shape) == values.size(), ErrorKind::Internal,
             "tensor literal size does not match its shape");
  Tensor t;
  t.prec = p;
  t.shape = std::move(shape);
  t.data = std::move(values);
  for (double& v : t.data) v = round_to(v, p);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

ReductionOrder ReductionOrder::stream(uint64_t tag) const {
  if (is_sequential()) return *this;
  return shuffled(mix_seed(seed, tag));
}

namespace {

thread_local std::vector<uint32_t> tl_perm;

template <class M>
double reduce_kernel(const double* v, size_t n, const ReductionOrder& order) {
  typename M::S acc = M::load(0.0);
  if (order.is_sequential()) {
    for (size_t i = 0; i < n; ++i) acc = M::add(acc, M::load(v[i]));
  } else {
    fill_permutation(tl_perm, n, order.seed);
    for (size_t i = 0; i < n; ++i) acc = M::add(acc, M::load(v[tl_perm[i]]));
  }
  return M::store(acc);
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  NSAD_CHECK(a.same_shape(b), ErrorKind::Internal,
             std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  NSAD_CHECK(a.prec == b.prec, ErrorKind::Internal,
             std::string(what) + ": operand precisions differ");
}

template <class M>
void matmul_kernel(const Tensor& a, const Tensor& b, Tensor& out,
                   const ReductionOrder& order) {
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      ReductionOrder ord = order.stream(i * n + j);
      typename M::S acc = M::load(0.0);
      if (ord.is_sequential()) {
        for (size_t t = 0; t < k; ++t)
          acc = M::add(acc, M::mul(M::load(a.data[i * k + t]), M::load(b.data[t * n + j])));
      } else {
        fill_permutation(tl_perm, k, ord.seed);
        for (size_t t = 0; t < k; ++t) {
          size_t u = tl_perm[t];
          acc = M::add(acc, M::mul(M::load(a.data[i * k + u]), M::load(b.data[u * n + j])));
        }
      }
      out.data[i * n + j] = M::store(acc);
    }
  }
}

template <class M>
void conv2d_kernel(const Tensor& x, const Tensor& w, const Tensor& bias, Tensor& out,
                   const ReductionOrder& order) {
  size_t nb = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
  size_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  size_t oh = h - kh + 1, ow = wd - kw + 1;
  size_t kvol = ci * kh * kw;
  const bool with_bias = bias.size() > 0;
  size_t out_idx = 0;
  for (size_t n = 0; n < nb; ++n) {
    for (size_t o = 0; o < co; ++o) {
      typename M::S bval = M::load(with_bias ? bias.data[o] : 0.0);
      for (size_t y = 0; y < oh; ++y) {
        for (size_t z = 0; z < ow; ++z, ++out_idx) {
          ReductionOrder ord = order.stream(out_idx);
          typename M::S acc = M::load(0.0);
          if (ord.is_sequential()) {
            for (size_t c = 0; c < ci; ++c) {
              const double* xp = &x.data[((n * ci + c) * h + y) * wd + z];
              const double* wp = &w.data[((o * ci + c) * kh) * kw];
              for (size_t u = 0; u < kh; ++u) {
                for (size_t v = 0; v < kw; ++v) {
                  acc = M::add(acc, M::mul(M::load(xp[u * wd + v]), M::load(wp[u * kw + v])));
                }
              }
            }
          } else {
            fill_permutation(tl_perm, kvol, ord.seed);
            for (size_t t = 0; t < kvol; ++t) {
              size_t f = tl_perm[t];
              size_t c = f / (kh * kw), r = f % (kh * kw);
              size_t u = r / kw, v = r % kw;
              acc = M::add(acc, M::mul(M::load(x.data[((n * ci + c) * h + y + u) * wd + z + v]),
                                       M::load(w.data[((o * ci + c) * kh + u) * kw + v])));
            }
          }
          if (with_bias) acc = M::add(acc, bval);
          out.data[out_idx] = M::store(acc);
        }
      }
    }
  }
}

}  // namespace

double reduce_sum(const Tensor& t, const ReductionOrder& order) {
  NSAD_CHECK(t.size() > 0, ErrorKind::Internal, "empty reduction");
  return dispatch_precision(t.prec, [&]<class M>() {
    return reduce_kernel<M>(t.data.data(), t.size(), order);
  });
}

Tensor cast(const Tensor& t, Precision to) {
  Tensor out;
  out.shape = t.shape;
  out.prec = to;
  out.data.resize(t.size());
  for (size_t i = 0; i < t.size(); ++i) out.data[i] = round_to(t.data[i], to);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  Tensor out = Tensor::zeros(a.shape, a.prec);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = fp_add(a.data[i], b.data[i], a.prec);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape, a.prec);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = fp_sub(a.data[i], b.data[i], a.prec);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape, a.prec);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = fp_mul(a.data[i], b.data[i], a.prec);
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, const ReductionOrder& order) {
  NSAD_CHECK(a.rank() == 2 && b.rank() == 2, ErrorKind::Internal, "matmul expects rank-2 operands");
  NSAD_CHECK(a.shape[1] == b.shape[0], ErrorKind::Internal,
             "matmul: inner dimensions differ " + a.shape_str() + " vs " + b.shape_str());
  NSAD_CHECK(a.prec == b.prec, ErrorKind::Internal, "matmul: operand precisions differ");
  Tensor out = Tensor::zeros({a.shape[0], b.shape[1]}, a.prec);
  dispatch_precision(a.prec, [&]<class M>() { matmul_kernel<M>(a, b, out, order); });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              const ReductionOrder& order) {
  NSAD_CHECK(x.rank() == 4 && w.rank() == 4, ErrorKind::Internal, "conv2d expects rank-4 operands");
  NSAD_CHECK(x.shape[1] == w.shape[1], ErrorKind::Internal, "conv2d: channel counts differ");
  NSAD_CHECK(x.shape[2] >= w.shape[2] && x.shape[3] >= w.shape[3], ErrorKind::Internal,
             "conv2d: kernel larger than input");
  NSAD_CHECK(x.prec == w.prec, ErrorKind::Internal, "conv2d: operand precisions differ");
  if (bias.size() > 0)
    NSAD_CHECK(bias.size() == w.shape[0], ErrorKind::Internal, "conv2d: bias length mismatch");
  Tensor out = Tensor::zeros(
      {x.shape[0], w.shape[0], x.shape[2] - w.shape[2] + 1, x.shape[3] - w.shape[3] + 1}, x.prec);
  dispatch_precision(x.prec, [&]<class M>() { conv2d_kernel<M>(x, w, bias, out, order); });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const ReductionOrder& order) {
  NSAD_CHECK(x.rank() == 2 && w.rank() == 2, ErrorKind::Internal,
             "2-d conv2d expects rank-2 operands");
  Tensor x4;
  x4.shape = {1, 1, x.shape[0], x.shape[1]};
  x4.data = x.data;
  x4.prec = x.prec;
  Tensor w4;
  w4.shape = {1, 1, w.shape[0], w.shape[1]};
  w4.data = w.data;
  w4.prec = w.prec;
  Tensor out4 = conv2d(x4, w4, Tensor{}, order);
  Tensor out;
  out.shape = {out4.shape[2], out4.shape[3]};
  out.data = std::move(out4.data);
  out.prec = x.prec;
  return out;
}

}  // namespace nsad
