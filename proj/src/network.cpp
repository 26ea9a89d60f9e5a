// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "network.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace nsad {

bool NetworkSpec::has_batchnorm() const {
  for (const LayerDesc& l : layers)
    if (l.kind == LayerKind::BatchNorm) return true;
  return false;
}

namespace {

struct ShapeState {
  bool flat = false;
  size_t c = 0, h = 0, w = 0;  // when !flat
  size_t features = 0;         // when flat
};

ShapeState chain_shapes(const NetworkSpec& spec) {
  ShapeState s;
  s.c = spec.in_channels;
  s.h = spec.in_h;
  s.w = spec.in_w;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        NSAD_CHECK(!s.flat, ErrorKind::Config, "conv layer after flatten");
        NSAD_CHECK(l.kernel >= 1 && l.kernel <= s.h && l.kernel <= s.w, ErrorKind::Config,
                   "conv kernel exceeds input extent at layer " + std::to_string(i));
        s.c = l.out;
        s.h = s.h - l.kernel + 1;
        s.w = s.w - l.kernel + 1;
        break;
      case LayerKind::Pool:
        NSAD_CHECK(!s.flat, ErrorKind::Config, "pool layer after flatten");
        NSAD_CHECK(l.win >= 1 && l.win <= s.h && l.win <= s.w, ErrorKind::Config,
                   "pool window exceeds input extent at layer " + std::to_string(i));
        s.h /= l.win;
        s.w /= l.win;
        break;
      case LayerKind::Relu:
      case LayerKind::BatchNorm:
        break;
      case LayerKind::Flatten:
        NSAD_CHECK(!s.flat, ErrorKind::Config, "repeated flatten");
        s.flat = true;
        s.features = s.c * s.h * s.w;
        break;
      case LayerKind::Linear:
        NSAD_CHECK(s.flat, ErrorKind::Config,
                   "linear layer requires flatten first (layer " + std::to_string(i) + ")");
        s.features = l.out;
        break;
    }
  }
  NSAD_CHECK(s.flat, ErrorKind::Config, "network must end in flattened features");
  return s;
}

}  // namespace

void NetworkSpec::validate() const {
  NSAD_CHECK(!layers.empty(), ErrorKind::Config, "network has no layers");
  ShapeState s = chain_shapes(*this);
  NSAD_CHECK(s.features == classes, ErrorKind::Config,
             "final layer produces " + std::to_string(s.features) + " features, expected " +
                 std::to_string(classes) + " classes");
}

NetworkSpec NetworkSpec::lenet(Precision prec, bool batchnorm, PoolKind pool) {
  NetworkSpec s;
  s.name = batchnorm ? "lenet-bn" : "lenet";
  if (pool == PoolKind::Norm) s.name += "-norm";
  s.prec = prec;
  s.pool_kind = pool;
  auto block = [&](size_t ch, size_t k) {
    s.layers.push_back({LayerKind::Conv, ch, k, 0});
    if (batchnorm) s.layers.push_back({LayerKind::BatchNorm, 0, 0, 0});
    s.layers.push_back({LayerKind::Pool, 0, 0, 2});
    s.layers.push_back({LayerKind::Relu, 0, 0, 0});
  };
  block(6, 5);
  block(16, 5);
  s.layers.push_back({LayerKind::Flatten, 0, 0, 0});
  s.layers.push_back({LayerKind::Linear, 120, 0, 0});
  s.layers.push_back({LayerKind::Relu, 0, 0, 0});
  s.layers.push_back({LayerKind::Linear, 84, 0, 0});
  s.layers.push_back({LayerKind::Relu, 0, 0, 0});
  s.layers.push_back({LayerKind::Linear, 10, 0, 0});
  return s;
}

NetworkSpec NetworkSpec::mini(Precision prec, int depth, bool batchnorm, PoolKind pool) {
  NSAD_CHECK(depth >= 1 && depth <= 3, ErrorKind::Config, "mini network depth must be 1..3");
  NetworkSpec s;
  s.name = "mini" + std::to_string(depth) + (batchnorm ? "-bn" : "");
  if (pool == PoolKind::Norm) s.name += "-norm";
  s.prec = prec;
  s.pool_kind = pool;
  const size_t channels[3] = {6, 16, 32};
  const size_t kernels[3] = {5, 5, 3};
  for (int i = 0; i < depth; ++i) {
    s.layers.push_back({LayerKind::Conv, channels[i], kernels[i], 0});
    if (batchnorm) s.layers.push_back({LayerKind::BatchNorm, 0, 0, 0});
    s.layers.push_back({LayerKind::Pool, 0, 0, 2});
    s.layers.push_back({LayerKind::Relu, 0, 0, 0});
  }
  s.layers.push_back({LayerKind::Flatten, 0, 0, 0});
  s.layers.push_back({LayerKind::Linear, 10, 0, 0});
  return s;
}

NetworkSpec NetworkSpec::mlp(Precision prec, const std::vector<size_t>& hidden) {
  NetworkSpec s;
  s.name = "mlp";
  for (size_t h : hidden) s.name += "-" + std::to_string(h);
  s.prec = prec;
  s.layers.push_back({LayerKind::Flatten, 0, 0, 0});
  for (size_t h : hidden) {
    s.layers.push_back({LayerKind::Linear, h, 0, 0});
    s.layers.push_back({LayerKind::Relu, 0, 0, 0});
  }
  s.layers.push_back({LayerKind::Linear, 10, 0, 0});
  return s;
}

NetworkSpec NetworkSpec::from_name(const std::string& name, Precision prec) {
  std::string base = name;
  PoolKind pool = PoolKind::Max;
  auto strip_suffix = [&](const std::string& suffix) {
    if (base.size() >= suffix.size() &&
        base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
      base.resize(base.size() - suffix.size());
      return true;
    }
    return false;
  };
  if (strip_suffix("-norm")) pool = PoolKind::Norm;
  bool bn = strip_suffix("-bn");
  if (base == "lenet") return lenet(prec, bn, pool);
  if (base.rfind("mini", 0) == 0 && base.size() == 5)
    return mini(prec, base[4] - '0', bn, pool);
  if (base == "mlp" && !bn) return mlp(prec, {64});
  throw Error(ErrorKind::Config,
              "unknown network '" + name +
                  "' (expected lenet, mini1..mini3, mlp; optional -bn and -norm suffixes)");
}

size_t ParameterSet::total_size() const {
  size_t n = 0;
  for (const ParamTensor& p : params) n += p.t.size();
  return n;
}

double ParameterSet::l1_norm() const {
  double acc = 0;
  for (const ParamTensor& p : params)
    if (p.trainable)
      for (double v : p.t.data) acc += std::fabs(v);
  return acc;
}

Tensor* ParameterSet::find(const std::string& name) {
  for (ParamTensor& p : params)
    if (p.name == name) return &p.t;
  for (ParamTensor& p : buffers)
    if (p.name == name) return &p.t;
  return nullptr;
}

ParameterSet init_kaiming_uniform(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  ParameterSet set;
  size_t param_index = 0;
  auto draw = [&](const std::string& name, std::vector<size_t> shape, double bound) {
    // One stream per drawn tensor; batchnorm layers draw nothing, so the
    // stream indices (hence conv/linear weights) match between -bn variants.
    SplitMix64 gen(mix_seed(seed, param_index++));
    Tensor t = Tensor::zeros(shape, spec.prec);
    for (size_t i = 0; i < t.size(); ++i)
      t.data[i] = round_to(gen.uniform(-bound, bound), spec.prec);
    set.params.push_back({name, std::move(t), true});
  };
  size_t c = spec.in_channels, hh = spec.in_h, ww = spec.in_w;
  size_t features = 0;
  int conv_n = 0, fc_n = 0, bn_n = 0;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        ++conv_n;
        size_t fan_in = c * l.kernel * l.kernel;
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::string base = "conv" + std::to_string(conv_n);
        draw(base + ".weight", {l.out, c, l.kernel, l.kernel}, bound);
        draw(base + ".bias", {l.out}, bound);
        c = l.out;
        hh -= l.kernel - 1;
        ww -= l.kernel - 1;
        break;
      }
      case LayerKind::Pool:
        hh /= l.win;
        ww /= l.win;
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten:
        features = c * hh * ww;
        break;
      case LayerKind::Linear: {
        ++fc_n;
        size_t fan_in = features;
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::string base = "fc" + std::to_string(fc_n);
        draw(base + ".weight", {l.out, fan_in}, bound);
        draw(base + ".bias", {l.out}, bound);
        features = l.out;
        break;
      }
      case LayerKind::BatchNorm: {
        ++bn_n;
        std::string base = "bn" + std::to_string(bn_n);
        set.params.push_back({base + ".gamma", Tensor::full({c}, 1.0, spec.prec), true});
        set.params.push_back({base + ".beta", Tensor::zeros({c}, spec.prec), true});
        set.buffers.push_back({base + ".running_mean", Tensor::zeros({c}, spec.prec), false});
        set.buffers.push_back(
            {base + ".running_invstd", Tensor::full({c}, 1.0, spec.prec), false});
        break;
      }
    }
  }
  return set;
}

ForwardBuild forward_loss(const NetworkSpec& spec, ParameterSet& params, const Tensor& images,
                          const std::vector<int>& labels, const ReductionOrder& fwd_order,
                          bool mean_reduction, bool train_mode) {
  spec.validate();
  NSAD_CHECK(images.rank() == 4, ErrorKind::Data, "images must be N x C x H x W");
  NSAD_CHECK(images.shape[0] == labels.size(), ErrorKind::Data,
             "image/label count mismatch: " + std::to_string(images.shape[0]) + " vs " +
                 std::to_string(labels.size()));
  NSAD_CHECK(images.shape[1] == spec.in_channels && images.shape[2] == spec.in_h &&
                 images.shape[3] == spec.in_w,
             ErrorKind::Data, "image shape does not match network input");

  ForwardBuild out(spec.prec);
  out.tape.fwd_order = fwd_order;
  out.input = out.tape.leaf(images, false);
  out.param_ids.reserve(params.params.size());
  for (ParamTensor& p : params.params) out.param_ids.push_back(out.tape.leaf(p.t, p.trainable));

  size_t next_param = 0, next_buffer = 0;
  int cur = out.input;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        int w = out.param_ids[next_param++];
        int b = out.param_ids[next_param++];
        cur = out.tape.conv2d(cur, w, b);
        break;
      }
      case LayerKind::Pool:
        cur = (spec.pool_kind == PoolKind::Max) ? out.tape.maxpool(cur, l.win, l.win)
                                                : out.tape.normpool(cur, l.win, l.win);
        break;
      case LayerKind::Relu:
        cur = out.tape.relu(cur);
        break;
      case LayerKind::BatchNorm: {
        int gamma = out.param_ids[next_param++];
        int beta = out.param_ids[next_param++];
        Tensor& rm = params.buffers[next_buffer++].t;
        Tensor& ri = params.buffers[next_buffer++].t;
        cur = out.tape.batchnorm(cur, gamma, beta, &rm, &ri, train_mode, spec.bn_eps,
                                 spec.bn_momentum);
        break;
      }
      case LayerKind::Flatten:
        cur = out.tape.flatten(cur);
        break;
      case LayerKind::Linear: {
        int w = out.param_ids[next_param++];
        int b = out.param_ids[next_param++];
        cur = out.tape.linear(cur, w, b);
        break;
      }
    }
  }
  out.loss = out.tape.softmax_ce(cur, labels, mean_reduction);
  out.tape.set_root(out.loss);
  return out;
}

Tensor forward_logits(const NetworkSpec& spec, ParameterSet& params, const Tensor& images) {
  // Reuse the loss builder with dummy labels, then read the logits node
  // (parent of the loss). Eval-mode batchnorm, no buffer update.
  std::vector<int> dummy(images.shape[0], 0);
  ForwardBuild fb = forward_loss(spec, params, images, dummy, ReductionOrder::sequential(),
                                 true, false);
  const Node& loss_node = fb.tape.nodes[static_cast<size_t>(fb.loss)];
  return fb.tape.val(loss_node.a);
}

std::vector<int> predict(const NetworkSpec& spec, ParameterSet& params, const Tensor& images) {
  Tensor logits = forward_logits(spec, params, images);
  size_t n = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(n, 0);
  for (size_t r = 0; r < n; ++r) {
    const double* row = &logits.data[r * k];
    size_t best = 0;
    for (size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;  // first index wins ties
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const NetworkSpec& spec, ParameterSet& params, const Tensor& images,
                const std::vector<int>& labels, size_t eval_batch) {
  size_t n = labels.size();
  NSAD_CHECK(n > 0, ErrorKind::Data, "accuracy over an empty set");
  size_t c = images.shape[1], h = images.shape[2], w = images.shape[3];
  size_t plane = c * h * w;
  size_t correct = 0;
  for (size_t start = 0; start < n; start += eval_batch) {
    size_t count = std::min(eval_batch, n - start);
    Tensor chunk;
    chunk.prec = images.prec;
    chunk.shape = {count, c, h, w};
    chunk.data.assign(images.data.begin() + static_cast<std::ptrdiff_t>(start * plane),
                      images.data.begin() + static_cast<std::ptrdiff_t>((start + count) * plane));
    std::vector<int> pred = predict(spec, params, chunk);
    for (size_t i = 0; i < count; ++i)
      if (pred[i] == labels[start + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace nsad
