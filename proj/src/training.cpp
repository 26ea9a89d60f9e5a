// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "training.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace nsad {

const char* optimizer_name(Optimizer o) { return o == Optimizer::SGD ? "sgd" : "adam"; }

Optimizer optimizer_from_name(const std::string& name) {
  if (name == "sgd") return Optimizer::SGD;
  if (name == "adam") return Optimizer::Adam;
  throw Error(ErrorKind::Config, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  NSAD_CHECK(gamma > 0, ErrorKind::Config, "step size gamma must be > 0");
  NSAD_CHECK(alpha_q > 0, ErrorKind::Config, "alpha_q must be > 0");
  NSAD_CHECK(batch >= 1, ErrorKind::Config, "batch size must be >= 1");
  NSAD_CHECK(epochs >= 1, ErrorKind::Config, "epochs must be >= 1");
  policy.validate();
}

void sgd_apply(Tensor& param, const Tensor& grad, double gamma, double alpha_q,
               size_t batch_size, Precision prec) {
  double step = round_to(gamma * alpha_q / static_cast<double>(batch_size), prec);
  for (size_t i = 0; i < param.size(); ++i)
    param.data[i] = fp_sub(param.data[i], fp_mul(step, grad.data[i], prec), prec);
}

AdamState adam_init(const ParameterSet& params, Precision model_prec, bool strict_b16) {
  AdamState st;
  st.prec = (model_prec == Precision::B16 && !strict_b16) ? Precision::B32 : model_prec;
  st.t = 0;
  for (const ParamTensor& p : params.params) {
    st.m.push_back(Tensor::zeros(p.t.shape, st.prec));
    st.v.push_back(Tensor::zeros(p.t.shape, st.prec));
  }
  return st;
}

void adam_apply(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state,
                const TrainConfig& cfg, Precision model_prec) {
  const Precision sp = state.prec;
  ++state.t;
  double b1 = round_to(cfg.adam_beta1, sp), b2 = round_to(cfg.adam_beta2, sp);
  double one_m_b1 = fp_sub(1.0, b1, sp), one_m_b2 = fp_sub(1.0, b2, sp);
  double bc1 = round_to(1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t)), sp);
  double bc2 = round_to(1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t)), sp);
  double eps = round_to(cfg.adam_eps, sp);
  double lr = round_to(cfg.gamma * cfg.alpha_q / static_cast<double>(cfg.batch), sp);
  for (size_t p = 0; p < params.params.size(); ++p) {
    Tensor& theta = params.params[p].t;
    const Tensor& g = grads[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (size_t i = 0; i < theta.size(); ++i) {
      double gi = round_to(g.data[i], sp);
      m.data[i] = fp_add(fp_mul(b1, m.data[i], sp), fp_mul(one_m_b1, gi, sp), sp);
      v.data[i] = fp_add(fp_mul(b2, v.data[i], sp), fp_mul(one_m_b2, fp_mul(gi, gi, sp), sp), sp);
      double mhat = fp_div(m.data[i], bc1, sp);
      double vhat = fp_div(v.data[i], bc2, sp);
      double upd = fp_div(fp_mul(lr, mhat, sp), fp_add(fp_sqrt(vhat, sp), eps, sp), sp);
      theta.data[i] = fp_sub(theta.data[i], round_to(upd, model_prec), model_prec);
    }
  }
}

namespace {

std::vector<Tensor> snapshot_trainable(const ParameterSet& params) {
  std::vector<Tensor> out;
  for (const ParamTensor& p : params.params)
    if (p.trainable) out.push_back(p.t);
  return out;
}

double grad_l1(const std::vector<Tensor>& grads) {
  double acc = 0;
  for (const Tensor& g : grads)
    for (double v : g.data) acc += std::fabs(v);
  return acc;
}

}  // namespace

TrainTrace train(const NetworkSpec& spec, ParameterSet& params, const Dataset& train_data,
                 const Dataset& test_data, const TrainConfig& cfg) {
  cfg.validate();
  NSAD_CHECK(train_data.size() >= cfg.batch, ErrorKind::Data,
             "training set smaller than one batch");
  TrainTrace trace;
  size_t n = train_data.size();
  size_t steps_per_epoch = n / cfg.batch;
  AdamState adam;
  if (cfg.optimizer == Optimizer::Adam) adam = adam_init(params, spec.prec, cfg.strict_b16);

  std::vector<uint32_t> perm;
  bool first_step = true;
  for (size_t epoch = 0; epoch < cfg.epochs && !trace.halted; ++epoch) {
    fill_permutation(perm, n, mix_seed(cfg.seed, 0xE0000 + epoch));
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0;
    size_t seen = 0;
    for (size_t step = 0; step < steps_per_epoch; ++step) {
      Tensor bi;
      bi.prec = train_data.images.prec;
      size_t c = train_data.images.shape[1], h = train_data.images.shape[2],
             w = train_data.images.shape[3];
      size_t plane = c * h * w;
      bi.shape = {cfg.batch, c, h, w};
      bi.data.resize(cfg.batch * plane);
      std::vector<int> bl(cfg.batch);
      for (size_t i = 0; i < cfg.batch; ++i) {
        size_t src = perm[step * cfg.batch + i];
        std::copy_n(&train_data.images.data[src * plane], plane, &bi.data[i * plane]);
        bl[i] = train_data.labels[src];
      }

      ForwardBuild fb = forward_loss(spec, params, bi, bl, ReductionOrder::sequential(),
                                     /*mean_reduction=*/false, /*train_mode=*/true);
      double batch_loss = fb.tape.val(fb.loss).data[0];
      double mean_loss = batch_loss / static_cast<double>(cfg.batch);
      if (first_step) {
        trace.initial_loss = mean_loss;
        first_step = false;
      }
      if (!std::isfinite(batch_loss)) {
        trace.nonfinite = true;
        trace.halted = true;
        stats.nonfinite = true;
        break;
      }
      loss_sum += batch_loss;
      seen += cfg.batch;

      Gradient g = backprop(fb.tape, cfg.policy, ReductionOrder::sequential(), fb.param_ids);
      if (g.nonfinite) {
        trace.nonfinite = true;
        trace.halted = true;
        stats.nonfinite = true;
        break;
      }
      if (step == 0) stats.grad_l1 = grad_l1(g.grads);

      if (cfg.optimizer == Optimizer::SGD) {
        for (size_t p = 0; p < params.params.size(); ++p)
          sgd_apply(params.params[p].t, g.grads[p], cfg.gamma, cfg.alpha_q, cfg.batch,
                    spec.prec);
      } else {
        adam_apply(params, g.grads, adam, cfg, spec.prec);
      }
      bool bad = false;
      for (const ParamTensor& p : params.params)
        for (double v : p.t.data)
          if (!std::isfinite(v)) { bad = true; break; }
      if (bad) {
        trace.nonfinite = true;
        trace.halted = true;
        stats.nonfinite = true;
        break;
      }
    }
    if (seen > 0) stats.train_loss = loss_sum / static_cast<double>(seen);
    if (trace.initial_loss > 0 && stats.train_loss > 1000.0 * trace.initial_loss)
      trace.diverged = true;
    stats.diverged = trace.diverged;
    stats.nonfinite = stats.nonfinite || trace.nonfinite;
    stats.param_l1 = params.l1_norm();
    if (!trace.halted)
      stats.test_accuracy =
          accuracy(spec, params, test_data.images, test_data.labels, cfg.eval_batch);
    trace.final_accuracy = stats.test_accuracy;
    trace.epochs.push_back(stats);
    if (cfg.keep_snapshots) trace.snapshots.push_back(snapshot_trainable(params));
  }
  if (trace.nonfinite) trace.diverged = true;
  return trace;
}

DivergenceResult weight_divergence(const NetworkSpec& spec, const TrainConfig& base,
                                   const std::vector<double>& betas, const Dataset& train_data,
                                   const Dataset& test_data) {
  DivergenceResult out;
  TrainConfig cfg = base;
  cfg.keep_snapshots = true;

  cfg.policy = NonsmoothPolicy::hybrid(0.0);
  ParameterSet base_params = init_kaiming_uniform(spec, base.seed);
  TrainTrace baseline = train(spec, base_params, train_data, test_data, cfg);
  std::vector<std::vector<Tensor>> base_snaps = baseline.snapshots;
  baseline.snapshots.clear();
  out.traces.push_back(std::move(baseline));

  std::vector<double> compare;
  compare.push_back(0.0);  // the "0 vs 0" sanity pair
  for (double b : betas) compare.push_back(b);

  for (double beta : compare) {
    cfg.policy = NonsmoothPolicy::hybrid(beta);
    ParameterSet params = init_kaiming_uniform(spec, base.seed);  // shared theta_0
    TrainTrace tr = train(spec, params, train_data, test_data, cfg);
    std::vector<double> dist;
    size_t epochs = std::min(base_snaps.size(), tr.snapshots.size());
    for (size_t e = 0; e < epochs; ++e) {
      double acc = 0;
      for (size_t t = 0; t < base_snaps[e].size(); ++t) {
        const Tensor& a = base_snaps[e][t];
        const Tensor& b = tr.snapshots[e][t];
        for (size_t i = 0; i < a.size(); ++i) acc += std::fabs(a.data[i] - b.data[i]);
      }
      dist.push_back(acc);
    }
    tr.snapshots.clear();
    out.betas.push_back(beta);
    out.l1_per_epoch.push_back(std::move(dist));
    out.traces.push_back(std::move(tr));
  }
  return out;
}

std::vector<BetaSweepCell> beta_sweep(const std::string& network,
                                      const std::vector<Precision>& precisions,
                                      const std::vector<double>& betas,
                                      const std::vector<bool>& batchnorm, const TrainConfig& base,
                                      const Dataset& train_data, const Dataset& test_data) {
  NSAD_CHECK(!precisions.empty() && !betas.empty() && !batchnorm.empty(), ErrorKind::Config,
             "beta sweep needs at least one precision, beta, and batchnorm setting");
  std::vector<BetaSweepCell> cells;
  for (Precision prec : precisions) {
    for (bool bn : batchnorm) {
      std::string name = network + (bn ? "-bn" : "");
      NetworkSpec spec = NetworkSpec::from_name(name, prec);
      for (double beta : betas) {
        BetaSweepCell cell;
        cell.prec = prec;
        cell.batchnorm = bn;
        cell.beta = beta;
        TrainConfig cfg = base;
        cfg.policy = NonsmoothPolicy::hybrid(beta);
        ParameterSet params = init_kaiming_uniform(spec, base.seed);
        cell.trace = train(spec, params, train_data, test_data, cfg);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

}  // namespace nsad
