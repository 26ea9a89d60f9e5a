// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "variation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "data_io.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "thread_pool.hpp"

namespace nsad {

namespace {

// One record: shared forward tape, two backward passes, L1 fold in double.
VariationRecord one_record(const ProgramPair& pair, ParameterSet& params, const Tensor& bi,
                           const std::vector<int>& bl, size_t m, size_t q,
                           const ReductionOrder& order_p, const ReductionOrder& order_q) {
  VariationRecord rec;
  rec.m = m;
  rec.q = q;
  ForwardBuild fb = forward_loss(pair.spec, params, bi, bl, ReductionOrder::sequential(),
                                 /*mean_reduction=*/false, /*train_mode=*/true);
  Gradient gp = backprop(fb.tape, pair.policy_p, order_p, fb.param_ids);
  Gradient gq = backprop(fb.tape, pair.policy_q, order_q, fb.param_ids);
  rec.nonfinite = gp.nonfinite || gq.nonfinite;
  double d = 0, scale = 0;
  for (size_t t = 0; t < gp.grads.size(); ++t) {
    const Tensor& a = gp.grads[t];
    const Tensor& b = gq.grads[t];
    for (size_t e = 0; e < a.size(); ++e) {
      double da = a.data[e], db = b.data[e];
      if (!std::isfinite(da) || !std::isfinite(db)) {
        rec.nonfinite = true;
        continue;
      }
      d += std::fabs(da - db);
      scale += std::fabs(da);
    }
  }
  rec.d = d;
  rec.scale = scale;
  return rec;
}

}  // namespace

std::vector<VariationRecord> measure_variation(const ProgramPair& pair, size_t draws,
                                               const Tensor& images,
                                               const std::vector<int>& labels,
                                               size_t batch_size, uint64_t seed,
                                               VariationStats* stats, size_t threads) {
  NSAD_CHECK(draws >= 1, ErrorKind::Config, "need at least one parameter draw");
  NSAD_CHECK(batch_size >= 1 && labels.size() >= batch_size, ErrorKind::Config,
             "batch size exceeds dataset");
  pair.policy_p.validate();
  pair.policy_q.validate();
  size_t r = labels.size() / batch_size;
  std::vector<VariationRecord> records(draws * r);
  parallel_for(draws, threads, [&](size_t m) {
    ParameterSet params = init_kaiming_uniform(pair.spec, mix_seed(seed, m));
    for (size_t q = 0; q < r; ++q) {
      Tensor bi = slice_images(images, q * batch_size, batch_size);
      std::vector<int> bl = slice_labels(labels, q * batch_size, batch_size);
      uint64_t tag = m * r + q;
      records[tag] = one_record(pair, params, bi, bl, m, q, pair.order_p.stream(tag),
                                pair.order_q.stream(tag));
    }
  });
  if (stats) {
    stats->nonfinite_records = 0;
    for (const VariationRecord& rec : records)
      if (rec.nonfinite) ++stats->nonfinite_records;
  }
  return records;
}

ThresholdEstimate estimate_tau1(const NetworkSpec& spec, const NonsmoothPolicy& policy,
                                size_t draws, const Tensor& images,
                                const std::vector<int>& labels, size_t batch_size,
                                uint64_t seed, size_t repeats, bool emulate, size_t threads) {
  NSAD_CHECK(repeats >= 1, ErrorKind::Config, "repeats must be >= 1");
  ThresholdEstimate est;
  est.network = spec.name;
  est.prec = spec.prec;
  est.draws = draws;
  est.batch = batch_size;
  for (size_t rep = 0; rep < repeats; ++rep) {
    ProgramPair pair;
    pair.spec = spec;
    pair.policy_p = policy;
    pair.policy_q = policy;
    if (emulate) {
      // Two independently shuffled backward orders; stream() inside
      // measure_variation keeps them distinct per record.
      pair.order_p = ReductionOrder::shuffled(mix_seed(seed, 2 * rep));
      pair.order_q = ReductionOrder::shuffled(mix_seed(seed, 2 * rep + 1));
    }
    std::vector<VariationRecord> records =
        measure_variation(pair, draws, images, labels, batch_size, seed, nullptr, threads);
    est.records += records.size();
    for (const VariationRecord& rec : records)
      if (!rec.nonfinite && rec.d > est.tau1) est.tau1 = rec.d;
  }
  return est;
}

ThresholdEstimate estimate_tau2(const NetworkSpec& spec, size_t draws, const Tensor& images,
                                const std::vector<int>& labels, size_t batch_size,
                                uint64_t seed, size_t threads) {
  ProgramPair pair;
  pair.spec = spec;
  pair.policy_p = NonsmoothPolicy::native(0.0);
  pair.policy_q = NonsmoothPolicy::native(1.0);
  std::vector<VariationRecord> records =
      measure_variation(pair, draws, images, labels, batch_size, seed, nullptr, threads);
  ThresholdEstimate est;
  est.network = spec.name;
  est.prec = spec.prec;
  est.draws = draws;
  est.batch = batch_size;
  est.records = records.size();
  est.tau2_sentinel = true;
  for (const VariationRecord& rec : records) {
    if (rec.nonfinite || rec.d <= 0) continue;
    if (est.tau2_sentinel || rec.d < est.tau2) {
      est.tau2 = rec.d;
      est.tau2_sentinel = false;
    }
  }
  return est;
}

ZoneClassification classify_zone(const std::vector<VariationRecord>& records, double tau) {
  NSAD_CHECK(tau >= 0, ErrorKind::Config, "tau must be nonnegative");
  ZoneClassification z;
  size_t max_m = 0;
  for (const VariationRecord& rec : records) max_m = std::max(max_m, rec.m);
  z.draws = records.empty() ? 0 : max_m + 1;
  z.draw_in_s.assign(z.draws, 0);
  z.record_impacted.assign(records.size(), 0);
  for (size_t i = 0; i < records.size(); ++i) {
    const VariationRecord& rec = records[i];
    if (rec.nonfinite) continue;
    ++z.finite_records;
    if (rec.d > tau) {
      z.record_impacted[i] = 1;
      ++z.impacted_records;
      if (!z.draw_in_s[rec.m]) {
        z.draw_in_s[rec.m] = 1;
        ++z.draws_in_s;
      }
    }
  }
  return z;
}

void write_variation_csv(std::ostream& out, const std::vector<VariationRecord>& records,
                         const ProgramPair& pair, uint64_t seed) {
  out << "m,q,d,policyP,policyQ,precision,seed\n";
  char buf[64];
  for (const VariationRecord& rec : records) {
    std::snprintf(buf, sizeof buf, "%.17g", rec.d);
    out << rec.m << ',' << rec.q << ',' << (rec.nonfinite ? "nan" : buf) << ','
        << pair.policy_p.name() << ',' << pair.policy_q.name() << ','
        << precision_name(pair.spec.prec) << ',' << seed << '\n';
  }
}

VariationHistogram histogram_log10(const std::vector<VariationRecord>& records) {
  VariationHistogram h;
  std::map<int, size_t> bins;
  for (const VariationRecord& rec : records) {
    if (rec.nonfinite) {
      ++h.nonfinite;
    } else if (rec.d <= 0) {
      ++h.zeros;
    } else {
      ++bins[static_cast<int>(std::floor(std::log10(rec.d)))];
    }
  }
  for (auto& [lo, count] : bins) h.bins.push_back({lo, count});
  return h;
}

}  // namespace nsad
