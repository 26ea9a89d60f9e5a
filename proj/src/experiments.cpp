// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "data_io.hpp"
#include "error.hpp"
#include "montecarlo.hpp"
#include "rng.hpp"
#include "training.hpp"
#include "variation.hpp"
#include "zero_programs.hpp"

namespace nsad {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Tracks every key the subcommand consults, with effective values, so the
// manifest records the complete reproducible configuration.
class ConfigView {
 public:
  ConfigView(std::string subcommand, const ConfigMap& kv, std::vector<std::string> allowed)
      : subcommand_(std::move(subcommand)), kv_(kv), allowed_(std::move(allowed)) {
    std::sort(allowed_.begin(), allowed_.end());
    for (const auto& [key, value] : kv_) {
      (void)value;
      if (!std::binary_search(allowed_.begin(), allowed_.end(), key)) {
        std::string keys;
        for (const std::string& k : allowed_) keys += (keys.empty() ? "" : ", ") + k;
        throw Error(ErrorKind::Config, "unknown config key '" + key + "' for subcommand '" +
                                           subcommand_ + "'; valid keys: " + keys);
      }
    }
  }

  std::string str(const std::string& key, const std::string& def) {
    auto it = kv_.find(key);
    std::string v = it == kv_.end() ? def : it->second;
    resolved_[key] = v;
    return v;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  double num(const std::string& key, double def) {
    std::string v = str(key, fmt17(def));
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "config key '" + key + "' is not a number: '" + v + "'");
    }
  }

  size_t count(const std::string& key, size_t def) {
    double v = num(key, static_cast<double>(def));
    NSAD_CHECK(v >= 0 && v == std::floor(v), ErrorKind::Config,
               "config key '" + key + "' must be a nonnegative integer");
    return static_cast<size_t>(v);
  }

  uint64_t seed(const std::string& key, uint64_t def) {
    std::string v = str(key, std::to_string(def));
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "config key '" + key + "' is not a seed: '" + v + "'");
    }
  }

  bool flag(const std::string& key, bool def) {
    std::string v = str(key, def ? "1" : "0");
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw Error(ErrorKind::Config, "config key '" + key + "' must be a boolean (0/1): '" + v + "'");
  }

  std::vector<double> list(const std::string& key, const std::string& def) {
    std::string v = str(key, def);
    std::vector<double> out;
    for (const std::string& part : split(v, ',')) {
      if (part.empty()) continue;
      try {
        out.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config,
                    "config key '" + key + "' has a non-numeric entry: '" + part + "'");
      }
    }
    return out;
  }

  Precision precision(const std::string& key = "precision", int def = 32) {
    return precision_from_bits(static_cast<int>(num(key, def)));
  }

  const ConfigMap& resolved() const { return resolved_; }
  const std::string& subcommand() const { return subcommand_; }

 private:
  std::string subcommand_;
  ConfigMap kv_;
  std::vector<std::string> allowed_;
  ConfigMap resolved_;
};

NonsmoothPolicy parse_policy(const std::string& s) {
  std::string name = s;
  double arg = 0;
  bool has_arg = false;
  size_t colon = s.find(':');
  if (colon != std::string::npos) {
    name = s.substr(0, colon);
    try {
      arg = std::stod(s.substr(colon + 1));
      has_arg = true;
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "bad policy argument in '" + s + "'");
    }
  }
  if (name == "native") return NonsmoothPolicy::native(has_arg ? arg : 0.0);
  if (name == "minimal") return NonsmoothPolicy::minimal();
  if (name == "hybrid") return NonsmoothPolicy::hybrid(has_arg ? arg : 0.0);
  if (name == "norm-zero") return NonsmoothPolicy::norm_zero();
  if (name == "norm-uniform") return NonsmoothPolicy::norm_uniform();
  throw Error(ErrorKind::Config,
              "unknown policy '" + s +
                  "' (expected native[:s], minimal, hybrid:beta, norm-zero, norm-uniform)");
}

ReductionOrder parse_order(const std::string& s, uint64_t default_seed) {
  if (s == "sequential") return ReductionOrder::sequential();
  if (s == "shuffled") return ReductionOrder::shuffled(default_seed);
  if (s.rfind("shuffled:", 0) == 0) {
    try {
      return ReductionOrder::shuffled(std::stoull(s.substr(9)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "bad order seed in '" + s + "'");
    }
  }
  throw Error(ErrorKind::Config,
              "unknown reduction order '" + s + "' (expected sequential or shuffled[:seed])");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  NSAD_CHECK(out.good(), ErrorKind::Data, "cannot write '" + path.string() + "'");
  return out;
}

const std::vector<std::string> kDataKeys = {"data",       "train_count", "test_count",
                                            "tie_fraction", "data_dir"};

struct DataBundle {
  Dataset train, test;
  std::string source;
  uint64_t fingerprint = 0;
};

DataBundle resolve_data(ConfigView& cfg, Precision prec, uint64_t seed) {
  DataBundle out;
  std::string kind = cfg.str("data", "synth");
  size_t train_count = cfg.count("train_count", 2048);
  size_t test_count = cfg.count("test_count", 512);
  if (kind == "synth") {
    out.train = synth_digits(train_count, mix_seed(seed, 101), prec);
    out.test = synth_digits(test_count, mix_seed(seed, 202), prec);
    out.test.split = "test";
  } else if (kind == "synth-tied") {
    double tf = cfg.num("tie_fraction", 0.5);
    out.train = synth_tied(train_count, tf, mix_seed(seed, 101), prec);
    out.test = synth_tied(test_count, tf, mix_seed(seed, 202), prec);
    out.test.split = "test";
  } else if (kind == "idx") {
    std::string dir = cfg.str("data_dir", "");
    if (dir.empty()) {
      const char* env = std::getenv("NSAD_DATA_DIR");
      if (env) dir = env;
    }
    NSAD_CHECK(!dir.empty(), ErrorKind::Data,
               "data=idx needs a directory: set config key data_dir or the NSAD_DATA_DIR "
               "environment variable; it must contain train-images-idx3-ubyte, "
               "train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte "
               "(the standard MNIST files), or use data=synth");
    fs::path base(dir);
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                          "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
      NSAD_CHECK(fs::exists(base / f), ErrorKind::Data,
                 "missing dataset file '" + (base / f).string() +
                     "'; download the four standard MNIST IDX files into that directory "
                     "or use data=synth");
    }
    Dataset train_full = load_idx((base / "train-images-idx3-ubyte").string(),
                                  (base / "train-labels-idx1-ubyte").string(), prec);
    Dataset test_full = load_idx((base / "t10k-images-idx3-ubyte").string(),
                                 (base / "t10k-labels-idx1-ubyte").string(), prec);
    out.train = subset_stratified(train_full, std::min(train_count, train_full.size()),
                                  mix_seed(seed, 303));
    out.test = subset_stratified(test_full, std::min(test_count, test_full.size()),
                                 mix_seed(seed, 404));
    out.test.split = "test";
  } else {
    throw Error(ErrorKind::Config,
                "unknown data source '" + kind + "' (expected synth, synth-tied, or idx)");
  }
  out.source = kind;
  out.fingerprint = dataset_fingerprint(out.train) ^ (dataset_fingerprint(out.test) << 1);
  return out;
}

struct Manifest {
  explicit Manifest(std::string sub) : subcommand(std::move(sub)) {}
  std::string subcommand;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::vector<std::string> outputs;
  json extra = json::object();

  void write(const fs::path& dir, const ConfigView& cfg) {
    json m;
    m["subcommand"] = subcommand;
    m["version"] = NSAD_VERSION_STRING;
    m["config"] = json::object();
    for (const auto& [k, v] : cfg.resolved()) m["config"][k] = v;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    m["wall_seconds"] = secs;
    m["outputs"] = outputs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream out = open_out(dir / "manifest.json");
    out << m.dump(2) << "\n";
  }
};

fs::path prepare_outdir(ConfigView& cfg, const std::string& def) {
  fs::path dir(cfg.str("out", def));
  std::error_code ec;
  fs::create_directories(dir, ec);
  NSAD_CHECK(!ec, ErrorKind::Data, "cannot create output directory '" + dir.string() + "'");
  return dir;
}

json volume_to_json(const VolumeEstimate& est) {
  json j;
  j["prop_theta_in_s"] = est.prop_theta_in_s;
  j["prop_batches_impacted"] = est.prop_batches_impacted;
  j["hoeffding_margin"] = est.hoeffding;
  j["mcdiarmid_margin"] = est.mcdiarmid;
  j["alpha"] = est.alpha;
  j["tau"] = est.tau;
  j["draws"] = est.draws;
  j["batches"] = est.batches;
  j["nonfinite_records"] = est.nonfinite_records;
  return j;
}

json histogram_to_json(const VariationHistogram& hist) {
  json bins = json::array();
  for (const HistogramBin& b : hist.bins)
    bins.push_back({{"log10_lo", b.log10_lo}, {"count", b.count}});
  json j;
  j["bins"] = bins;
  j["zeros"] = hist.zeros;
  j["nonfinite"] = hist.nonfinite;
  return j;
}

// --- subcommands -----------------------------------------------------------

int run_zero_table(ConfigView& cfg) {
  Manifest man("zero-table");
  Precision prec = cfg.precision();
  std::string variant_s = cfg.str("variant", "max");
  ZeroVariant variant = (variant_s == "max" || variant_s == "max-pair")
                            ? ZeroVariant::MaxPair
                            : zero_variant_from_name(variant_s);
  std::vector<double> x = cfg.list("x", "1,2,3,4");
  std::vector<double> ts = cfg.list("ts", "-0.001,-0.01,-0.1,0,10,100,1000");
  (void)cfg.seed("seed", 1);
  fs::path dir = prepare_outdir(cfg, "out/zero-table");

  std::vector<ZeroTableRow> rows = zero_table(variant, x, ts, prec);
  {
    std::ofstream out = open_out(dir / "zero_table.csv");
    out << "variant,precision,t,value,derivative\n";
    for (const ZeroTableRow& r : rows)
      out << zero_variant_name(variant) << ',' << precision_name(prec) << ',' << fmt17(r.t)
          << ',' << fmt17(r.value) << ',' << fmt17(r.derivative) << '\n';
  }
  man.outputs.push_back("zero_table.csv");
  std::cout << "zero'(t) for variant " << zero_variant_name(variant) << " at "
            << precision_name(prec) << ":\n";
  for (const ZeroTableRow& r : rows)
    std::printf("  t = %-12g  zero(t) = %-12g  zero'(t) = %.17g\n", r.t, r.value, r.derivative);
  man.write(dir, cfg);
  return 0;
}

int run_variation_hist(ConfigView& cfg) {
  Manifest man("variation-hist");
  Precision prec = cfg.precision();
  uint64_t seed = cfg.seed("seed", 1);
  ProgramPair pair;
  pair.spec = NetworkSpec::from_name(cfg.str("network", "lenet"), prec);
  pair.policy_p = parse_policy(cfg.str("policy_p", "native"));
  pair.policy_q = parse_policy(cfg.str("policy_q", "minimal"));
  pair.order_p = parse_order(cfg.str("order_p", "sequential"), mix_seed(seed, 0xA));
  pair.order_q = parse_order(cfg.str("order_q", "sequential"), mix_seed(seed, 0xB));
  size_t draws = cfg.count("draws", 20);
  size_t batch = cfg.count("batch", 128);
  size_t threads = cfg.count("threads", 1);
  DataBundle data = resolve_data(cfg, prec, seed);
  fs::path dir = prepare_outdir(cfg, "out/variation-hist");

  VariationStats stats;
  std::vector<VariationRecord> records = measure_variation(
      pair, draws, data.train.images, data.train.labels, batch, seed, &stats, threads);
  {
    std::ofstream out = open_out(dir / "records.csv");
    write_variation_csv(out, records, pair, seed);
  }
  man.outputs.push_back("records.csv");
  VariationHistogram hist = histogram_log10(records);
  {
    std::ofstream out = open_out(dir / "hist.json");
    json j = histogram_to_json(hist);
    j["policy_p"] = pair.policy_p.name();
    j["policy_q"] = pair.policy_q.name();
    j["precision"] = precision_name(prec);
    out << j.dump(2) << "\n";
  }
  man.outputs.push_back("hist.json");
  man.extra["data_fingerprint"] = data.fingerprint;

  double dmax = 0;
  for (const VariationRecord& r : records)
    if (!r.nonfinite) dmax = std::max(dmax, r.d);
  std::cout << "variation records: " << records.size() << " (zeros " << hist.zeros
            << ", nonfinite " << stats.nonfinite_records << "), max d = " << fmt17(dmax) << "\n";
  man.write(dir, cfg);
  return 0;
}

int run_thresholds(ConfigView& cfg) {
  Manifest man("thresholds");
  Precision prec = cfg.precision();
  uint64_t seed = cfg.seed("seed", 1);
  NetworkSpec spec = NetworkSpec::from_name(cfg.str("network", "lenet"), prec);
  NonsmoothPolicy policy = parse_policy(cfg.str("policy", "native"));
  size_t draws = cfg.count("draws", 12);
  size_t batch = cfg.count("batch", 128);
  size_t repeats = cfg.count("repeats", 1);
  bool emulate = cfg.flag("emulate", true);
  size_t threads = cfg.count("threads", 1);
  DataBundle data = resolve_data(cfg, prec, seed);
  fs::path dir = prepare_outdir(cfg, "out/thresholds");

  ThresholdEstimate t1 = estimate_tau1(spec, policy, draws, data.train.images,
                                       data.train.labels, batch, mix_seed(seed, 0x7A1),
                                       repeats, emulate, threads);
  ThresholdEstimate t2 = estimate_tau2(spec, draws, data.train.images, data.train.labels,
                                       batch, mix_seed(seed, 0x7A2), threads);
  {
    std::ofstream out = open_out(dir / "thresholds.json");
    json j;
    j["tau1"] = t1.tau1;
    j["tau2"] = t2.tau2;
    j["tau2_sentinel"] = t2.tau2_sentinel;
    j["network"] = spec.name;
    j["precision"] = precision_name(prec);
    j["draws"] = draws;
    j["batch"] = batch;
    j["records_tau1"] = t1.records;
    j["records_tau2"] = t2.records;
    out << j.dump(2) << "\n";
  }
  man.outputs.push_back("thresholds.json");
  man.extra["data_fingerprint"] = data.fingerprint;
  std::cout << "tau1 = " << fmt17(t1.tau1) << "\n";
  if (t2.tau2_sentinel)
    std::cout << "tau2: no positive variation observed (sentinel 0)\n";
  else
    std::cout << "tau2 = " << fmt17(t2.tau2) << "\n";
  man.write(dir, cfg);
  return 0;
}

int run_zone_volume(ConfigView& cfg) {
  Manifest man("zone-volume");
  Precision prec = cfg.precision();
  uint64_t seed = cfg.seed("seed", 1);
  ProgramPair pair;
  pair.spec = NetworkSpec::from_name(cfg.str("network", "lenet"), prec);
  pair.policy_p = parse_policy(cfg.str("policy_p", "native"));
  pair.policy_q = parse_policy(cfg.str("policy_q", "minimal"));
  size_t draws = cfg.count("draws", 100);
  size_t batch = cfg.count("batch", 128);
  double alpha = cfg.num("alpha", 0.05);
  size_t threads = cfg.count("threads", 1);
  std::string tau_source = cfg.str("tau_source", "tau1");
  DataBundle data = resolve_data(cfg, prec, seed);
  fs::path dir = prepare_outdir(cfg, "out/zone-volume");

  double tau = 0;
  if (tau_source == "explicit") {
    NSAD_CHECK(cfg.has("tau"), ErrorKind::Config, "tau_source=explicit requires the tau key");
    tau = cfg.num("tau", 0.0);
    NSAD_CHECK(tau >= 0 || std::isinf(tau), ErrorKind::Config, "tau must be nonnegative");
  } else if (tau_source == "tau1") {
    size_t tau_draws = cfg.count("tau_draws", std::min<size_t>(draws, 8));
    size_t tau_repeats = cfg.count("tau_repeats", 1);
    ThresholdEstimate est =
        estimate_tau1(pair.spec, pair.policy_p, tau_draws, data.train.images,
                      data.train.labels, batch, mix_seed(seed, 0x7A1), tau_repeats, true,
                      threads);
    tau = est.tau1;
  } else if (tau_source == "tau2") {
    size_t tau_draws = cfg.count("tau_draws", std::min<size_t>(draws, 8));
    ThresholdEstimate est = estimate_tau2(pair.spec, tau_draws, data.train.images,
                                          data.train.labels, batch, mix_seed(seed, 0x7A2),
                                          threads);
    tau = est.tau2_sentinel ? 0.0 : est.tau2;
  } else {
    throw Error(ErrorKind::Config, "unknown tau_source '" + tau_source +
                                       "' (expected tau1, tau2, or explicit)");
  }

  if (cfg.has("sweep")) {
    SweepDimension dim = sweep_dimension_from_name(cfg.str("sweep", "batch-size"));
    std::vector<double> values = cfg.list("sweep_values", "32,64,128");
    SweepBase base;
    base.network = pair.spec.name;
    base.prec = prec;
    base.policy_p = pair.policy_p;
    base.policy_q = pair.policy_q;
    base.tau = tau;
    base.draws = draws;
    base.batch = batch;
    base.seed = mix_seed(seed, 0x701);
    base.alpha = alpha;
    base.threads = threads;
    std::vector<SweepCell> cells = sweep(dim, values, base, data.train.images,
                                         data.train.labels);
    {
      std::ofstream out = open_out(dir / "sweep.csv");
      out << "dimension,value,prop_theta_in_s,prop_batches_impacted,hoeffding,mcdiarmid,"
             "nonfinite_records\n";
      for (const SweepCell& c : cells)
        out << sweep_dimension_name(dim) << ',' << fmt17(c.value) << ','
            << fmt17(c.estimate.prop_theta_in_s) << ',' << fmt17(c.estimate.prop_batches_impacted)
            << ',' << fmt17(c.estimate.hoeffding) << ',' << fmt17(c.estimate.mcdiarmid) << ','
            << c.estimate.nonfinite_records << '\n';
    }
    man.outputs.push_back("sweep.csv");
    man.extra["data_fingerprint"] = data.fingerprint;
    for (const SweepCell& c : cells)
      std::cout << sweep_dimension_name(dim) << " = " << c.value
                << ": prop(theta in S) = " << fmt17(c.estimate.prop_theta_in_s) << "\n";
    man.write(dir, cfg);
    return 0;
  }

  std::vector<VariationRecord> records;
  VolumeEstimate est = estimate_volume(pair, tau, draws, data.train.images, data.train.labels,
                                       batch, mix_seed(seed, 0x701), alpha, &records, threads);
  {
    std::ofstream out = open_out(dir / "records.csv");
    write_variation_csv(out, records, pair, seed);
  }
  man.outputs.push_back("records.csv");
  {
    std::ofstream out = open_out(dir / "volume.json");
    json j = volume_to_json(est);
    j["tau_source"] = tau_source;
    j["network"] = pair.spec.name;
    j["precision"] = precision_name(prec);
    j["raw_records"] = "records.csv";
    out << j.dump(2) << "\n";
  }
  man.outputs.push_back("volume.json");
  man.extra["data_fingerprint"] = data.fingerprint;
  std::cout << "tau = " << fmt17(tau) << " (" << tau_source << ")\n"
            << "prop(theta in S)       = " << fmt17(est.prop_theta_in_s)
            << "  +- " << fmt17(est.hoeffding) << " (Hoeffding)\n"
            << "prop(batches impacted) = " << fmt17(est.prop_batches_impacted)
            << "  +- " << fmt17(est.mcdiarmid) << " (McDiarmid)\n";
  man.write(dir, cfg);
  return 0;
}

void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
  out << "epoch,train_loss,test_accuracy,grad_l1,param_l1,diverged,nonfinite\n";
  for (const EpochStats& e : trace.epochs)
    out << e.epoch << ',' << fmt17(e.train_loss) << ',' << fmt17(e.test_accuracy) << ','
        << fmt17(e.grad_l1) << ',' << fmt17(e.param_l1) << ',' << (e.diverged ? 1 : 0) << ','
        << (e.nonfinite ? 1 : 0) << '\n';
}

TrainConfig base_train_config(ConfigView& cfg, uint64_t seed) {
  TrainConfig tc;
  tc.optimizer = optimizer_from_name(cfg.str("optimizer", "sgd"));
  tc.gamma = cfg.num("gamma", 0.01);
  tc.alpha_q = cfg.num("alpha_q", 1.0);
  tc.batch = cfg.count("batch", 32);
  tc.epochs = cfg.count("epochs", 10);
  tc.seed = seed;
  tc.strict_b16 = cfg.flag("strict_b16", false);
  tc.eval_batch = cfg.count("eval_batch", 256);
  return tc;
}

int run_train(ConfigView& cfg) {
  Manifest man("train");
  Precision prec = cfg.precision();
  uint64_t seed = cfg.seed("seed", 1);
  NetworkSpec spec = NetworkSpec::from_name(cfg.str("network", "lenet"), prec);
  TrainConfig tc = base_train_config(cfg, seed);
  double beta = cfg.num("beta", 0.0);
  std::string policy_s = cfg.str("policy", "");
  tc.policy = policy_s.empty() ? NonsmoothPolicy::hybrid(beta) : parse_policy(policy_s);
  DataBundle data = resolve_data(cfg, prec, seed);
  fs::path dir = prepare_outdir(cfg, "out/train");

  ParameterSet params = init_kaiming_uniform(spec, mix_seed(seed, 0x171));
  TrainTrace trace = train(spec, params, data.train, data.test, tc);
  {
    std::ofstream out = open_out(dir / "trace.csv");
    write_trace_csv(out, trace);
  }
  man.outputs.push_back("trace.csv");
  man.extra["data_fingerprint"] = data.fingerprint;
  man.extra["diverged"] = trace.diverged;
  man.extra["nonfinite"] = trace.nonfinite;
  std::cout << "trained " << spec.name << " (" << precision_name(prec) << ", "
            << optimizer_name(tc.optimizer) << ", policy " << tc.policy.name() << ") for "
            << trace.epochs.size() << " epochs; final accuracy = " << fmt17(trace.final_accuracy)
            << (trace.diverged ? " [DIVERGED]" : "") << "\n";
  man.write(dir, cfg);
  if (trace.diverged || trace.nonfinite)
    throw Error(ErrorKind::Numeric,
                "training diverged; trace.csv and manifest.json record the run");
  return 0;
}

int run_weight_divergence(ConfigView& cfg) {
  Manifest man("weight-divergence");
  Precision prec = cfg.precision();
  uint64_t seed = cfg.seed("seed", 1);
  NetworkSpec spec = NetworkSpec::from_name(cfg.str("network", "lenet"), prec);
  TrainConfig tc = base_train_config(cfg, seed);
  std::vector<double> betas = cfg.list("betas", "1");
  DataBundle data = resolve_data(cfg, prec, seed);
  fs::path dir = prepare_outdir(cfg, "out/weight-divergence");

  DivergenceResult res = weight_divergence(spec, tc, betas, data.train, data.test);
  {
    std::ofstream out = open_out(dir / "divergence.csv");
    out << "beta,epoch,l1_distance\n";
    for (size_t p = 0; p < res.betas.size(); ++p)
      for (size_t e = 0; e < res.l1_per_epoch[p].size(); ++e)
        out << fmt17(res.betas[p]) << ',' << e << ',' << fmt17(res.l1_per_epoch[p][e]) << '\n';
  }
  man.outputs.push_back("divergence.csv");
  bool any_diverged = false;
  for (size_t t = 0; t < res.traces.size(); ++t) {
    std::string name = t == 0 ? "trace_baseline.csv"
                              : "trace_beta_" + fmt17(res.betas[t - 1]) + ".csv";
    std::ofstream out = open_out(dir / name);
    write_trace_csv(out, res.traces[t]);
    man.outputs.push_back(name);
    any_diverged = any_diverged || res.traces[t].diverged;
  }
  man.extra["data_fingerprint"] = data.fingerprint;
  for (size_t p = 0; p < res.betas.size(); ++p) {
    double last = res.l1_per_epoch[p].empty() ? 0 : res.l1_per_epoch[p].back();
    std::cout << "beta " << res.betas[p] << " vs baseline: final L1 distance = " << fmt17(last)
              << "\n";
  }
  man.write(dir, cfg);
  if (any_diverged)
    throw Error(ErrorKind::Numeric, "a training run diverged; the trace files record which");
  return 0;
}

int run_beta_sweep(ConfigView& cfg) {
  Manifest man("beta-sweep");
  uint64_t seed = cfg.seed("seed", 1);
  std::string network = cfg.str("network", "lenet");
  std::vector<double> prec_bits = cfg.list("precisions", "32");
  std::vector<Precision> precisions;
  for (double b : prec_bits) precisions.push_back(precision_from_bits(static_cast<int>(b)));
  std::vector<double> betas = cfg.list("betas", "0,1,10");
  std::vector<double> bn_vals = cfg.list("batchnorm", "0");
  std::vector<bool> batchnorm;
  for (double v : bn_vals) batchnorm.push_back(v != 0.0);
  TrainConfig tc = base_train_config(cfg, seed);

  // The dataset must exist in each model precision; resolve at B64 and round.
  DataBundle data = resolve_data(cfg, Precision::B64, seed);
  fs::path dir = prepare_outdir(cfg, "out/beta-sweep");

  bool any_diverged = false;
  std::ofstream summary = open_out(dir / "summary.csv");
  summary << "precision,batchnorm,beta,final_accuracy,diverged,nonfinite\n";
  json grid = json::array();
  for (Precision prec : precisions) {
    Dataset train_p, test_p;
    train_p.labels = data.train.labels;
    train_p.classes = data.train.classes;
    train_p.images = cast(data.train.images, prec);
    test_p.labels = data.test.labels;
    test_p.classes = data.test.classes;
    test_p.images = cast(data.test.images, prec);
    for (bool bn : batchnorm) {
      std::vector<BetaSweepCell> cells = beta_sweep(network, {prec}, betas, {bn}, tc, train_p,
                                                    test_p);
      for (const BetaSweepCell& cell : cells) {
        summary << precision_name(cell.prec) << ',' << (cell.batchnorm ? 1 : 0) << ','
                << fmt17(cell.beta) << ',' << fmt17(cell.trace.final_accuracy) << ','
                << (cell.trace.diverged ? 1 : 0) << ',' << (cell.trace.nonfinite ? 1 : 0)
                << '\n';
        std::string tname = std::string("trace_") + precision_name(cell.prec) +
                            (cell.batchnorm ? "_bn" : "_nobn") + "_beta_" + fmt17(cell.beta) +
                            ".csv";
        std::ofstream tout = open_out(dir / tname);
        write_trace_csv(tout, cell.trace);
        man.outputs.push_back(tname);
        any_diverged = any_diverged || cell.trace.diverged;
        json c;
        c["precision"] = precision_name(cell.prec);
        c["batchnorm"] = cell.batchnorm;
        c["beta"] = cell.beta;
        c["final_accuracy"] = cell.trace.final_accuracy;
        c["diverged"] = cell.trace.diverged;
        grid.push_back(c);
      }
    }
  }
  man.outputs.push_back("summary.csv");
  {
    std::ofstream out = open_out(dir / "grid.json");
    json j;
    j["cells"] = grid;
    out << j.dump(2) << "\n";
  }
  man.outputs.push_back("grid.json");
  man.extra["data_fingerprint"] = data.fingerprint;
  std::cout << "beta sweep wrote " << grid.size() << " cells\n";
  man.write(dir, cfg);
  if (any_diverged)
    throw Error(ErrorKind::Numeric, "a sweep cell diverged; summary.csv records which");
  return 0;
}

}  // namespace

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  NSAD_CHECK(in.good(), ErrorKind::Config, "cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ConfigMap out;
  size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    // Run manifest: recover the embedded config object.
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    NSAD_CHECK(!j.is_discarded() && j.contains("config") && j["config"].is_object(),
               ErrorKind::Config,
               "'" + path + "' looks like JSON but has no config object");
    for (auto& [k, v] : j["config"].items())
      out[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return out;
  }
  std::istringstream lines(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    NSAD_CHECK(eq != std::string::npos, ErrorKind::Config,
               "bad config line " + std::to_string(lineno) + " in '" + path +
                   "' (expected key=value): " + t);
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {
      "zero-table",  "variation-hist",    "thresholds", "zone-volume",
      "train",       "weight-divergence", "beta-sweep"};
  return names;
}

int run_subcommand(const std::string& name, const ConfigMap& config, std::string* error_out) {
  try {
    const std::vector<std::string> common = {"precision", "seed", "out", "threads"};
    auto keys = [&](std::initializer_list<const char*> extra, bool data) {
      std::vector<std::string> v = common;
      for (const char* k : extra) v.push_back(k);
      if (data) v.insert(v.end(), kDataKeys.begin(), kDataKeys.end());
      return v;
    };
    if (name == "zero-table") {
      ConfigView cfg(name, config, keys({"variant", "x", "ts"}, false));
      return run_zero_table(cfg);
    }
    if (name == "variation-hist") {
      ConfigView cfg(name, config,
                     keys({"network", "policy_p", "policy_q", "order_p", "order_q", "draws",
                           "batch"},
                          true));
      return run_variation_hist(cfg);
    }
    if (name == "thresholds") {
      ConfigView cfg(name, config,
                     keys({"network", "policy", "draws", "batch", "repeats", "emulate"}, true));
      return run_thresholds(cfg);
    }
    if (name == "zone-volume") {
      ConfigView cfg(name, config,
                     keys({"network", "policy_p", "policy_q", "draws", "batch", "alpha",
                           "tau_source", "tau", "tau_draws", "tau_repeats", "sweep",
                           "sweep_values"},
                          true));
      return run_zone_volume(cfg);
    }
    if (name == "train") {
      ConfigView cfg(name, config,
                     keys({"network", "optimizer", "gamma", "alpha_q", "batch", "epochs",
                           "beta", "policy", "strict_b16", "eval_batch"},
                          true));
      return run_train(cfg);
    }
    if (name == "weight-divergence") {
      ConfigView cfg(name, config,
                     keys({"network", "optimizer", "gamma", "alpha_q", "batch", "epochs",
                           "betas", "strict_b16", "eval_batch"},
                          true));
      return run_weight_divergence(cfg);
    }
    if (name == "beta-sweep") {
      ConfigView cfg(name, config,
                     keys({"network", "optimizer", "gamma", "alpha_q", "batch", "epochs",
                           "betas", "precisions", "batchnorm", "strict_b16", "eval_batch"},
                          true));
      return run_beta_sweep(cfg);
    }
    std::string valid;
    for (const std::string& s : subcommand_names()) valid += (valid.empty() ? "" : ", ") + s;
    throw Error(ErrorKind::Config, "unknown subcommand '" + name + "'; expected one of: " + valid);
  } catch (const Error& e) {
    if (error_out) *error_out = e.what();
    return e.exit_code();
  } catch (const std::exception& e) {
    if (error_out) *error_out = std::string("internal error: ") + e.what();
    return 70;
  }
}

}  // namespace nsad
