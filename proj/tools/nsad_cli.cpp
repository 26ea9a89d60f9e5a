// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Everything of substance lives behind the C API in
// nsad/nsad.h; this file only translates flags into config keys.

#include <deque>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include <nsad/nsad.h>

namespace {

struct FlagDef {
  const char* flag;
  const char* help;
};

// Flags shared by every subcommand. Each maps to the config key obtained by
// dropping the leading dashes and turning '-' into '_'.
const std::vector<FlagDef> kCommonFlags = {
    {"--precision", "floating-point width: 16, 32, or 64"},
    {"--seed", "root seed; every stream derives from it"},
    {"--out", "output directory for artifacts and manifest.json"},
    {"--threads", "worker threads for independent draws and cells"},
};

const std::map<std::string, std::vector<FlagDef>> kSubFlags = {
    {"zero-table",
     {{"--variant", "program variant: max-pair or relu-built"},
      {"--x", "comma-separated coefficients"},
      {"--ts", "comma-separated evaluation points"}}},
    {"variation-hist",
     {{"--network", "network name, e.g. lenet, lenet-bn, mini1..mini3, mlp"},
      {"--policy-p", "backward policy P: native[:s], minimal, hybrid:beta, norm-*"},
      {"--policy-q", "backward policy Q"},
      {"--order-p", "reduction order P: sequential or shuffled[:seed]"},
      {"--order-q", "reduction order Q"},
      {"--draws", "parameter draws M"},
      {"--batch", "mini-batch size"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
    {"thresholds",
     {{"--network", "network name"},
      {"--policy", "policy whose same-program variation bounds tau1"},
      {"--draws", "parameter draws M"},
      {"--batch", "mini-batch size"},
      {"--repeats", "shuffled-order repetitions per draw for tau1"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
    {"zone-volume",
     {{"--network", "network name"},
      {"--policy-p", "backward policy P"},
      {"--policy-q", "backward policy Q"},
      {"--draws", "parameter draws M"},
      {"--batch", "mini-batch size"},
      {"--alpha", "confidence level for the margins"},
      {"--tau-source", "threshold source: tau1, tau2, or explicit"},
      {"--tau", "threshold value when --tau-source explicit"},
      {"--sweep", "sweep dimension: batch-size, depth, or batchnorm"},
      {"--sweep-values", "comma-separated sweep values"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
    {"train",
     {{"--network", "network name"},
      {"--optimizer", "sgd or adam"},
      {"--gamma", "step size"},
      {"--batch", "mini-batch size"},
      {"--epochs", "training epochs"},
      {"--beta", "hybrid pooling split (0 = one-hot, 1 = uniform)"},
      {"--policy", "explicit backward policy (overrides --beta)"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
    {"weight-divergence",
     {{"--network", "network name"},
      {"--optimizer", "sgd or adam"},
      {"--gamma", "step size"},
      {"--batch", "mini-batch size"},
      {"--epochs", "training epochs"},
      {"--betas", "comma-separated hybrid splits compared against beta = 0"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
    {"beta-sweep",
     {{"--network", "network name"},
      {"--optimizer", "sgd or adam"},
      {"--gamma", "step size"},
      {"--batch", "mini-batch size"},
      {"--epochs", "training epochs"},
      {"--betas", "comma-separated hybrid splits"},
      {"--precisions", "comma-separated widths, e.g. 16,32,64"},
      {"--batchnorm", "comma-separated 0/1 toggles"},
      {"--data", "dataset source: synth, synth-tied, or idx"}}},
};

std::string key_of(const std::string& flag) {
  std::string key = flag.substr(flag.find_first_not_of('-'));
  for (char& c : key)
    if (c == '-') c = '_';
  return key;
}

struct SubState {
  CLI::App* sub = nullptr;
  std::string config_path;
  std::vector<std::string> sets;
  std::deque<std::string> values;  // stable addresses for CLI11 bindings
  std::vector<std::pair<std::string, CLI::Option*>> named;  // key -> option
};

int fail(int rc) {
  const char* msg = nsad_last_error();
  std::cerr << "nsad: error: " << (msg && *msg ? msg : "unknown failure") << "\n";
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"floating-point nonsmoothness experiments"};
  app.set_version_flag("--version", nsad_version());
  app.require_subcommand(1);
  app.footer(
      "Config files are key=value lines ('#' comments); a manifest.json from a\n"
      "previous run also loads, reproducing that run. Flags override file values.\n"
      "data=idx reads IDX files from --set data_dir=... or $NSAD_DATA_DIR.");

  std::map<std::string, SubState> states;
  for (size_t i = 0; i < nsad_subcommand_count(); ++i) {
    std::string name = nsad_subcommand_name(i);
    SubState& st = states[name];
    st.sub = app.add_subcommand(name, "");
    st.sub->add_option("--config", st.config_path, "config file loaded before flags")
        ->check(CLI::ExistingFile);
    st.sub->add_option("--set", st.sets, "extra config entry KEY=VALUE (repeatable)")
        ->type_name("KEY=VALUE");
    auto add = [&st](const FlagDef& def) {
      st.values.emplace_back();
      CLI::Option* opt = st.sub->add_option(def.flag, st.values.back(), def.help);
      st.named.emplace_back(key_of(def.flag), opt);
    };
    for (const FlagDef& def : kCommonFlags) add(def);
    for (const FlagDef& def : kSubFlags.at(name)) add(def);
    st.named[0].second->check(CLI::IsMember({"16", "32", "64"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // help and version exit cleanly; bad usage is a config error
  }

  for (auto& [name, st] : states) {
    if (!app.got_subcommand(st.sub)) continue;
    nsad_config* cfg = nsad_config_create();
    if (!cfg) {
      std::cerr << "nsad: error: out of memory\n";
      return 70;
    }
    int rc = 0;
    if (!st.config_path.empty()) rc = nsad_config_load_file(cfg, st.config_path.c_str());
    size_t vi = 0;
    for (const auto& [key, opt] : st.named) {
      const std::string& value = st.values[vi++];
      if (rc == 0 && opt->count() > 0) rc = nsad_config_set(cfg, key.c_str(), value.c_str());
    }
    for (const std::string& kv : st.sets) {
      if (rc != 0) break;
      size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        std::cerr << "nsad: error: --set expects KEY=VALUE, got '" << kv << "'\n";
        nsad_config_destroy(cfg);
        return 2;
      }
      rc = nsad_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    }
    if (rc == 0) rc = nsad_run(name.c_str(), cfg);
    nsad_config_destroy(cfg);
    return rc == 0 ? 0 : fail(rc);
  }
  return 2;  // unreachable: require_subcommand(1) guarantees a match
}
