// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "nsad/nsad.h"

#include <string>

#include "error.hpp"
#include "experiments.hpp"
#include "montecarlo.hpp"
#include "zero_programs.hpp"

#ifndef NSAD_VERSION_STRING
#define NSAD_VERSION_STRING "0.0.0"
#endif

struct nsad_config {
  nsad::ConfigMap kv;
};

namespace {

thread_local std::string g_last_error;

// Runs fn, translating exceptions into exit-code-style statuses.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const nsad::Error& e) {
    g_last_error = e.what();
    return e.exit_code();
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return 70;
  }
}

}  // namespace

extern "C" {

nsad_config* nsad_config_create(void) { return new (std::nothrow) nsad_config; }

void nsad_config_destroy(nsad_config* cfg) { delete cfg; }

int nsad_config_set(nsad_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    NSAD_CHECK(cfg && key && value, nsad::ErrorKind::Config,
               "nsad_config_set requires a config, key, and value");
    cfg->kv[key] = value;
    return 0;
  });
}

int nsad_config_load_file(nsad_config* cfg, const char* path) {
  return guarded([&] {
    NSAD_CHECK(cfg && path, nsad::ErrorKind::Config,
               "nsad_config_load_file requires a config and path");
    for (auto& [k, v] : nsad::load_config_file(path)) cfg->kv[k] = v;
    return 0;
  });
}

int nsad_run(const char* subcommand, const nsad_config* cfg) {
  if (!subcommand) {
    g_last_error = "nsad_run requires a subcommand name";
    return 2;
  }
  g_last_error.clear();
  static const nsad::ConfigMap empty;
  int rc = nsad::run_subcommand(subcommand, cfg ? cfg->kv : empty, &g_last_error);
  return rc;
}

size_t nsad_subcommand_count(void) { return nsad::subcommand_names().size(); }

const char* nsad_subcommand_name(size_t index) {
  const auto& names = nsad::subcommand_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

const char* nsad_last_error(void) { return g_last_error.c_str(); }

const char* nsad_version(void) { return NSAD_VERSION_STRING; }

int nsad_hoeffding_margin(double alpha, size_t n, double* out) {
  return guarded([&] {
    NSAD_CHECK(out, nsad::ErrorKind::Config, "nsad_hoeffding_margin requires an output pointer");
    *out = nsad::hoeffding_margin(alpha, n);
    return 0;
  });
}

int nsad_mcdiarmid_margin(double alpha, size_t m, size_t r, double* out) {
  return guarded([&] {
    NSAD_CHECK(out, nsad::ErrorKind::Config, "nsad_mcdiarmid_margin requires an output pointer");
    *out = nsad::mcdiarmid_margin(alpha, m, r);
    return 0;
  });
}

int nsad_zero_table_entry(int precision_bits, const char* variant, const double* x, size_t n,
                          double t, double* value, double* derivative) {
  return guarded([&] {
    NSAD_CHECK(variant && x && n > 0 && value && derivative, nsad::ErrorKind::Config,
               "nsad_zero_table_entry requires a variant, coefficients, and output pointers");
    nsad::ZeroTableRow row =
        nsad::zero_program_eval(nsad::zero_variant_from_name(variant),
                                std::vector<double>(x, x + n), t,
                                nsad::precision_from_bits(precision_bits));
    *value = row.value;
    *derivative = row.derivative;
    return 0;
  });
}

}  // extern "C"
