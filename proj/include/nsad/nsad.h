/* SPDX-FileCopyrightText: © 2026 nsad authors */
/* SPDX-License-Identifier: Apache-2.0 */
#ifndef NSAD_H
#define NSAD_H

/* C interface to the nsad shared library.
 *
 * All entry points return an int status: 0 on success, otherwise the process
 * exit code the condition maps to (2 config error, 3 data error, 4 numerical
 * divergence, 70 internal). On failure a human-readable explanation is
 * available from nsad_last_error() until the next call on the same thread.
 */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque key/value configuration for nsad_run. */
typedef struct nsad_config nsad_config;

nsad_config* nsad_config_create(void);
void nsad_config_destroy(nsad_config* cfg);

/* Sets one key. Later calls overwrite earlier values for the same key. */
int nsad_config_set(nsad_config* cfg, const char* key, const char* value);

/* Merges keys from a plain-text key=value file ('#' comments) or from a run
 * manifest JSON written by a previous nsad_run, whose embedded config object
 * reproduces that run exactly. File values overwrite existing keys. */
int nsad_config_load_file(nsad_config* cfg, const char* path);

/* Executes one experiment subcommand. cfg may be NULL for all defaults.
 * Returns 0, or 2/3/4 as described above; artifacts and a manifest.json are
 * written into the configured output directory. */
int nsad_run(const char* subcommand, const nsad_config* cfg);

size_t nsad_subcommand_count(void);
const char* nsad_subcommand_name(size_t index); /* NULL when out of range */

/* Last failure message for this thread; empty string when none. */
const char* nsad_last_error(void);

const char* nsad_version(void);

/* Two-sided (1 - alpha) confidence margins used by the zone-volume
 * estimates: Hoeffding over n independent draws, and the bounded-difference
 * margin over an m-by-r grid of records. */
int nsad_hoeffding_margin(double alpha, size_t n, double* out);
int nsad_mcdiarmid_margin(double alpha, size_t m, size_t r, double* out);

/* One row of the identically-zero program table: evaluates zero(t) built
 * from the n coefficients x under the given floating-point width (16, 32,
 * or 64) and reports the reverse-mode derivative at t. variant is
 * "max-pair" (two pooling selections subtracted) or "relu-built" (the same
 * maxima rebuilt from relu with differing relu'(0) choices; needs n == 4). */
int nsad_zero_table_entry(int precision_bits, const char* variant, const double* x, size_t n,
                          double t, double* value, double* derivative);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* NSAD_H */
