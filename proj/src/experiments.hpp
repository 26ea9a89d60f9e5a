// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace nsad {

using ConfigMap = std::map<std::string, std::string>;

// Plain-text key=value configuration ('#' comments, blank lines ignored).
// A run manifest JSON from a previous run is also accepted; its embedded
// "config" object is loaded, which reproduces the run exactly.
ConfigMap load_config_file(const std::string& path);

const std::vector<std::string>& subcommand_names();

// Executes one experiment subcommand with the resolved configuration and
// writes its artifacts. Returns the process exit code: 0 success, 2 config
// error, 3 data error, 4 numerical divergence (artifacts still written).
// On nonzero exit an explanation is placed in *error_out when provided.
int run_subcommand(const std::string& name, const ConfigMap& config,
                   std::string* error_out = nullptr);

}  // namespace nsad
