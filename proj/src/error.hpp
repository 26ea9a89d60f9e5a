// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nsad {

// Error categories map onto the process exit codes documented in the CLI.
enum class ErrorKind : int {
  Config = 2,
  Data = 3,
  Numeric = 4,
  Internal = 70,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

#define NSAD_CHECK(cond, kind, msg)                      \
  do {                                                   \
    if (!(cond)) throw ::nsad::Error((kind), (msg));     \
  } while (0)

}  // namespace nsad
