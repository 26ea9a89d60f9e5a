// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
//
// Two programs that compute the constant zero as a difference of equal
// maxima, yet report nonzero derivatives at tie points. They are the
// smallest reproducers of policy-dependent reverse-mode output.
#pragma once

#include <string>
#include <vector>

#include "precision.hpp"

namespace nsad {

enum class ZeroVariant {
  MaxPair,    // max via native pooling minus max via minimal-norm pooling
  ReluBuilt,  // max built from relu/abs identities, relu'(0)=0 vs relu'(0)=1
};

const char* zero_variant_name(ZeroVariant v);
ZeroVariant zero_variant_from_name(const std::string& name);

struct ZeroTableRow {
  double t = 0;
  double value = 0;       // program output, identically zero up to rounding
  double derivative = 0;  // d/dt as reported by reverse mode
};

// Derivative of zero(t) = max(t*x) - max'(t*x) at a single t. The two maxima
// use the same forward values; only the backward selection differs.
ZeroTableRow zero_program_eval(ZeroVariant variant, const std::vector<double>& x, double t,
                               Precision prec);

std::vector<ZeroTableRow> zero_table(ZeroVariant variant, const std::vector<double>& x,
                                     const std::vector<double>& ts, Precision prec);

}  // namespace nsad
