// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "beyond/tape.hpp"

namespace beyond::ndt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
};

// Builds a scalar expression from an input leaf; called once per evaluation.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Compares reverse-mode gradients against central finite differences,
// coordinate by coordinate. `fn` must be scalar-valued at `point`.
GradCheckReport gradient_check(const ScalarFn& fn, const Tensor& point, double tolerance,
                               double fd_step = 1e-4);

}  // namespace beyond::ndt
