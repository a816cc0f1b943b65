// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/grad_check.hpp"

#include <cmath>

namespace beyond::ndt {

namespace {
double eval_at(const ScalarFn& fn, const Tensor& point) {
  Tape tape;
  Tensor p = point;
  p.requires_grad = false;
  Var out = fn(tape, tape.leaf(std::move(p)));
  const Tensor& v = out.value();
  if (!v.is_scalar())
    throw Error("ndt", "nonscalar", "gradient_check: function output must be scalar");
  if (!std::isfinite(v.scalar()))
    throw Error("ndt", "nonfinite", "gradient_check: non-finite function value");
  return v.scalar();
}
}  // namespace

GradCheckReport gradient_check(const ScalarFn& fn, const Tensor& point, double tolerance,
                               double fd_step) {
  Tape tape;
  Tensor p = point;
  p.requires_grad = true;
  Var x = tape.leaf(std::move(p));
  Var out = fn(tape, x);
  if (!out.value().is_scalar())
    throw Error("ndt", "nonscalar", "gradient_check: function output must be scalar");
  if (!std::isfinite(out.value().scalar()))
    throw Error("ndt", "nonfinite", "gradient_check: non-finite function value");
  Gradients grads = tape.backward(out);
  const Tensor& g = grads.wrt(x);

  GradCheckReport report;
  for (Index i = 0; i < point.size(); ++i) {
    Tensor hi = point, lo = point;
    hi.data[i] += fd_step;
    lo.data[i] -= fd_step;
    const double fd = (eval_at(fn, hi) - eval_at(fn, lo)) / (2.0 * fd_step);
    const double ad = g.data[i];
    if (!std::isfinite(fd))
      throw Error("ndt", "nonfinite", "gradient_check: non-finite finite difference");
    const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace beyond::ndt
