// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/theory.hpp"

#include <cmath>

namespace beyond::theory {

using ndt::Array;
using ndt::Index;
using ndt::Shape;
using ndt::Tape;
using ndt::Var;

namespace {

double feature_gap(const models::ModelBundle& bundle, const Tensor& x, const augment::Draw& draw) {
  Tensor fx = models::features(bundle.encoder, x);
  Tensor fw = models::features(bundle.encoder, augment::apply_draw(draw, x));
  Tensor diff(fx.shape, fx.data - fw.data);
  const double n = ndt::norm2(diff);
  return n * n;
}

}  // namespace

GapReport feature_gap_check(const std::vector<Tensor>& test_set, const std::vector<int>& labels,
                            const models::ModelBundle& bundle, const augment::Policy& policy,
                            const AttackFn& attack, std::uint64_t seed) {
  if (test_set.empty()) throw Error("theory", "empty-set", "feature_gap_check: no samples");
  if (test_set.size() != labels.size())
    throw Error("theory", "shape", "feature_gap_check: label count mismatch");

  GapReport report;
  Rng root(seed);
  int greater = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    std::optional<Tensor> adv = attack(test_set[i], labels[i]);
    if (!adv) {
      ++report.skipped;
      continue;
    }
    Rng stream = root.split(i);
    augment::Draw draw = augment::sample_draw(policy, stream);
    const double clean_gap = feature_gap(bundle, test_set[i], draw);
    const double adv_gap = feature_gap(bundle, *adv, draw);
    report.gaps.emplace_back(clean_gap, adv_gap);
    report.mean_clean += clean_gap;
    report.mean_adv += adv_gap;
    greater += (adv_gap > clean_gap);
  }
  if (report.gaps.empty())
    throw Error("theory", "all-skipped", "feature_gap_check: every attack failed");
  const double n = static_cast<double>(report.gaps.size());
  report.mean_clean /= n;
  report.mean_adv /= n;
  report.fraction_adv_greater = static_cast<double>(greater) / n;
  return report;
}

OrderingReport perturbation_ordering_check(const std::vector<Tensor>& test_set,
                                           const std::vector<int>& labels,
                                           const models::ModelBundle& bundle,
                                           const augment::Policy& policy,
                                           const attacks::AttackBudget& budget,
                                           std::uint64_t seed) {
  if (test_set.empty())
    throw Error("theory", "empty-set", "perturbation_ordering_check: no samples");
  if (test_set.size() != labels.size())
    throw Error("theory", "shape", "perturbation_ordering_check: label count mismatch");

  OrderingReport report;
  Rng root(seed);
  int full = 0, first = 0, second = 0;

  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Tensor& x = test_set[i];
    Rng stream = root.split(i);

    attacks::AttackBudget b = budget;
    b.seed = stream.split(1).seed();
    Tensor delta;
    try {
      attacks::AttackResult res = attacks::pgd(x, labels[i], bundle.classifier, b);
      delta = Tensor(x.shape, res.x_adv.data - x.data);
    } catch (const Error&) {
      ++report.skipped;
      continue;
    }

    Rng noise_rng = stream.split(2);
    Tensor noise = ndt::uniform(x.shape, -budget.eps, budget.eps, noise_rng);

    Rng draw_rng = stream.split(3);
    augment::Draw draw = augment::sample_draw(policy, draw_rng);
    Tensor w_delta = augment::apply_draw_linear(draw, delta);
    Tensor w_noise = augment::apply_draw_linear(draw, noise);

    // Single tape; three jvps through the trunk features at x.
    Tape t;
    Tensor x4(Shape{1, x.shape[0], x.shape[1], x.shape[2]}, x.data);
    x4.requires_grad = true;
    Var xv = t.leaf(x4, "x");
    Var feats = models::trunk_apply(bundle.encoder.trunk,
                                    models::register_trunk(t, bundle.encoder.trunk), xv);

    auto jvp_norm = [&](const Tensor& tangent) {
      Tensor t4(Shape{1, x.shape[0], x.shape[1], x.shape[2]}, tangent.data);
      return ndt::norm2(t.jvp(feats, {{xv, t4}}));
    };

    const double n1 = jvp_norm(delta);
    const double n2 = jvp_norm(w_delta);
    const double n3 = jvp_norm(w_noise);
    if (n1 == 0.0 && n2 == 0.0 && n3 == 0.0) {
      ++report.skipped;  // degenerate Jacobian
      continue;
    }
    report.norms.push_back({n1, n2, n3});
    first += (n1 > n2);
    second += (n2 > n3);
    full += (n1 > n2 && n2 > n3);
  }

  if (report.norms.empty())
    throw Error("theory", "all-skipped", "perturbation_ordering_check: no usable samples");
  const double n = static_cast<double>(report.norms.size());
  report.fraction_full_chain = full / n;
  report.fraction_first = first / n;
  report.fraction_second = second / n;
  return report;
}

}  // namespace beyond::theory
