// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "beyond/attacks.hpp"

namespace beyond::theory {

using ndt::Tensor;

// Per-sample squared feature gaps ||f(x) - f(Wx)||^2 for clean and attacked
// inputs, with the same sampled augmentation per pair.
struct GapReport {
  std::vector<std::pair<double, double>> gaps;  // (clean_gap, adv_gap)
  double mean_clean = 0.0, mean_adv = 0.0;
  double fraction_adv_greater = 0.0;
  int skipped = 0;
};

// Produces x_adv for one sample, or nothing when the attack fails.
using AttackFn = std::function<std::optional<Tensor>(const Tensor& x, int label)>;

GapReport feature_gap_check(const std::vector<Tensor>& test_set, const std::vector<int>& labels,
                            const models::ModelBundle& bundle, const augment::Policy& policy,
                            const AttackFn& attack, std::uint64_t seed);

// Jacobian-vector-product norms ||J d||, ||J W d||, ||J W d_hat|| at each
// sample, where d is the attack perturbation, d_hat budget-matched uniform
// noise, and W the augmentation's linear map.
struct OrderingReport {
  std::vector<std::array<double, 3>> norms;
  double fraction_full_chain = 0.0;
  double fraction_first = 0.0;   // ||J d|| > ||J W d||
  double fraction_second = 0.0;  // ||J W d|| > ||J W d_hat||
  int skipped = 0;
};

OrderingReport perturbation_ordering_check(const std::vector<Tensor>& test_set,
                                           const std::vector<int>& labels,
                                           const models::ModelBundle& bundle,
                                           const augment::Policy& policy,
                                           const attacks::AttackBudget& budget,
                                           std::uint64_t seed);

}  // namespace beyond::theory
