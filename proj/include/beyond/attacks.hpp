// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "beyond/augment.hpp"
#include "beyond/detector.hpp"
#include "beyond/nets.hpp"

namespace beyond::attacks {

using ndt::Tensor;

// L-infinity attack budget. Outputs always satisfy |x_adv - x|_inf <= eps
// (to 1e-9) and stay inside the pixel box; violations throw attacks/budget.
struct AttackBudget {
  double eps = 8.0 / 255.0;
  int steps = 20;
  double step_size = 2.0 / 255.0;
  std::optional<int> targeted;  // target label; absent = untargeted
  bool random_start = true;     // PGD start sampled inside the ball
  std::uint64_t seed = 1;
};

struct AdaptiveConfig {
  double alpha = 1.0;  // representation-similarity trade-off weight
  int k_eot = 8;       // augmentation draws per attack step
  AttackBudget budget;
};

struct AttackResult {
  Tensor x_adv;
  bool null_gradient = false;  // gradient was zero everywhere
};

AttackResult fgsm(const Tensor& x, int y, const models::ClassifierNet& clf, double eps);

AttackResult pgd(const Tensor& x, int y, const models::ClassifierNet& clf,
                 const AttackBudget& budget);

// Targeted EOT attack on classifier loss + label consistency - alpha * rep
// similarity, with fresh augmentation draws every step. Every policy entry
// must be differentiable.
AttackResult adaptive_attack(const Tensor& x, int y_t, const models::ModelBundle& bundle,
                             const augment::Policy& policy, const AdaptiveConfig& config);

enum class OrthogonalStrategy { kOrthogonal, kSelection };

// Detector-aware PGD: the orthogonal strategy removes the detector-score
// component from each classifier step; the selection strategy works on
// whichever objective is currently unsatisfied.
AttackResult orthogonal_pgd(const Tensor& x, int y_t, const models::ModelBundle& bundle,
                            const augment::Policy& policy,
                            const detector::DetectorThresholds& thresholds,
                            const AttackBudget& budget, OrthogonalStrategy strategy);

// Fraction of coordinates where the label-consistency gradient and the
// -alpha * representation-similarity gradient are nonzero with opposite
// signs, measured at x + delta for a delta drawn uniformly at the budget.
// step_size only keys the draw's random stream (it labels measurement rows).
double gradient_conflict_rate(const Tensor& x, const models::ModelBundle& bundle,
                              const augment::Policy& policy, const AdaptiveConfig& config,
                              double step_size);

// One EOT gradient estimate of the adaptive objective at x + delta.
Tensor adaptive_gradient(const Tensor& x, const Tensor& delta, int y_t,
                         const models::ModelBundle& bundle, const augment::Policy& policy,
                         const AdaptiveConfig& config, std::uint64_t draw_seed);

// g_cls minus its projection onto g_det; zero when the two are parallel.
Tensor orthogonal_component(const Tensor& g_cls, const Tensor& g_det);

// Differentiable benign-look score: min of z-scored soft label consistency
// and mean neighbor cosine, built from k_draws on-tape augmentations.
ndt::Var benign_score_surrogate(ndt::Tape& tape, ndt::Var x4, const models::ModelBundle& bundle,
                                const augment::Policy& policy,
                                const detector::DetectorThresholds& thresholds, int k_draws,
                                Rng& rng);

void check_budget(const Tensor& x0, const Tensor& x_adv, double eps);

int least_likely_class(const models::ClassifierNet& clf, const Tensor& x);

}  // namespace beyond::attacks
