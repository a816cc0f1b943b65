// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "beyond/attacks.hpp"
#include "beyond/detector.hpp"

namespace beyond::eval {

using ndt::Tensor;

struct Provenance {
  std::string attack;
  double eps = 0.0;
  std::uint64_t seed = 0;
};

// Unit of all metric computation: higher score = more adversarial.
struct ScoredSample {
  double score = 0.0;
  bool is_adversarial = false;
  Provenance provenance;
};

struct RocPoint {
  double fpr = 0.0, tpr = 0.0, threshold = 0.0;
};

// Threshold sweep with (0,0) and (1,1) endpoints; auc is the Mann-Whitney
// statistic P(score_pos > score_neg) + 1/2 P(tie), computed with integer
// numerators so it matches pair counting exactly.
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

RocCurve roc_auc(const std::vector<ScoredSample>& samples);

// Max TPR over thresholds whose FPR does not exceed the cap.
double tpr_at_fpr(const std::vector<ScoredSample>& samples, double fpr_cap);

// Fraction of attacked samples either rejected by the detector or still
// classified to the true label.
double robust_accuracy(const std::vector<Tensor>& attacked, const std::vector<int>& true_labels,
                       const models::ModelBundle& bundle, const augment::Policy& policy,
                       const detector::DetectorThresholds& thresholds, std::uint64_t detect_seed);

}  // namespace beyond::eval
