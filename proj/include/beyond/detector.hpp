// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beyond/augment.hpp"
#include "beyond/nets.hpp"

namespace beyond::detector {

using ndt::Tensor;

// Calibrated decision thresholds plus the calibration-split statistics used
// for score normalization. tau_cos cuts neighbor cosine similarity; a sample
// is rejected when either consistency count falls below its threshold.
struct DetectorThresholds {
  double tau_cos = -1.0;
  int t_label = 0;
  int t_rep = 0;
  double target_fpr = 0.05;
  int k = 50;
  double calibration_fpr = 0.0;

  // Sorted calibration statistics for rank normalization of ROC scores.
  std::vector<double> ref_label_stat;
  std::vector<double> ref_rep_stat;
  // Moments for the differentiable surrogate used by adaptive attacks.
  double soft_label_mean = 0.0, soft_label_std = 1.0;
  double rep_mean = 0.0, rep_std = 1.0;
};

struct DetectionRecord {
  int ind_label = 0;
  int ind_rep = 0;
  bool reject = false;
  // Audit lists: per-neighbor SSL labels, match flags, and cosine values.
  std::vector<int> neighbor_labels;
  std::vector<char> label_match;
  std::vector<double> cosines;
  // Continuous statistics and the combined adversarial score (higher = more
  // adversarial): 1 - min of rank-normalized label/rep statistics.
  double label_stat = 0.0;
  double rep_stat = 0.0;
  double score = 0.0;
};

// Thresholds-independent per-sample measurements against one neighbor set.
struct SampleStats {
  int clf_label = 0;
  std::vector<int> neighbor_labels;
  std::vector<double> cosines;
  double soft_label_stat = 0.0;  // negative mean neighbor CE toward clf_label
  int ind_label() const;
  int ind_rep(double tau_cos) const;
  double label_stat() const;
  double rep_stat() const;
};

SampleStats neighbor_stats(const Tensor& x, const models::ModelBundle& bundle,
                           const augment::NeighborSet& neighbors);

int label_consistency_count(const Tensor& x, const augment::NeighborSet& neighbors,
                            const models::ModelBundle& bundle);
int representation_similarity_count(const Tensor& x, const augment::NeighborSet& neighbors,
                                    const models::ModelBundle& bundle, double tau_cos);

// Threshold calibration on clean samples only. tau_cos is the target_fpr
// quantile of the pooled clean neighbor cosines; each count threshold is the
// largest integer whose solo rejection rate stays within target_fpr/2.
DetectorThresholds calibrate_thresholds(const std::vector<Tensor>& clean_set,
                                        const models::ModelBundle& bundle,
                                        const augment::Policy& policy, int k,
                                        double target_fpr = 0.05, std::uint64_t seed = 1,
                                        std::size_t min_calibration_size = 200);

// Verdict for one input against a pre-built neighbor set (k must match).
DetectionRecord detect(const Tensor& x, const models::ModelBundle& bundle,
                       const DetectorThresholds& thresholds,
                       const augment::NeighborSet& neighbors);
// Convenience: generates thresholds.k neighbors from the seed first.
DetectionRecord detect(const Tensor& x, const models::ModelBundle& bundle,
                       const augment::Policy& policy, const DetectorThresholds& thresholds,
                       std::uint64_t neighbor_seed);

// Batch detection; per-sample neighbor seeds are split(seed, index) and
// results keep input order.
std::vector<DetectionRecord> detect_batch(const std::vector<Tensor>& xs,
                                          const models::ModelBundle& bundle,
                                          const augment::Policy& policy,
                                          const DetectorThresholds& thresholds,
                                          std::uint64_t seed);

// Fraction of `ref` values <= v (empirical CDF).
double ecdf(const std::vector<double>& sorted_ref, double v);

// Adversarial score for arbitrary stats under calibrated references.
double combined_score(const DetectorThresholds& thresholds, double label_stat, double rep_stat);

}  // namespace beyond::detector
