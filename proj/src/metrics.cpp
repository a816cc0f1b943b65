// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace beyond::eval {

namespace {

void validate(const std::vector<ScoredSample>& samples, const char* where) {
  std::size_t pos = 0, neg = 0;
  for (const ScoredSample& s : samples) {
    if (!std::isfinite(s.score))
      throw Error("evaluation", "nonfinite", std::string(where) + ": non-finite score");
    (s.is_adversarial ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0)
    throw Error("evaluation", "single-class",
                std::string(where) + ": need at least one adversarial and one clean sample");
}

}  // namespace

RocCurve roc_auc(const std::vector<ScoredSample>& samples) {
  validate(samples, "roc_auc");

  std::vector<std::pair<double, bool>> by_score;  // (score, is_adversarial)
  by_score.reserve(samples.size());
  std::int64_t n_pos = 0, n_neg = 0;
  for (const ScoredSample& s : samples) {
    by_score.emplace_back(s.score, s.is_adversarial);
    (s.is_adversarial ? n_pos : n_neg) += 1;
  }
  std::sort(by_score.begin(), by_score.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});

  // Walk distinct scores descending; flagged = score >= threshold. The AUC
  // numerator counts 2 per correctly ordered pair and 1 per tie.
  std::int64_t pos_above = 0, neg_above = 0;
  std::int64_t numerator2 = 0;
  std::size_t i = 0;
  while (i < by_score.size()) {
    const double v = by_score[i].first;
    std::int64_t pos_at = 0, neg_at = 0;
    while (i < by_score.size() && by_score[i].first == v) {
      (by_score[i].second ? pos_at : neg_at) += 1;
      ++i;
    }
    numerator2 += neg_at * (2 * pos_above + pos_at);
    pos_above += pos_at;
    neg_above += neg_at;
    curve.points.push_back({static_cast<double>(neg_above) / static_cast<double>(n_neg),
                            static_cast<double>(pos_above) / static_cast<double>(n_pos), v});
  }

  curve.auc = static_cast<double>(numerator2) / static_cast<double>(2 * n_pos * n_neg);
  return curve;
}

double tpr_at_fpr(const std::vector<ScoredSample>& samples, double fpr_cap) {
  if (fpr_cap < 0.0 || fpr_cap > 1.0)
    throw Error("evaluation", "bad-cap", "tpr_at_fpr: cap must lie in [0,1]");
  RocCurve curve = roc_auc(samples);
  double best = 0.0;
  for (const RocPoint& p : curve.points)
    if (p.fpr <= fpr_cap) best = std::max(best, p.tpr);
  return best;
}

double robust_accuracy(const std::vector<Tensor>& attacked, const std::vector<int>& true_labels,
                       const models::ModelBundle& bundle, const augment::Policy& policy,
                       const detector::DetectorThresholds& thresholds,
                       std::uint64_t detect_seed) {
  if (attacked.empty())
    throw Error("evaluation", "empty-set", "robust_accuracy: no attacked samples");
  if (attacked.size() != true_labels.size())
    throw Error("evaluation", "shape", "robust_accuracy: label count mismatch");

  Rng root(detect_seed);
  std::size_t good = 0;
  for (std::size_t i = 0; i < attacked.size(); ++i) {
    detector::DetectionRecord rec =
        detector::detect(attacked[i], bundle, policy, thresholds, root.split(i).seed());
    if (rec.reject || models::classify(bundle.classifier, attacked[i]).label == true_labels[i])
      ++good;
  }
  return static_cast<double>(good) / static_cast<double>(attacked.size());
}

}  // namespace beyond::eval
