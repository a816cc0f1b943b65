// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/detector.hpp"

#include <algorithm>
#include <cmath>

namespace beyond::detector {

using models::ModelBundle;
using ndt::Index;

int SampleStats::ind_label() const {
  int c = 0;
  for (int l : neighbor_labels) c += (l == clf_label);
  return c;
}

int SampleStats::ind_rep(double tau_cos) const {
  int c = 0;
  for (double v : cosines) c += (v >= tau_cos);
  return c;
}

double SampleStats::label_stat() const {
  return static_cast<double>(ind_label()) / static_cast<double>(neighbor_labels.size());
}

double SampleStats::rep_stat() const {
  double acc = 0.0;
  for (double v : cosines) acc += v;
  return acc / static_cast<double>(cosines.size());
}

SampleStats neighbor_stats(const Tensor& x, const ModelBundle& bundle,
                           const augment::NeighborSet& neighbors) {
  SampleStats stats;
  stats.clf_label = models::classify(bundle.classifier, x).label;

  // One batched SSL pass over all neighbors for labels and embeddings.
  ndt::Tape t;
  ndt::Var batch = t.constant(models::stack_images(neighbors.neighbors));
  ndt::Var feats =
      models::trunk_apply(bundle.encoder.trunk, models::register_trunk(t, bundle.encoder.trunk), batch);
  ndt::Var logits = models::dense_apply(models::register_dense(t, bundle.head.fc), feats);
  ndt::Var embeds = models::projector_apply(models::register_projector(t, bundle.encoder.projector), feats);

  Tensor x_embed = models::represent(bundle.encoder, x);

  const Tensor& lv = logits.value();
  const Tensor& ev = embeds.value();
  const Index k = lv.shape[0], nc = lv.shape[1], d = ev.shape[1];

  double soft = 0.0;
  for (Index i = 0; i < k; ++i) {
    Tensor lrow = ndt::zeros({nc});
    lrow.data = lv.data.segment(i * nc, nc);
    stats.neighbor_labels.push_back(models::argmax_label(lrow));

    // log-softmax of the classifier's label under this neighbor's head logits
    double m = lrow.data.maxCoeff();
    double z = (lrow.data - m).exp().sum();
    soft += (lrow.data[stats.clf_label] - m) - std::log(z);

    Tensor erow = ndt::zeros({d});
    erow.data = ev.data.segment(i * d, d);
    stats.cosines.push_back(ndt::cosine_value(x_embed, erow));
  }
  stats.soft_label_stat = soft / static_cast<double>(k);
  return stats;
}

int label_consistency_count(const Tensor& x, const augment::NeighborSet& neighbors,
                            const ModelBundle& bundle) {
  return neighbor_stats(x, bundle, neighbors).ind_label();
}

int representation_similarity_count(const Tensor& x, const augment::NeighborSet& neighbors,
                                    const ModelBundle& bundle, double tau_cos) {
  return neighbor_stats(x, bundle, neighbors).ind_rep(tau_cos);
}

double ecdf(const std::vector<double>& sorted_ref, double v) {
  if (sorted_ref.empty()) return 0.0;
  auto it = std::upper_bound(sorted_ref.begin(), sorted_ref.end(), v);
  return static_cast<double>(it - sorted_ref.begin()) / static_cast<double>(sorted_ref.size());
}

double combined_score(const DetectorThresholds& th, double label_stat, double rep_stat) {
  const double benign = std::min(ecdf(th.ref_label_stat, label_stat), ecdf(th.ref_rep_stat, rep_stat));
  return 1.0 - benign;
}

namespace {

// Lower quantile by nearest rank: smallest value with CDF >= q.
double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.empty()) return 0.0;
  const double rank = q * static_cast<double>(values.size());
  std::size_t idx = rank <= 1.0 ? 0 : static_cast<std::size_t>(std::ceil(rank)) - 1;
  idx = std::min(idx, values.size() - 1);
  return values[idx];
}

// Largest threshold T in [0, k] whose solo rejection rate (count < T) stays
// within `budget`; exhaustive scan over the integer range.
int scan_threshold(const std::vector<int>& counts, int k, double budget) {
  const double n = static_cast<double>(counts.size());
  int best = 0;
  for (int t = 0; t <= k; ++t) {
    int rejected = 0;
    for (int c : counts) rejected += (c < t);
    if (static_cast<double>(rejected) / n <= budget) best = t;
  }
  return best;
}

void moments(const std::vector<double>& v, double* mean, double* stddev) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size());
  *mean = m;
  *stddev = std::max(std::sqrt(var), 1e-9);
}

}  // namespace

DetectorThresholds calibrate_thresholds(const std::vector<Tensor>& clean_set,
                                        const ModelBundle& bundle, const augment::Policy& policy,
                                        int k, double target_fpr, std::uint64_t seed,
                                        std::size_t min_calibration_size) {
  if (clean_set.size() < min_calibration_size)
    throw Error("detector", "calibration-size",
                "calibrate_thresholds: need >= " + std::to_string(min_calibration_size) +
                    " clean samples, got " + std::to_string(clean_set.size()));
  if (target_fpr < 0.0 || target_fpr > 1.0)
    throw Error("detector", "bad-fpr", "target_fpr must lie in [0,1]");

  DetectorThresholds th;
  th.target_fpr = target_fpr;
  th.k = k;

  Rng root(seed);
  std::vector<SampleStats> stats;
  std::vector<double> all_cosines;
  stats.reserve(clean_set.size());
  for (std::size_t i = 0; i < clean_set.size(); ++i) {
    augment::NeighborSet nb =
        augment::generate_neighbors(clean_set[i], k, policy, root.split(i).seed());
    stats.push_back(neighbor_stats(clean_set[i], bundle, nb));
    for (double c : stats.back().cosines) all_cosines.push_back(c);
  }

  th.tau_cos = quantile(all_cosines, target_fpr);

  std::vector<int> label_counts, rep_counts;
  std::vector<double> label_stats, rep_stats, soft_stats;
  for (const SampleStats& s : stats) {
    label_counts.push_back(s.ind_label());
    rep_counts.push_back(s.ind_rep(th.tau_cos));
    label_stats.push_back(s.label_stat());
    rep_stats.push_back(s.rep_stat());
    soft_stats.push_back(s.soft_label_stat);
  }

  if (target_fpr == 0.0) {
    th.t_label = 0;
    th.t_rep = 0;
  } else {
    th.t_label = scan_threshold(label_counts, k, target_fpr / 2.0);
    th.t_rep = scan_threshold(rep_counts, k, target_fpr / 2.0);
  }

  int rejected = 0;
  for (std::size_t i = 0; i < stats.size(); ++i)
    rejected += (label_counts[i] < th.t_label || rep_counts[i] < th.t_rep);
  th.calibration_fpr = static_cast<double>(rejected) / static_cast<double>(stats.size());
  if (th.calibration_fpr > target_fpr)
    throw Error("detector", "unreachable-fpr",
                "calibration cannot reach target; achieved FPR " +
                    std::to_string(th.calibration_fpr));

  std::sort(label_stats.begin(), label_stats.end());
  std::sort(rep_stats.begin(), rep_stats.end());
  th.ref_label_stat = std::move(label_stats);
  th.ref_rep_stat = rep_stats;
  moments(soft_stats, &th.soft_label_mean, &th.soft_label_std);
  moments(rep_stats, &th.rep_mean, &th.rep_std);
  return th;
}

DetectionRecord detect(const Tensor& x, const ModelBundle& bundle,
                       const DetectorThresholds& thresholds,
                       const augment::NeighborSet& neighbors) {
  if (neighbors.k() != thresholds.k)
    throw Error("detector", "k-mismatch",
                "detect: thresholds calibrated for k=" + std::to_string(thresholds.k) +
                    " but neighbor set has k=" + std::to_string(neighbors.k()));

  SampleStats stats = neighbor_stats(x, bundle, neighbors);
  DetectionRecord rec;
  rec.ind_label = stats.ind_label();
  rec.ind_rep = stats.ind_rep(thresholds.tau_cos);
  rec.reject = rec.ind_label < thresholds.t_label || rec.ind_rep < thresholds.t_rep;
  rec.neighbor_labels = stats.neighbor_labels;
  rec.cosines = stats.cosines;
  rec.label_match.reserve(stats.neighbor_labels.size());
  for (int l : stats.neighbor_labels)
    rec.label_match.push_back(l == stats.clf_label ? 1 : 0);
  rec.label_stat = stats.label_stat();
  rec.rep_stat = stats.rep_stat();
  rec.score = combined_score(thresholds, rec.label_stat, rec.rep_stat);
  return rec;
}

DetectionRecord detect(const Tensor& x, const ModelBundle& bundle, const augment::Policy& policy,
                       const DetectorThresholds& thresholds, std::uint64_t neighbor_seed) {
  augment::NeighborSet nb = augment::generate_neighbors(x, thresholds.k, policy, neighbor_seed);
  return detect(x, bundle, thresholds, nb);
}

std::vector<DetectionRecord> detect_batch(const std::vector<Tensor>& xs, const ModelBundle& bundle,
                                          const augment::Policy& policy,
                                          const DetectorThresholds& thresholds,
                                          std::uint64_t seed) {
  Rng root(seed);
  std::vector<DetectionRecord> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    out.push_back(detect(xs[i], bundle, policy, thresholds, root.split(i).seed()));
  return out;
}

}  // namespace beyond::detector
