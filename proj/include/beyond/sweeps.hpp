// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beyond/metrics.hpp"

namespace beyond::eval {

enum class SweepKind { kNeighbors, kAlpha, kEpsilon, kAblation };

SweepKind sweep_kind_from_name(const std::string& name);
const char* sweep_kind_name(SweepKind kind);

struct SweepContext {
  const models::ModelBundle* bundle = nullptr;
  augment::Policy policy;                    // detection policy
  detector::DetectorThresholds thresholds;   // calibrated at the default k
  std::vector<Tensor> calibration_set;       // reused for per-k recalibration
  std::vector<Tensor> clean_eval;
  std::vector<Tensor> attack_sources;
  std::vector<int> attack_labels;
  attacks::AdaptiveConfig adaptive;  // base for alpha/epsilon/ablation sweeps
  attacks::AttackBudget pgd_budget;  // gray-box attack for the neighbors sweep
  std::uint64_t seed = 1;
};

struct SweepRow {
  double grid_value = 0.0;
  std::string mechanism = "combined";  // ablation rows: label / rep / combined
  double auc = 0.0;
  double tpr_at_fpr5 = 0.0;
  double robust_acc = 0.0;
};

struct SweepResult {
  SweepKind kind;
  std::vector<SweepRow> rows;
};

// One row per grid point (three for ablation, one per mechanism), each with
// AUC, TPR@FPR5%, and robust accuracy; deterministic under context.seed.
SweepResult run_sweep(SweepKind kind, const std::vector<double>& grid, const SweepContext& ctx);

// Continuous detector statistics for clean + adversarial sets. Scores are
// rank-normalized against the calibrated references.
struct ScoreSets {
  std::vector<ScoredSample> combined, label_only, rep_only;
};
ScoreSets score_samples(const std::vector<Tensor>& clean, const std::vector<Tensor>& adversarial,
                        const models::ModelBundle& bundle, const augment::Policy& policy,
                        const detector::DetectorThresholds& thresholds, int k, std::uint64_t seed,
                        const Provenance& adv_provenance);

// ---- implementation-cost accounting ----

struct CostReport {
  std::size_t params_classifier = 0, params_encoder = 0, params_head = 0, params_total = 0;
  double flops_classifier = 0, flops_encoder = 0, flops_projector = 0, flops_head = 0;
  double flops_total = 0;        // analytic per-sample forward cost, all nets
  double wall_time_seconds = 0;  // median of 5 timed detection passes
  double overall = 0;            // flops_total * params_total * wall_time
};

// Multiply-add-counted analytic FLOPs: dense 2*in*out, conv
// 2*k^2*c_in*c_out*h_out*w_out; pooling and activations excluded.
double dense_flops(const models::DenseLayer& layer);
double conv_flops(const models::ConvLayer& layer, ndt::Index h_out, ndt::Index w_out);

CostReport cost_report(models::ModelBundle& bundle, const std::vector<Tensor>& sample_batch,
                       const augment::Policy& policy, int k, std::uint64_t seed);

}  // namespace beyond::eval
