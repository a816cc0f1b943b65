// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "beyond/augment.hpp"

namespace beyond::cli {

struct DataConfig {
  int classes = 8;
  int per_class = 250;
  int height = 32, width = 32;
  double train_frac = 0.6;
  int calib_count = 200;
};

struct ModelsConfig {
  int clf_epochs = 6, clf_batch = 32;
  double clf_lr = 0.05;
  int ssl_epochs = 20, ssl_batch = 32;
  double ssl_lr = 0.01;
  double ssl_weight_decay = 1e-4;
  double predictor_lr_scale = 30.0;
  int head_epochs = 8, head_batch = 32;
  double head_lr = 0.1;
};

struct AugmentConfig {
  // detection policy
  double rotation_deg = 15.0;
  double jitter_lo = 0.8, jitter_hi = 1.2;
  // SSL training-view policy
  double train_rotation_deg = 25.0;
  double train_jitter_lo = 0.7, train_jitter_hi = 1.3;
  int train_translation = 2;
};

struct DetectorConfig {
  int k = 50;
  double target_fpr = 0.05;
};

struct AttacksConfig {
  std::string kind = "pgd";  // fgsm | pgd | adaptive | orthogonal | selection
  double eps = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 20;
  double alpha = 1.0;
  int k_eot = 8;
};

struct EvalConfig {
  int n_eval = 200;    // clean scoring samples
  int n_attack = 100;  // attacked samples
};

// Resolved run configuration: defaults, overlaid by --config JSON, overlaid
// by command-line flags. Serialized next to every run's outputs.
struct RunConfig {
  DataConfig data;
  ModelsConfig models;
  AugmentConfig aug;
  DetectorConfig detector;
  AttacksConfig attacks;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool force = false;

  nlohmann::json to_json() const;
  void merge_json(const nlohmann::json& j);
  void load_file(const std::string& path);

  // Derived per-purpose seed streams.
  std::uint64_t seed_for(const std::string& purpose) const;

  augment::Policy detection_policy() const;
  augment::Policy training_policy() const;
};

// Accepts "8/255" fractions and plain decimals.
double parse_eps(const std::string& text);

}  // namespace beyond::cli
