// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beyond/augment.hpp"
#include "beyond/nets.hpp"

namespace beyond::models {

struct Dataset {
  std::vector<Tensor> images;  // [c,h,w], pixels in [0,1]
  std::vector<int> labels;
  std::size_t size() const { return images.size(); }
};

struct TrainConfig {
  int epochs = 5;
  int batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // SSL only: the predictor learns faster than the encoder, which keeps the
  // embedding space from collapsing in the absence of batch normalization.
  double predictor_lr_scale = 10.0;
  std::uint64_t seed = 1;
};

// Supervised classifier on the raw images; deterministic under seed.
// Throws models/divergence if the loss or any parameter goes non-finite.
ClassifierNet train_classifier(const Dataset& train, const Dataset& test, int num_classes,
                               const TrainConfig& cfg);

// SimSiam-style self-supervised encoder: two stochastic views per image,
// negative-cosine loss with a stop-gradient on the target branch.
// Throws models/collapse when embedding coordinates degenerate.
SSLEncoder train_ssl(const Dataset& train, const augment::Policy& aug_policy,
                     const TrainConfig& cfg, int feature_dim = 64, int embed_dim = 32);

// Linear probe on frozen trunk features. The trunk is checksummed before and
// after; any mutation throws models/trunk-mutation.
ClassHead train_class_head(const SSLEncoder& encoder, const Dataset& train, const Dataset& test,
                           int num_classes, const TrainConfig& cfg);

double classifier_accuracy(const ClassifierNet& net, const Dataset& data);
double head_accuracy(const SSLEncoder& enc, const ClassHead& head, const Dataset& data);

// Per-coordinate standard deviation of row-normalized embeddings over a batch;
// the collapse guard requires this to stay above 1e-4 during training.
double embedding_coordinate_std(const SSLEncoder& enc, const std::vector<Tensor>& images);

}  // namespace beyond::models
