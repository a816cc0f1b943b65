// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beyond/tape.hpp"
#include "beyond/tensor.hpp"

namespace beyond::models {

using ndt::Index;
using ndt::Shape;
using ndt::Tape;
using ndt::Tensor;
using ndt::Var;

struct ConvLayer {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  Tensor w;  // [out_ch, in_ch, k, k]
  Tensor b;  // [out_ch]
};

struct DenseLayer {
  int in = 0, out = 0;
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

// Shared convolutional front: two 3x3 conv blocks (relu, 2x2 average pool)
// then flatten and a dense layer to the feature dimension.
struct Trunk {
  int in_channels = 0, height = 0, width = 0;
  int feature_dim = 0;
  bool relu_features = true;  // signed features when false (SSL encoder)
  ConvLayer c1, c2;
  DenseLayer fc;
  Index flat_dim() const;
};

struct ClassifierNet {
  Trunk trunk;
  DenseLayer out;
  int num_classes = 0;
  double train_accuracy = 0.0, test_accuracy = 0.0;
};

struct Projector {
  DenseLayer l1, l2, l3;  // three FCs; output is the detector embedding
};

struct Predictor {
  DenseLayer l1, l2;  // bottleneck head used only during training
};

struct SSLEncoder {
  Trunk trunk;
  Projector projector;
  Predictor predictor;
  int embed_dim = 0;
  double initial_probe_loss = 0.0, final_probe_loss = 0.0;
};

struct ClassHead {
  DenseLayer fc;
  int num_classes = 0;
  double test_accuracy = 0.0;
};

struct ModelBundle {
  ClassifierNet classifier;
  SSLEncoder encoder;
  ClassHead head;
};

ClassifierNet make_classifier(int in_channels, int height, int width, int num_classes,
                              std::uint64_t seed);
SSLEncoder make_ssl_encoder(int in_channels, int height, int width, std::uint64_t seed,
                            int feature_dim = 64, int embed_dim = 32, int pred_hidden = 16);
ClassHead make_class_head(int feature_dim, int num_classes, std::uint64_t seed);

// ---- parameter registration and tape forwards ----

// Trainable-parameter binding: raw tensor and its leaf on the current tape.
using ParamBind = std::vector<std::pair<Tensor*, Var>>;

struct TrunkVars {
  Var c1w, c1b, c2w, c2b, fcw, fcb;
};
struct DenseVars {
  Var w, b;
};
struct ProjVars {
  DenseVars l1, l2, l3;
};
struct PredVars {
  DenseVars l1, l2;
};

// Frozen (constant) registration for inference paths.
TrunkVars register_trunk(Tape& t, const Trunk& net);
DenseVars register_dense(Tape& t, const DenseLayer& layer);
ProjVars register_projector(Tape& t, const Projector& p);
// Trainable registration; binds each parameter tensor to its tape leaf.
// Register once per tape so repeated applications share weights.
TrunkVars register_trunk(Tape& t, Trunk& net, ParamBind& bind);
DenseVars register_dense(Tape& t, DenseLayer& layer, ParamBind& bind);
ProjVars register_projector(Tape& t, Projector& p, ParamBind& bind);
PredVars register_predictor(Tape& t, Predictor& p, ParamBind& bind);

Var trunk_apply(const Trunk& net, const TrunkVars& v, Var x);  // [n,c,h,w] -> [n,feature]
Var dense_apply(const DenseVars& v, Var x);                    // [n,in] -> [n,out]
Var projector_apply(const ProjVars& v, Var features);
Var predictor_apply(const PredVars& v, Var embed);

// Whole-net inference forwards (fresh internal tape, no gradients).
struct Prediction {
  int label = 0;
  Tensor logits;
};

Prediction classify(const ClassifierNet& net, const Tensor& image);  // image [c,h,w]
std::vector<Prediction> classify_batch(const ClassifierNet& net, const std::vector<Tensor>& images);

int ssl_predict(const SSLEncoder& enc, const ClassHead& head, const Tensor& image);
std::vector<int> ssl_predict_batch(const SSLEncoder& enc, const ClassHead& head,
                                   const std::vector<Tensor>& images);

// Projector embedding h(f(x)); errors on zero embeddings.
Tensor represent(const SSLEncoder& enc, const Tensor& image);
std::vector<Tensor> represent_batch(const SSLEncoder& enc, const std::vector<Tensor>& images);

// Trunk features f(x), the space the feature-gap analysis lives in.
Tensor features(const SSLEncoder& enc, const Tensor& image);

// Argmax with ties broken toward the lowest index.
int argmax_label(const Tensor& logits);

// Batched [n,c,h,w] stack of [c,h,w] images.
Tensor stack_images(const std::vector<Tensor>& images);

// Content hash over all trunk parameters; guards the freezing contract.
std::uint64_t trunk_checksum(const Trunk& trunk);

// Every parameter tensor of each net, in declared (checkpoint) order.
std::vector<std::pair<std::string, Tensor*>> named_params(ClassifierNet& net);
std::vector<std::pair<std::string, Tensor*>> named_params(SSLEncoder& enc);
std::vector<std::pair<std::string, Tensor*>> named_params(ClassHead& head);

}  // namespace beyond::models
