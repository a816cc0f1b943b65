// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace beyond::models {

using ndt::Array;
using ndt::Gradients;
using ndt::Index;

namespace {

void check_dataset(const Dataset& d, const char* where) {
  if (d.images.empty()) throw Error("models", "empty-dataset", std::string(where) + ": no images");
  if (d.images.size() != d.labels.size())
    throw Error("models", "shape", std::string(where) + ": image/label count mismatch");
}

int distinct_classes(const Dataset& d) {
  std::vector<int> labels = d.labels;
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return static_cast<int>(labels.size());
}

// SGD with momentum over the bound parameters of one step's tape.
class SgdState {
 public:
  SgdState(double lr, double momentum, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParamBind& bind, Gradients& grads, const char* where,
            const std::vector<double>* lr_scale = nullptr) {
    if (velocity_.empty()) velocity_.resize(bind.size());
    if (velocity_.size() != bind.size())
      throw Error("models", "internal", "optimizer binding size changed between steps");
    for (std::size_t i = 0; i < bind.size(); ++i) {
      auto& [param, var] = bind[i];
      const Tensor& g = grads.wrt(var);
      if (velocity_[i].size() == 0) velocity_[i] = Array::Zero(param->size());
      if (weight_decay_ != 0.0)
        velocity_[i] = momentum_ * velocity_[i] + g.data + weight_decay_ * param->data;
      else
        velocity_[i] = momentum_ * velocity_[i] + g.data;
      const double lr = lr_ * (lr_scale ? (*lr_scale)[i] : 1.0);
      param->data -= lr * velocity_[i];
      if (!ndt::all_finite(param->data))
        throw Error("models", "divergence", std::string(where) + ": parameter went non-finite");
    }
  }

 private:
  double lr_, momentum_, weight_decay_ = 0.0;
  std::vector<Array> velocity_;
};

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng stream = rng.split(0x0E0C + static_cast<std::uint64_t>(epoch));
  stream.shuffle(order);
  return order;
}

struct Batch {
  Tensor images;  // [n,c,h,w]
  std::vector<int> labels;
};

Batch gather_batch(const Dataset& d, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
  std::vector<Tensor> images;
  Batch b;
  images.reserve(end - begin);
  b.labels.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    images.push_back(d.images[order[i]]);
    b.labels.push_back(d.labels[order[i]]);
  }
  b.images = stack_images(images);
  return b;
}

}  // namespace

double classifier_accuracy(const ClassifierNet& net, const Dataset& data) {
  check_dataset(data, "classifier_accuracy");
  std::size_t hits = 0;
  const std::size_t chunk = 64;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    const std::size_t end = std::min(at + chunk, data.size());
    std::vector<Tensor> images(data.images.begin() + static_cast<long>(at),
                               data.images.begin() + static_cast<long>(end));
    std::vector<Prediction> preds = classify_batch(net, images);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i].label == data.labels[at + i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double head_accuracy(const SSLEncoder& enc, const ClassHead& head, const Dataset& data) {
  check_dataset(data, "head_accuracy");
  std::size_t hits = 0;
  const std::size_t chunk = 64;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    const std::size_t end = std::min(at + chunk, data.size());
    std::vector<Tensor> images(data.images.begin() + static_cast<long>(at),
                               data.images.begin() + static_cast<long>(end));
    std::vector<int> preds = ssl_predict_batch(enc, head, images);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == data.labels[at + i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ClassifierNet train_classifier(const Dataset& train, const Dataset& test, int num_classes,
                               const TrainConfig& cfg) {
  check_dataset(train, "train_classifier");
  check_dataset(test, "train_classifier(test)");
  if (distinct_classes(train) < 2)
    throw Error("models", "degenerate-dataset", "train_classifier: needs >= 2 classes");

  const ndt::Shape& s = train.images[0].shape;
  ClassifierNet net = make_classifier(static_cast<int>(s[0]), static_cast<int>(s[1]),
                                      static_cast<int>(s[2]), num_classes, cfg.seed);
  Rng rng(cfg.seed);
  SgdState sgd(cfg.lr, cfg.momentum);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = epoch_order(train.size(), rng, epoch);
    for (std::size_t at = 0; at < train.size(); at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(at + static_cast<std::size_t>(cfg.batch), train.size());
      Batch b = gather_batch(train, order, at, end);
      try {
        ndt::Tape t;
        ParamBind bind;
        TrunkVars tv = register_trunk(t, net.trunk, bind);
        DenseVars ov = register_dense(t, net.out, bind);
        ndt::Var x = t.constant(b.images);
        ndt::Var loss =
            ndt::softmax_xent(dense_apply(ov, trunk_apply(net.trunk, tv, x)), b.labels);
        Gradients g = t.backward(loss);
        const std::string where =
            "epoch " + std::to_string(epoch) + " step " + std::to_string(at / cfg.batch);
        sgd.step(bind, g, where.c_str());
      } catch (const Error& e) {
        if (e.kind() == "nonfinite")
          throw Error("models", "divergence",
                      "train_classifier: loss non-finite at epoch " + std::to_string(epoch) +
                          " step " + std::to_string(at / cfg.batch));
        throw;
      }
    }
  }

  net.train_accuracy = classifier_accuracy(net, train);
  net.test_accuracy = classifier_accuracy(net, test);
  return net;
}

double embedding_coordinate_std(const SSLEncoder& enc, const std::vector<Tensor>& images) {
  std::vector<Tensor> embeds = represent_batch(enc, images);
  const Index d = embeds[0].size();
  const double n = static_cast<double>(embeds.size());
  Array mean = Array::Zero(d);
  for (Tensor& e : embeds) {
    const double nv = ndt::norm2(e);
    e.data /= std::max(nv, 1e-12);
    mean += e.data;
  }
  mean /= n;
  Array var = Array::Zero(d);
  for (const Tensor& e : embeds) var += (e.data - mean).square();
  var /= n;
  return std::sqrt(var.minCoeff());
}

namespace {

struct SslViews {
  Tensor v1, v2;  // [n,c,h,w]
};

SslViews make_views(const Dataset& d, const std::vector<std::size_t>& order, std::size_t begin,
                    std::size_t end, const augment::Policy& policy, Rng& view_rng) {
  std::vector<Tensor> a, b;
  a.reserve(end - begin);
  b.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    Rng stream = view_rng.split(order[i]);
    Rng s1 = stream.split(1), s2 = stream.split(2);
    a.push_back(augment::apply_draw(augment::sample_draw(policy, s1), d.images[order[i]]));
    b.push_back(augment::apply_draw(augment::sample_draw(policy, s2), d.images[order[i]]));
  }
  return SslViews{stack_images(a), stack_images(b)};
}

double ssl_probe_loss(SSLEncoder& enc, const SslViews& views) {
  ndt::Tape t;
  ParamBind bind;
  TrunkVars tv = register_trunk(t, enc.trunk, bind);
  ProjVars pv = register_projector(t, enc.projector, bind);
  PredVars prv = register_predictor(t, enc.predictor, bind);
  ndt::Var x1 = t.constant(views.v1), x2 = t.constant(views.v2);
  ndt::Var z1 = projector_apply(pv, trunk_apply(enc.trunk, tv, x1));
  ndt::Var z2 = projector_apply(pv, trunk_apply(enc.trunk, tv, x2));
  ndt::Var p1 = predictor_apply(prv, z1);
  ndt::Var p2 = predictor_apply(prv, z2);
  ndt::Var loss = ndt::scale(ndt::add(ndt::cos_rows_mean(p1, ndt::stop_grad(z2)),
                                      ndt::cos_rows_mean(p2, ndt::stop_grad(z1))),
                             -0.5);
  return loss.value().scalar();
}

}  // namespace

SSLEncoder train_ssl(const Dataset& train, const augment::Policy& aug_policy,
                     const TrainConfig& cfg, int feature_dim, int embed_dim) {
  check_dataset(train, "train_ssl");
  if (aug_policy.empty())
    throw Error("models", "empty-policy", "train_ssl: augmentation policy is empty");

  const ndt::Shape& s = train.images[0].shape;
  SSLEncoder enc = make_ssl_encoder(static_cast<int>(s[0]), static_cast<int>(s[1]),
                                    static_cast<int>(s[2]), cfg.seed, feature_dim, embed_dim);
  Rng rng(cfg.seed);

  // Fixed probe views measure start/end loss on identical inputs.
  const std::size_t probe_n = std::min<std::size_t>(train.size(), 128);
  std::vector<std::size_t> probe_idx(probe_n);
  std::iota(probe_idx.begin(), probe_idx.end(), 0);
  Rng probe_rng = rng.split(0x9406);
  SslViews probe = make_views(train, probe_idx, 0, probe_n, aug_policy, probe_rng);
  enc.initial_probe_loss = ssl_probe_loss(enc, probe);

  SgdState sgd(cfg.lr, cfg.momentum, cfg.weight_decay);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = epoch_order(train.size(), rng, epoch);
    Rng view_rng = rng.split(0x71E3 + static_cast<std::uint64_t>(epoch));
    for (std::size_t at = 0; at < train.size(); at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(at + static_cast<std::size_t>(cfg.batch), train.size());
      if (end - at < 2) continue;  // cosine stats need at least two rows
      SslViews views = make_views(train, order, at, end, aug_policy, view_rng);
      try {
        ndt::Tape t;
        ParamBind bind;
        TrunkVars tv = register_trunk(t, enc.trunk, bind);
        ProjVars pv = register_projector(t, enc.projector, bind);
        const std::size_t encoder_params = bind.size();
        PredVars prv = register_predictor(t, enc.predictor, bind);
        std::vector<double> lr_scale(bind.size(), 1.0);
        for (std::size_t i = encoder_params; i < bind.size(); ++i)
          lr_scale[i] = cfg.predictor_lr_scale;
        ndt::Var x1 = t.constant(views.v1), x2 = t.constant(views.v2);
        ndt::Var z1 = projector_apply(pv, trunk_apply(enc.trunk, tv, x1));
        ndt::Var z2 = projector_apply(pv, trunk_apply(enc.trunk, tv, x2));
        ndt::Var p1 = predictor_apply(prv, z1);
        ndt::Var p2 = predictor_apply(prv, z2);
        ndt::Var loss = ndt::scale(ndt::add(ndt::cos_rows_mean(p1, ndt::stop_grad(z2)),
                                            ndt::cos_rows_mean(p2, ndt::stop_grad(z1))),
                                   -0.5);
        Gradients g = t.backward(loss);
        const std::string where =
            "epoch " + std::to_string(epoch) + " step " + std::to_string(at / cfg.batch);
        sgd.step(bind, g, where.c_str(), &lr_scale);
      } catch (const Error& e) {
        if (e.kind() == "nonfinite")
          throw Error("models", "divergence",
                      "train_ssl: loss non-finite at epoch " + std::to_string(epoch));
        throw;
      }
    }

    // Collapse guard on a fixed evaluation batch.
    const std::size_t guard_n = std::min<std::size_t>(train.size(), 256);
    std::vector<Tensor> guard(train.images.begin(),
                              train.images.begin() + static_cast<long>(guard_n));
    if (embedding_coordinate_std(enc, guard) < 1e-4)
      throw Error("models", "collapse",
                  "train_ssl: embedding std below 1e-4 after epoch " + std::to_string(epoch));
  }

  enc.final_probe_loss = ssl_probe_loss(enc, probe);
  return enc;
}

ClassHead train_class_head(const SSLEncoder& encoder, const Dataset& train, const Dataset& test,
                           int num_classes, const TrainConfig& cfg) {
  check_dataset(train, "train_class_head");
  check_dataset(test, "train_class_head(test)");

  const std::uint64_t checksum_before = trunk_checksum(encoder.trunk);
  ClassHead head = make_class_head(encoder.trunk.feature_dim, num_classes, cfg.seed);

  // The trunk is frozen, so features are fixed; compute them once.
  std::vector<Tensor> feats;
  feats.reserve(train.size());
  const std::size_t chunk = 64;
  for (std::size_t at = 0; at < train.size(); at += chunk) {
    const std::size_t end = std::min(at + chunk, train.size());
    std::vector<Tensor> images(train.images.begin() + static_cast<long>(at),
                               train.images.begin() + static_cast<long>(end));
    ndt::Tape t;
    ndt::Var x = t.constant(stack_images(images));
    ndt::Var f = trunk_apply(encoder.trunk, register_trunk(t, encoder.trunk), x);
    const Tensor& fv = f.value();
    for (Index i = 0; i < fv.shape[0]; ++i) {
      Tensor one = ndt::zeros({fv.shape[1]});
      one.data = fv.data.segment(i * fv.shape[1], fv.shape[1]);
      feats.push_back(std::move(one));
    }
  }

  Rng rng(cfg.seed);
  SgdState sgd(cfg.lr, cfg.momentum);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = epoch_order(train.size(), rng, epoch);
    for (std::size_t at = 0; at < train.size(); at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(at + static_cast<std::size_t>(cfg.batch), train.size());
      Tensor fbatch = ndt::zeros({static_cast<Index>(end - at), feats[0].size()});
      std::vector<int> labels;
      labels.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) {
        fbatch.data.segment(static_cast<Index>(i - at) * feats[0].size(), feats[0].size()) =
            feats[order[i]].data;
        labels.push_back(train.labels[order[i]]);
      }
      try {
        ndt::Tape t;
        ParamBind bind;
        DenseVars hv = register_dense(t, head.fc, bind);
        ndt::Var loss = ndt::softmax_xent(dense_apply(hv, t.constant(fbatch)), labels);
        Gradients g = t.backward(loss);
        sgd.step(bind, g, "head step");
      } catch (const Error& e) {
        if (e.kind() == "nonfinite")
          throw Error("models", "divergence",
                      "train_class_head: loss non-finite at epoch " + std::to_string(epoch));
        throw;
      }
    }
  }

  if (trunk_checksum(encoder.trunk) != checksum_before)
    throw Error("models", "trunk-mutation", "train_class_head: frozen trunk was modified");

  head.test_accuracy = head_accuracy(encoder, head, test);
  return head;
}

}  // namespace beyond::models
