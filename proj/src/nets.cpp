// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/nets.hpp"

#include <cmath>

#include "beyond/error.hpp"

namespace beyond::models {

namespace {

Tensor he_init(Shape shape, Index fan_in, Rng& rng) {
  Tensor t = ndt::normal(std::move(shape), 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
  return t;
}

ConvLayer make_conv(int in_ch, int out_ch, Rng& rng) {
  ConvLayer l;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.w = he_init({out_ch, in_ch, l.ksize, l.ksize}, in_ch * l.ksize * l.ksize, rng);
  l.b = ndt::zeros({out_ch});
  return l;
}

DenseLayer make_dense(int in, int out, Rng& rng) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.w = he_init({in, out}, in, rng);
  l.b = ndt::zeros({out});
  return l;
}

Trunk make_trunk(int in_channels, int height, int width, int feature_dim, Rng& rng) {
  if (height % 4 != 0 || width % 4 != 0)
    throw Error("models", "shape", "trunk input dims must be divisible by 4");
  Trunk t;
  t.in_channels = in_channels;
  t.height = height;
  t.width = width;
  t.feature_dim = feature_dim;
  t.c1 = make_conv(in_channels, 8, rng);
  t.c2 = make_conv(8, 16, rng);
  t.fc = make_dense(static_cast<int>(t.flat_dim()), feature_dim, rng);
  return t;
}

Var leaf_for(Tape& t, Tensor& param, bool trainable, ParamBind* bind) {
  Tensor copy = param;
  copy.requires_grad = trainable;
  Var v = t.leaf(std::move(copy));
  if (bind) bind->emplace_back(&param, v);
  return v;
}

Var leaf_const(Tape& t, const Tensor& param) {
  Tensor copy = param;
  copy.requires_grad = false;
  return t.leaf(std::move(copy));
}

}  // namespace

Index Trunk::flat_dim() const { return 16 * (height / 4) * (width / 4); }

ClassifierNet make_classifier(int in_channels, int height, int width, int num_classes,
                              std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xC1A55));
  ClassifierNet net;
  net.trunk = make_trunk(in_channels, height, width, 64, rng);
  net.out = make_dense(net.trunk.feature_dim, num_classes, rng);
  net.num_classes = num_classes;
  return net;
}

SSLEncoder make_ssl_encoder(int in_channels, int height, int width, std::uint64_t seed,
                            int feature_dim, int embed_dim, int pred_hidden) {
  Rng rng(Rng::mix(seed, 0x551));
  SSLEncoder enc;
  enc.trunk = make_trunk(in_channels, height, width, feature_dim, rng);
  enc.trunk.relu_features = false;
  enc.projector.l1 = make_dense(feature_dim, feature_dim, rng);
  enc.projector.l2 = make_dense(feature_dim, feature_dim, rng);
  enc.projector.l3 = make_dense(feature_dim, embed_dim, rng);
  enc.predictor.l1 = make_dense(embed_dim, pred_hidden, rng);
  enc.predictor.l2 = make_dense(pred_hidden, embed_dim, rng);
  enc.embed_dim = embed_dim;
  return enc;
}

ClassHead make_class_head(int feature_dim, int num_classes, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x4EAD));
  ClassHead head;
  head.fc = make_dense(feature_dim, num_classes, rng);
  head.num_classes = num_classes;
  return head;
}

TrunkVars register_trunk(Tape& t, const Trunk& net) {
  return TrunkVars{leaf_const(t, net.c1.w), leaf_const(t, net.c1.b), leaf_const(t, net.c2.w),
                   leaf_const(t, net.c2.b), leaf_const(t, net.fc.w), leaf_const(t, net.fc.b)};
}

TrunkVars register_trunk(Tape& t, Trunk& net, ParamBind& bind) {
  return TrunkVars{leaf_for(t, net.c1.w, true, &bind), leaf_for(t, net.c1.b, true, &bind),
                   leaf_for(t, net.c2.w, true, &bind), leaf_for(t, net.c2.b, true, &bind),
                   leaf_for(t, net.fc.w, true, &bind), leaf_for(t, net.fc.b, true, &bind)};
}

DenseVars register_dense(Tape& t, const DenseLayer& layer) {
  return DenseVars{leaf_const(t, layer.w), leaf_const(t, layer.b)};
}

DenseVars register_dense(Tape& t, DenseLayer& layer, ParamBind& bind) {
  return DenseVars{leaf_for(t, layer.w, true, &bind), leaf_for(t, layer.b, true, &bind)};
}

Var trunk_apply(const Trunk& net, const TrunkVars& v, Var x) {
  using namespace ndt;
  Var h1 = avg_pool2(relu(add_chanwise(conv2d(x, v.c1w, 1, 1), v.c1b)));
  Var h2 = avg_pool2(relu(add_chanwise(conv2d(h1, v.c2w, 1, 1), v.c2b)));
  Var flat = reshape(h2, {x.shape()[0], net.flat_dim()});
  Var feat = add_rowwise(matmul(flat, v.fcw), v.fcb);
  return net.relu_features ? relu(feat) : feat;
}

Var dense_apply(const DenseVars& v, Var x) {
  return ndt::add_rowwise(ndt::matmul(x, v.w), v.b);
}

ProjVars register_projector(Tape& t, const Projector& p) {
  return ProjVars{register_dense(t, p.l1), register_dense(t, p.l2), register_dense(t, p.l3)};
}

ProjVars register_projector(Tape& t, Projector& p, ParamBind& bind) {
  return ProjVars{register_dense(t, p.l1, bind), register_dense(t, p.l2, bind),
                  register_dense(t, p.l3, bind)};
}

PredVars register_predictor(Tape& t, Predictor& p, ParamBind& bind) {
  return PredVars{register_dense(t, p.l1, bind), register_dense(t, p.l2, bind)};
}

Var projector_apply(const ProjVars& v, Var features) {
  Var h1 = ndt::relu(dense_apply(v.l1, features));
  Var h2 = ndt::relu(dense_apply(v.l2, h1));
  return dense_apply(v.l3, h2);
}

Var predictor_apply(const PredVars& v, Var embed) {
  Var h1 = ndt::relu(dense_apply(v.l1, embed));
  return dense_apply(v.l2, h1);
}

int argmax_label(const Tensor& logits) {
  int best = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits.data[i] > logits.data[best]) best = static_cast<int>(i);
  return best;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw Error("models", "shape", "stack_images: empty batch");
  const Shape& s = images[0].shape;
  if (s.size() != 3) throw Error("models", "shape", "stack_images: images must be [c,h,w]");
  const Index per = images[0].size();
  Tensor out = ndt::zeros({static_cast<Index>(images.size()), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape != s)
      throw Error("models", "shape", "stack_images: inconsistent image shapes");
    out.data.segment(static_cast<Index>(i) * per, per) = images[i].data;
  }
  return out;
}

namespace {

void check_input(const Trunk& trunk, const Tensor& image, const char* where) {
  if (image.rank() != 3 || image.shape[0] != trunk.in_channels ||
      image.shape[1] != trunk.height || image.shape[2] != trunk.width)
    throw Error("models", "shape",
                std::string(where) + ": expected [" + std::to_string(trunk.in_channels) + "," +
                    std::to_string(trunk.height) + "," + std::to_string(trunk.width) + "], got " +
                    ndt::shape_str(image.shape));
}

Tensor classifier_logits_batch(const ClassifierNet& net, const Tensor& batch) {
  Tape t;
  Var x = t.constant(batch);
  TrunkVars tv = register_trunk(t, net.trunk);
  Var logits = dense_apply(register_dense(t, net.out), trunk_apply(net.trunk, tv, x));
  return logits.value();
}

Tensor row(const Tensor& m, Index i) {
  Tensor out = ndt::zeros({m.shape[1]});
  out.data = m.data.segment(i * m.shape[1], m.shape[1]);
  return out;
}

}  // namespace

Prediction classify(const ClassifierNet& net, const Tensor& image) {
  check_input(net.trunk, image, "classify");
  Tensor logits = classifier_logits_batch(net, stack_images({image}));
  Tensor lrow = row(logits, 0);
  return Prediction{argmax_label(lrow), lrow};
}

std::vector<Prediction> classify_batch(const ClassifierNet& net,
                                       const std::vector<Tensor>& images) {
  for (const Tensor& im : images) check_input(net.trunk, im, "classify");
  Tensor logits = classifier_logits_batch(net, stack_images(images));
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (Index i = 0; i < logits.shape[0]; ++i) {
    Tensor lrow = row(logits, i);
    out.push_back(Prediction{argmax_label(lrow), lrow});
  }
  return out;
}

int ssl_predict(const SSLEncoder& enc, const ClassHead& head, const Tensor& image) {
  return ssl_predict_batch(enc, head, {image})[0];
}

std::vector<int> ssl_predict_batch(const SSLEncoder& enc, const ClassHead& head,
                                   const std::vector<Tensor>& images) {
  for (const Tensor& im : images) check_input(enc.trunk, im, "ssl_predict");
  Tape t;
  Var x = t.constant(stack_images(images));
  Var feats = trunk_apply(enc.trunk, register_trunk(t, enc.trunk), x);
  Var logits = dense_apply(register_dense(t, head.fc), feats);
  std::vector<int> out;
  out.reserve(images.size());
  for (Index i = 0; i < logits.value().shape[0]; ++i)
    out.push_back(argmax_label(row(logits.value(), i)));
  return out;
}

Tensor represent(const SSLEncoder& enc, const Tensor& image) {
  return represent_batch(enc, {image})[0];
}

std::vector<Tensor> represent_batch(const SSLEncoder& enc, const std::vector<Tensor>& images) {
  for (const Tensor& im : images) check_input(enc.trunk, im, "represent");
  Tape t;
  Var x = t.constant(stack_images(images));
  Var feats = trunk_apply(enc.trunk, register_trunk(t, enc.trunk), x);
  Var embed = projector_apply(register_projector(t, enc.projector), feats);
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (Index i = 0; i < embed.value().shape[0]; ++i) {
    Tensor e = row(embed.value(), i);
    if (ndt::norm2(e) <= 1e-12)
      throw Error("models", "zero-embedding", "represent: embedding has zero norm");
    out.push_back(std::move(e));
  }
  return out;
}

Tensor features(const SSLEncoder& enc, const Tensor& image) {
  check_input(enc.trunk, image, "features");
  Tape t;
  Var x = t.constant(stack_images({image}));
  Var feats = trunk_apply(enc.trunk, register_trunk(t, enc.trunk), x);
  return row(feats.value(), 0);
}

std::uint64_t trunk_checksum(const Trunk& trunk) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto fold = [&h](const Tensor& t) { h = Rng::mix(h, ndt::content_hash(t)); };
  fold(trunk.c1.w);
  fold(trunk.c1.b);
  fold(trunk.c2.w);
  fold(trunk.c2.b);
  fold(trunk.fc.w);
  fold(trunk.fc.b);
  return h;
}

namespace {
void trunk_params(const std::string& prefix, Trunk& t,
                  std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + ".c1.w", &t.c1.w);
  out.emplace_back(prefix + ".c1.b", &t.c1.b);
  out.emplace_back(prefix + ".c2.w", &t.c2.w);
  out.emplace_back(prefix + ".c2.b", &t.c2.b);
  out.emplace_back(prefix + ".fc.w", &t.fc.w);
  out.emplace_back(prefix + ".fc.b", &t.fc.b);
}
void dense_params(const std::string& prefix, DenseLayer& l,
                  std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + ".w", &l.w);
  out.emplace_back(prefix + ".b", &l.b);
}
}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_params(ClassifierNet& net) {
  std::vector<std::pair<std::string, Tensor*>> out;
  trunk_params("clf.trunk", net.trunk, out);
  dense_params("clf.out", net.out, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_params(SSLEncoder& enc) {
  std::vector<std::pair<std::string, Tensor*>> out;
  trunk_params("ssl.trunk", enc.trunk, out);
  dense_params("ssl.proj.l1", enc.projector.l1, out);
  dense_params("ssl.proj.l2", enc.projector.l2, out);
  dense_params("ssl.proj.l3", enc.projector.l3, out);
  dense_params("ssl.pred.l1", enc.predictor.l1, out);
  dense_params("ssl.pred.l2", enc.predictor.l2, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_params(ClassHead& head) {
  std::vector<std::pair<std::string, Tensor*>> out;
  dense_params("head.fc", head.fc, out);
  return out;
}

}  // namespace beyond::models
