// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>
#include <cstring>

#include "beyond/augment.hpp"
#include "beyond/grad_check.hpp"

using namespace beyond;
using namespace beyond::augment;
using ndt::Index;
using ndt::Shape;
using ndt::Tape;
using ndt::Tensor;
using ndt::Var;

namespace {

Tensor rand_image(Index c, Index h, Index w, Rng& rng) {
  return ndt::uniform({c, h, w}, 0.0, 1.0, rng);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(),
                     sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("rotation by zero degrees is the identity") {
  Rng rng(1);
  Tensor img = rand_image(3, 7, 7, rng);
  AugmentParams p;
  p.kind = Kind::kRotation;
  p.degrees = 0.0;
  Tensor out = augment_with(img, rotation_spec(15.0), p);
  CHECK(bit_equal(out, img));
}

TEST_CASE("color jitter with unit factors is the identity") {
  Rng rng(2);
  Tensor img = rand_image(3, 5, 5, rng);
  AugmentParams p;
  p.kind = Kind::kColorJitter;
  p.brightness = 1.0;
  p.contrast = 1.0;
  Tensor out = augment_with(img, color_jitter_spec(0.8, 1.2), p);
  CHECK(bit_equal(out, img));
}

TEST_CASE("rotation by 90 degrees permutes pixels per the rotation map") {
  Rng rng(3);
  Tensor img = rand_image(1, 3, 3, rng);  // asymmetric random pattern
  AugmentParams p;
  p.kind = Kind::kRotation;
  p.degrees = 90.0;
  Tensor out = augment_with(img, rotation_spec(90.0), p);
  // Index-permutation oracle: out(y, x) = src(2 - x, y) for the centered map.
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x)
      CHECK(out.data[y * 3 + x] ==
            doctest::Approx(img.data[(2 - x) * 3 + y]).epsilon(1e-12));
}

TEST_CASE("parameters outside the declared range are rejected") {
  Rng rng(4);
  Tensor img = rand_image(1, 4, 4, rng);
  AugmentParams p;
  p.kind = Kind::kRotation;
  p.degrees = 30.0;
  CHECK_THROWS_AS((void)augment_with(img, rotation_spec(15.0), p), Error);

  AugmentParams j;
  j.kind = Kind::kColorJitter;
  j.brightness = 2.0;
  CHECK_THROWS_AS((void)augment_with(img, color_jitter_spec(0.8, 1.2), j), Error);
}

TEST_CASE("identity policy fixes every neighbor to the source") {
  Rng rng(5);
  Tensor img = rand_image(3, 8, 8, rng);
  NeighborSet set = generate_neighbors(img, 10, identity_policy(), 99);
  for (const Tensor& n : set.neighbors) CHECK(bit_equal(n, img));
}

TEST_CASE("neighbor generation is bit-exact under a fixed seed") {
  Rng rng(6);
  Tensor img = rand_image(3, 8, 8, rng);
  NeighborSet a = generate_neighbors(img, 50, default_policy(), 1234);
  NeighborSet b = generate_neighbors(img, 50, default_policy(), 1234);
  REQUIRE(a.k() == 50);
  for (int i = 0; i < a.k(); ++i)
    CHECK(bit_equal(a.neighbors[static_cast<std::size_t>(i)],
                    b.neighbors[static_cast<std::size_t>(i)]));
}

TEST_CASE("default policy produces distinct, perturbed neighbors") {
  Rng rng(7);
  Tensor img = rand_image(3, 8, 8, rng);
  NeighborSet set = generate_neighbors(img, 50, default_policy(), 77);
  double mean_dist = 0.0;
  for (const Tensor& n : set.neighbors) {
    Tensor diff(n.shape, n.data - img.data);
    mean_dist += ndt::norm2(diff);
    // pixel-range invariant
    CHECK(n.data.minCoeff() >= 0.0);
    CHECK(n.data.maxCoeff() <= 1.0);
  }
  mean_dist /= set.k();
  CHECK(mean_dist > 0.0);
  for (int i = 0; i < set.k(); ++i)
    for (int j = i + 1; j < set.k(); ++j)
      CHECK_FALSE(bit_equal(set.neighbors[static_cast<std::size_t>(i)],
                            set.neighbors[static_cast<std::size_t>(j)]));
}

TEST_CASE("errors: empty policy and bad neighbor count") {
  Rng rng(8);
  Tensor img = rand_image(3, 4, 4, rng);
  CHECK_THROWS_AS((void)generate_neighbors(img, 5, Policy{}, 1), Error);
  CHECK_THROWS_AS((void)generate_neighbors(img, 0, default_policy(), 1), Error);
}

TEST_CASE("clamping never increases distance to the source") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor img = rand_image(3, 6, 6, rng);
    Rng stream = rng.split(static_cast<std::uint64_t>(rep));
    Draw d = sample_draw(default_policy(), stream);
    Tensor lin = apply_draw_linear(d, img);
    Tensor clamped(lin.shape, lin.data.max(0.0).min(1.0));
    for (Index i = 0; i < img.size(); ++i)
      CHECK(std::abs(clamped.data[i] - img.data[i]) <=
            std::abs(lin.data[i] - img.data[i]) + 1e-15);
  }
}

TEST_CASE("raw application and the recorded tape path agree bit-exactly") {
  Rng rng(10);
  Tensor img = rand_image(3, 8, 8, rng);
  for (int rep = 0; rep < 8; ++rep) {
    Rng stream = rng.split(static_cast<std::uint64_t>(rep));
    Policy policy = default_policy();
    policy.push_back(translation_spec(2));
    policy.push_back(horizontal_flip_spec(0.5));
    Draw d = sample_draw(policy, stream);

    Tensor raw = apply_draw(d, img);

    Tape t;
    Var x = t.constant(Tensor(Shape{1, 3, 8, 8}, img.data));
    Var y = apply_draw_on_tape(d, x);
    CHECK(std::memcmp(raw.data.data(), y.value().data.data(),
                      sizeof(double) * static_cast<std::size_t>(raw.size())) == 0);
  }
}

TEST_CASE("gradients flow through differentiable augmentations") {
  Rng rng(11);
  Tensor img = ndt::uniform({1, 2, 6, 6}, 0.15, 0.85, rng);
  Rng stream = rng.split(3);
  Draw d = sample_draw(default_policy(), stream);

  auto fn = [&d](Tape& t, Var x) {
    (void)t;
    return ndt::l2norm(apply_draw_on_tape(d, x));
  };
  ndt::GradCheckReport r = ndt::gradient_check(fn, img, 1e-3);
  CAPTURE(r.max_rel_error);
  CHECK(r.pass);
}

// ---- augmentation validity ----

namespace {

// Tiny dense classifier over flattened pixels; trivially SVD-able.
struct ToyClassifier {
  Tensor w;  // [d, k]
  LogitsFn fn(double weight_scale = 1.0) const {
    Tensor scaled = w;
    scaled.data *= weight_scale;
    return [scaled](Tape& t, Var x) {
      Var flat = ndt::reshape(x, {1, scaled.shape[0]});
      return ndt::matmul(flat, t.constant(scaled));
    };
  }
};

}  // namespace

TEST_CASE("validity bound at eps 8/255 is sqrt(2)*255/16") {
  Rng rng(12);
  ToyClassifier clf{ndt::uniform({1 * 4 * 4, 3}, -0.2, 0.2, rng)};
  std::vector<Tensor> samples = {rand_image(1, 4, 4, rng)};
  ValidityReport r =
      augmentation_validity(rotation_spec(15.0), clf.fn(), samples, 8.0 / 255.0, 5);
  CHECK(r.bound == doctest::Approx(22.539).epsilon(1e-3));
}

TEST_CASE("constant classifier has zero estimate and is valid for any budget") {
  Rng rng(13);
  ToyClassifier clf{ndt::zeros({1 * 4 * 4, 3})};
  std::vector<Tensor> samples = {rand_image(1, 4, 4, rng), rand_image(1, 4, 4, rng)};
  ValidityReport r =
      augmentation_validity(rotation_spec(15.0), clf.fn(), samples, 8.0 / 255.0, 5);
  CHECK(r.spectral_norm_estimate == 0.0);
  CHECK(r.valid == Validity::kValid);
}

TEST_CASE("non-differentiable spec is rejected") {
  Rng rng(14);
  ToyClassifier clf{ndt::uniform({1 * 4 * 4, 3}, -0.2, 0.2, rng)};
  std::vector<Tensor> samples = {rand_image(1, 4, 4, rng)};
  CHECK_THROWS_AS(
      (void)augmentation_validity(translation_spec(2), clf.fn(), samples, 8.0 / 255.0, 5),
      Error);
}

TEST_CASE("power iteration tracks the dense-Jacobian SVD oracle within 5%") {
  // 8x8 single-channel instance; the augmented-classifier Jacobian is built
  // row by row from vjps and decomposed exactly.
  Rng rng(15);
  const Index d = 8 * 8;
  ToyClassifier clf{ndt::uniform({d, 4}, -0.4, 0.4, rng)};
  std::vector<Tensor> samples = {rand_image(1, 8, 8, rng)};
  const std::uint64_t seed = 21;

  ValidityReport r = augmentation_validity(rotation_spec(15.0), clf.fn(), samples, 0.05, seed);
  REQUIRE(r.per_sample.size() == 1);

  // Rebuild the same augmented map (same seed -> same sampled parameters).
  Rng stream = Rng(seed).split(0);
  AugmentParams params = sample_params(rotation_spec(15.0), stream);
  Tape t;
  Tensor x0(Shape{1, 1, 8, 8}, samples[0].data);
  x0.requires_grad = true;
  Var x = t.leaf(x0, "x");
  Var logits = ndt::reshape(clf.fn()(t, apply_draw_on_tape({params}, x)), {4});

  ndt::RowMat jac(4, d);
  for (Index row = 0; row < 4; ++row) {
    Tensor seed_vec = ndt::zeros({4});
    seed_vec.data[row] = 1.0;
    ndt::Gradients g = t.vjp(logits, seed_vec);
    Tensor gx = g.wrt(x);
    for (Index i = 0; i < d; ++i) jac(row, i) = gx.data[i];
  }
  Eigen::JacobiSVD<ndt::RowMat> svd(jac);
  const double exact = svd.singularValues()[0];

  CHECK(r.per_sample[0] <= exact * 1.05);
  CHECK(r.per_sample[0] >= exact * 0.95);

  // Lipschitz inflation: x100 weights flip validity at the 8/255 bound.
  ValidityReport base =
      augmentation_validity(rotation_spec(15.0), clf.fn(), samples, 8.0 / 255.0, seed);
  ValidityReport inflated =
      augmentation_validity(rotation_spec(15.0), clf.fn(100.0), samples, 8.0 / 255.0, seed);
  CHECK(base.valid == Validity::kValid);
  CHECK(inflated.valid == Validity::kInvalid);
  CHECK(inflated.spectral_norm_estimate > base.bound);
}
