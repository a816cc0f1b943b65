// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/augment.hpp"

#include <cmath>

#include "beyond/error.hpp"

namespace beyond::augment {

using ndt::Array;
using ndt::Tape;
using ndt::Var;

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kRotation: return "rotation";
    case Kind::kColorJitter: return "color-jitter";
    case Kind::kTranslation: return "translation";
    case Kind::kHorizontalFlip: return "horizontal-flip";
  }
  return "?";
}

AugmentationSpec rotation_spec(double max_abs_degrees) {
  AugmentationSpec s;
  s.kind = Kind::kRotation;
  s.min_degrees = -max_abs_degrees;
  s.max_degrees = max_abs_degrees;
  s.differentiable = true;
  return s;
}

AugmentationSpec color_jitter_spec(double lo, double hi) {
  AugmentationSpec s;
  s.kind = Kind::kColorJitter;
  s.min_brightness = lo;
  s.max_brightness = hi;
  s.min_contrast = lo;
  s.max_contrast = hi;
  s.differentiable = true;
  return s;
}

AugmentationSpec translation_spec(int max_shift) {
  AugmentationSpec s;
  s.kind = Kind::kTranslation;
  s.max_shift = max_shift;
  s.differentiable = false;
  return s;
}

AugmentationSpec horizontal_flip_spec(double prob) {
  AugmentationSpec s;
  s.kind = Kind::kHorizontalFlip;
  s.flip_prob = prob;
  s.differentiable = false;
  return s;
}

Policy default_policy() { return {rotation_spec(15.0), color_jitter_spec(0.8, 1.2)}; }

Policy identity_policy() { return {rotation_spec(0.0)}; }

AugmentParams sample_params(const AugmentationSpec& spec, Rng& rng) {
  AugmentParams p;
  p.kind = spec.kind;
  switch (spec.kind) {
    case Kind::kRotation:
      p.degrees = rng.uniform(spec.min_degrees, spec.max_degrees);
      break;
    case Kind::kColorJitter:
      p.brightness = rng.uniform(spec.min_brightness, spec.max_brightness);
      p.contrast = rng.uniform(spec.min_contrast, spec.max_contrast);
      break;
    case Kind::kTranslation: {
      const int span = 2 * spec.max_shift + 1;
      p.dx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span))) - spec.max_shift;
      p.dy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span))) - spec.max_shift;
      break;
    }
    case Kind::kHorizontalFlip:
      p.flip = rng.bernoulli(spec.flip_prob);
      break;
  }
  return p;
}

Draw sample_draw(const Policy& policy, Rng& rng) {
  Draw d;
  d.reserve(policy.size());
  for (const AugmentationSpec& s : policy) d.push_back(sample_params(s, rng));
  return d;
}

void validate_params(const AugmentationSpec& spec, const AugmentParams& params) {
  auto fail = [&](const std::string& what) {
    throw Error("augment", "param-range",
                std::string(kind_name(spec.kind)) + ": " + what + " outside declared range");
  };
  if (params.kind != spec.kind)
    throw Error("augment", "param-range", "params kind does not match spec kind");
  switch (spec.kind) {
    case Kind::kRotation:
      if (params.degrees < spec.min_degrees || params.degrees > spec.max_degrees)
        fail("degrees " + std::to_string(params.degrees));
      break;
    case Kind::kColorJitter:
      if (params.brightness < spec.min_brightness || params.brightness > spec.max_brightness)
        fail("brightness " + std::to_string(params.brightness));
      if (params.contrast < spec.min_contrast || params.contrast > spec.max_contrast)
        fail("contrast " + std::to_string(params.contrast));
      break;
    case Kind::kTranslation:
      if (std::abs(params.dx) > spec.max_shift || std::abs(params.dy) > spec.max_shift)
        fail("shift (" + std::to_string(params.dx) + "," + std::to_string(params.dy) + ")");
      break;
    case Kind::kHorizontalFlip:
      break;
  }
}

namespace {

void check_image(const Tensor& image, const char* where) {
  if (image.rank() != 3)
    throw Error("augment", "shape",
                std::string(where) + ": image must be [c,h,w], got " + ndt::shape_str(image.shape));
  if ((image.data < -1e-12).any() || (image.data > 1.0 + 1e-12).any())
    throw Error("augment", "pixel-range", std::string(where) + ": pixels outside [0,1]");
}

// Linear part of one params application. Shared by the raw path, the linear
// operator, and (shape-wise) the tape path; arithmetic order matches the tape
// ops so the raw and recorded paths agree bit-exactly.
Array apply_params_linear(const AugmentParams& p, const Array& data, Index c, Index h, Index w) {
  switch (p.kind) {
    case Kind::kRotation: {
      ndt::PlanPtr plan = ndt::make_rotation_plan(h, w, p.degrees);
      Array out(data.size());
      for (Index i = 0; i < c; ++i)
        apply_plan_plane(*plan, data.data() + i * h * w, out.data() + i * h * w);
      return out;
    }
    case Kind::kColorJitter: {
      Array bright = data * p.brightness;
      const double m = bright.mean();
      return bright * p.contrast + m * (1.0 - p.contrast);
    }
    case Kind::kTranslation: {
      ndt::PlanPtr plan = ndt::make_shift_plan(h, w, p.dx, p.dy);
      Array out(data.size());
      for (Index i = 0; i < c; ++i)
        apply_plan_plane(*plan, data.data() + i * h * w, out.data() + i * h * w);
      return out;
    }
    case Kind::kHorizontalFlip: {
      if (!p.flip) return data;
      ndt::PlanPtr plan = ndt::make_hflip_plan(h, w);
      Array out(data.size());
      for (Index i = 0; i < c; ++i)
        apply_plan_plane(*plan, data.data() + i * h * w, out.data() + i * h * w);
      return out;
    }
  }
  throw Error("augment", "internal", "unhandled kind");
}

}  // namespace

Tensor augment_with(const Tensor& image, const AugmentationSpec& spec,
                    const AugmentParams& params) {
  check_image(image, "augment_with");
  validate_params(spec, params);
  const Index c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Array out = apply_params_linear(params, image.data, c, h, w);
  return Tensor(image.shape, out.max(0.0).min(1.0));
}

Tensor augment_one(const Tensor& image, const AugmentationSpec& spec, Rng& rng) {
  return augment_with(image, spec, sample_params(spec, rng));
}

Tensor apply_draw(const Draw& draw, const Tensor& image) {
  check_image(image, "apply_draw");
  const Index c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Array cur = image.data;
  for (const AugmentParams& p : draw)
    cur = apply_params_linear(p, cur, c, h, w).max(0.0).min(1.0);
  return Tensor(image.shape, std::move(cur));
}

Tensor apply_draw_linear(const Draw& draw, const Tensor& image) {
  if (image.rank() != 3)
    throw Error("augment", "shape", "apply_draw_linear: expected [c,h,w]");
  const Index c = image.shape[0], h = image.shape[1], w = image.shape[2];
  Array cur = image.data;
  for (const AugmentParams& p : draw) cur = apply_params_linear(p, cur, c, h, w);
  return Tensor(image.shape, std::move(cur));
}

Var apply_draw_on_tape(const Draw& draw, Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != 1)
    throw Error("augment", "shape", "apply_draw_on_tape: expected [1,c,h,w]");
  const Index h = s[2], w = s[3];
  Var cur = x;
  for (const AugmentParams& p : draw) {
    switch (p.kind) {
      case Kind::kRotation:
        cur = resample(cur, ndt::make_rotation_plan(h, w, p.degrees));
        break;
      case Kind::kColorJitter: {
        Var bright = scale(cur, p.brightness);
        Var m = mean(bright);
        cur = add(scale(bright, p.contrast), scale(m, 1.0 - p.contrast));
        break;
      }
      case Kind::kTranslation:
        cur = resample(cur, ndt::make_shift_plan(h, w, p.dx, p.dy));
        break;
      case Kind::kHorizontalFlip:
        if (p.flip) cur = resample(cur, ndt::make_hflip_plan(h, w));
        break;
    }
    cur = clamp(cur, 0.0, 1.0);
  }
  return cur;
}

NeighborSet generate_neighbors(const Tensor& image, int k, const Policy& policy,
                               std::uint64_t seed) {
  if (k < 1) throw Error("augment", "bad-k", "neighbor count must be >= 1");
  if (policy.empty()) throw Error("augment", "empty-policy", "augmentation policy is empty");
  check_image(image, "generate_neighbors");

  NeighborSet set;
  set.source = image;
  set.seed = seed;
  set.neighbors.reserve(static_cast<std::size_t>(k));
  set.draws.reserve(static_cast<std::size_t>(k));
  Rng root(seed);
  for (int i = 0; i < k; ++i) {
    Rng stream = root.split(static_cast<std::uint64_t>(i));
    Draw d = sample_draw(policy, stream);
    set.neighbors.push_back(apply_draw(d, image));
    set.draws.push_back(std::move(d));
  }
  return set;
}

ValidityReport augmentation_validity(const AugmentationSpec& spec, const LogitsFn& classifier,
                                     const std::vector<Tensor>& samples, double eps,
                                     std::uint64_t seed, int power_steps,
                                     double convergence_tol) {
  if (!spec.differentiable)
    throw Error("augment", "nondifferentiable",
                std::string("augmentation_validity: spec '") + kind_name(spec.kind) +
                    "' is not differentiable");
  if (eps <= 0.0) throw Error("augment", "bad-eps", "perturbation budget must be positive");
  if (samples.empty()) throw Error("augment", "empty-samples", "need at least one sample");

  ValidityReport report;
  report.bound = std::sqrt(2.0) / (2.0 * eps);

  Rng root(seed);
  bool all_converged = true;
  double acc = 0.0;

  for (std::size_t si = 0; si < samples.size(); ++si) {
    const Tensor& image = samples[si];
    check_image(image, "augmentation_validity");
    const Index c = image.shape[0], h = image.shape[1], w = image.shape[2];

    Rng stream = root.split(si);
    AugmentParams params = sample_params(spec, stream);

    Tape tape;
    Tensor x0(Shape{1, c, h, w}, image.data);
    x0.requires_grad = true;
    Var x = tape.leaf(x0, "x");
    Var aug = apply_draw_on_tape({params}, x);
    Var logits = classifier(tape, aug);
    if (logits.shape().size() == 2) logits = reshape(logits, {logits.shape()[1]});

    // Power iteration on A^T A where A is the Jacobian of x -> logits(W x).
    Tensor v = ndt::uniform(x0.shape, -1.0, 1.0, stream);
    double nv = ndt::norm2(v);
    v.data /= nv;

    double sigma = 0.0, sigma_prev = -1.0;
    bool converged = false;
    for (int step = 0; step < power_steps; ++step) {
      Tensor u = tape.jvp(logits, {{x, v}});
      sigma_prev = (step == 0) ? -1.0 : sigma;
      sigma = ndt::norm2(u);
      if (sigma < 1e-15) {  // zero Jacobian: estimate is exactly 0
        sigma = 0.0;
        converged = true;
        break;
      }
      ndt::Gradients g = tape.vjp(logits, u);
      Tensor w_vec = g.wrt(x);
      const double nw = ndt::norm2(w_vec);
      if (nw < 1e-30) {
        converged = true;
        break;
      }
      v = Tensor(x0.shape, w_vec.data / nw);
    }
    // Converged when the final two estimates agree to relative tolerance.
    if (!converged && sigma_prev >= 0.0)
      converged = std::abs(sigma - sigma_prev) <= convergence_tol * std::max(sigma, 1e-15);

    report.per_sample.push_back(sigma);
    report.converged.push_back(converged ? 1 : 0);
    all_converged = all_converged && converged;
    acc += sigma;
  }

  report.spectral_norm_estimate = acc / static_cast<double>(samples.size());
  if (!all_converged)
    report.valid = Validity::kIndeterminate;
  else
    report.valid =
        report.spectral_norm_estimate <= report.bound ? Validity::kValid : Validity::kInvalid;
  return report;
}

}  // namespace beyond::augment
