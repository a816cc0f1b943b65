// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "beyond/tape.hpp"
#include "beyond/tensor.hpp"

namespace beyond::augment {

using ndt::Index;
using ndt::Shape;
using ndt::Tensor;

enum class Kind : std::uint8_t { kRotation, kColorJitter, kTranslation, kHorizontalFlip };

const char* kind_name(Kind k);

// One augmentation family with its sampling ranges. Rotation and color jitter
// are the differentiable kinds used by gradient-based attacks.
struct AugmentationSpec {
  Kind kind = Kind::kRotation;
  double min_degrees = 0.0, max_degrees = 0.0;        // rotation
  double min_brightness = 1.0, max_brightness = 1.0;  // color jitter
  double min_contrast = 1.0, max_contrast = 1.0;
  int max_shift = 0;       // translation, pixels
  double flip_prob = 0.5;  // horizontal flip
  bool differentiable = false;
};

AugmentationSpec rotation_spec(double max_abs_degrees);
AugmentationSpec color_jitter_spec(double lo, double hi);
AugmentationSpec translation_spec(int max_shift);
AugmentationSpec horizontal_flip_spec(double prob = 0.5);

using Policy = std::vector<AugmentationSpec>;

// Rotation within +/-15 degrees plus brightness/contrast in [0.8, 1.2].
Policy default_policy();
// Rotation pinned to 0 degrees; maps every input to itself.
Policy identity_policy();

// Concrete sampled parameters for one spec.
struct AugmentParams {
  Kind kind = Kind::kRotation;
  double degrees = 0.0;
  double brightness = 1.0, contrast = 1.0;
  int dx = 0, dy = 0;
  bool flip = false;
};

// One neighbor's parameters: one AugmentParams per policy entry, applied in order.
using Draw = std::vector<AugmentParams>;

AugmentParams sample_params(const AugmentationSpec& spec, Rng& rng);
Draw sample_draw(const Policy& policy, Rng& rng);
// Throws augment/param-range when params fall outside the spec's ranges.
void validate_params(const AugmentationSpec& spec, const AugmentParams& params);

// Single-spec application with freshly sampled parameters; output in [0,1].
Tensor augment_one(const Tensor& image, const AugmentationSpec& spec, Rng& rng);
// Single-spec application with explicit parameters (validated against spec).
Tensor augment_with(const Tensor& image, const AugmentationSpec& spec,
                    const AugmentParams& params);

// Whole-draw application: each entry's linear map followed by a [0,1] clamp.
Tensor apply_draw(const Draw& draw, const Tensor& image);  // image [c,h,w]
// The pure linear part W of the augmentation (no clamping); acts on any
// image-shaped vector, e.g. a perturbation.
Tensor apply_draw_linear(const Draw& draw, const Tensor& image);
// Differentiable on-tape application for a single image [1,c,h,w].
ndt::Var apply_draw_on_tape(const Draw& draw, ndt::Var x);

// k augmented variants of one input plus the parameters that made them.
// Regenerating with the same seed reproduces the set bit-exactly.
struct NeighborSet {
  Tensor source;
  std::vector<Tensor> neighbors;
  std::vector<Draw> draws;
  std::uint64_t seed = 0;
  int k() const { return static_cast<int>(neighbors.size()); }
};

NeighborSet generate_neighbors(const Tensor& image, int k, const Policy& policy,
                               std::uint64_t seed);

// ---- augmentation validity (spectral-norm criterion) ----

enum class Validity : std::uint8_t { kValid, kInvalid, kIndeterminate };

struct ValidityReport {
  double spectral_norm_estimate = 0.0;  // mean over samples
  double bound = 0.0;                   // sqrt(2) / (2 eps)
  Validity valid = Validity::kIndeterminate;
  std::vector<double> per_sample;
  std::vector<char> converged;
};

// Builds logits on a tape from an image variable [1,c,h,w].
using LogitsFn = std::function<ndt::Var(ndt::Tape&, ndt::Var)>;

// Estimates the spectral norm of the Jacobian of x -> logits(W x) by power
// iteration on jvp/vjp products, one augmentation draw per sample, and
// compares the sample mean against sqrt(2)/(2 eps).
ValidityReport augmentation_validity(const AugmentationSpec& spec, const LogitsFn& classifier,
                                     const std::vector<Tensor>& samples, double eps,
                                     std::uint64_t seed, int power_steps = 20,
                                     double convergence_tol = 1e-2);

}  // namespace beyond::augment
