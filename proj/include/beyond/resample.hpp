// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <vector>

#include "beyond/tensor.hpp"

namespace beyond::ndt {

// A fixed linear map on an HxW pixel grid, applied independently per channel.
// Each output pixel is a weighted sum of up to four source pixels; pixels that
// fall outside the source grid contribute zero. Covers rotation (bilinear),
// integer translation, and horizontal flip.
struct ResamplePlan {
  struct Tap {
    int src = -1;  // flat index into the HxW grid, -1 = unused
    double w = 0.0;
  };

  Index height = 0;
  Index width = 0;
  std::vector<std::array<Tap, 4>> taps;  // one entry per output pixel

  Index npixels() const { return height * width; }
};

using PlanPtr = std::shared_ptr<const ResamplePlan>;

// Rotation by `degrees` about the image center with bilinear interpolation.
// degrees == 0 reproduces the input exactly.
PlanPtr make_rotation_plan(Index height, Index width, double degrees);

// Shift by (dx, dy) pixels; vacated pixels read zero.
PlanPtr make_shift_plan(Index height, Index width, int dx, int dy);

// Mirror across the vertical axis.
PlanPtr make_hflip_plan(Index height, Index width);

// Apply the plan to one channel plane (length H*W each).
void apply_plan_plane(const ResamplePlan& plan, const double* src, double* dst);

// Transpose action: scatter `dst_grad` back onto `src_grad` (accumulates).
void apply_plan_plane_transpose(const ResamplePlan& plan, const double* dst_grad,
                                double* src_grad);

}  // namespace beyond::ndt
