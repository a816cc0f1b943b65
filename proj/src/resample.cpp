// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/resample.hpp"

#include <cmath>

namespace beyond::ndt {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

PlanPtr make_rotation_plan(Index height, Index width, double degrees) {
  auto plan = std::make_shared<ResamplePlan>();
  plan->height = height;
  plan->width = width;
  plan->taps.resize(static_cast<std::size_t>(height * width));

  const double rad = degrees * kPi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;

  for (Index oy = 0; oy < height; ++oy) {
    for (Index ox = 0; ox < width; ++ox) {
      // Inverse map: sample the source at the back-rotated location.
      const double ry = static_cast<double>(oy) - cy;
      const double rx = static_cast<double>(ox) - cx;
      const double sx = c * rx + s * ry + cx;
      const double sy = -s * rx + c * ry + cy;

      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);

      auto& out = plan->taps[static_cast<std::size_t>(oy * width + ox)];
      int slot = 0;
      auto add = [&](int y, int x, double w) {
        if (w == 0.0) return;
        if (y < 0 || y >= height || x < 0 || x >= width) return;
        out[static_cast<std::size_t>(slot)] = {static_cast<int>(y * width + x), w};
        ++slot;
      };
      add(y0, x0, (1.0 - ax) * (1.0 - ay));
      add(y0, x0 + 1, ax * (1.0 - ay));
      add(y0 + 1, x0, (1.0 - ax) * ay);
      add(y0 + 1, x0 + 1, ax * ay);
    }
  }
  return plan;
}

PlanPtr make_shift_plan(Index height, Index width, int dx, int dy) {
  auto plan = std::make_shared<ResamplePlan>();
  plan->height = height;
  plan->width = width;
  plan->taps.resize(static_cast<std::size_t>(height * width));
  for (Index oy = 0; oy < height; ++oy) {
    for (Index ox = 0; ox < width; ++ox) {
      const Index sy = oy - dy, sx = ox - dx;
      if (sy >= 0 && sy < height && sx >= 0 && sx < width) {
        plan->taps[static_cast<std::size_t>(oy * width + ox)][0] = {
            static_cast<int>(sy * width + sx), 1.0};
      }
    }
  }
  return plan;
}

PlanPtr make_hflip_plan(Index height, Index width) {
  auto plan = std::make_shared<ResamplePlan>();
  plan->height = height;
  plan->width = width;
  plan->taps.resize(static_cast<std::size_t>(height * width));
  for (Index oy = 0; oy < height; ++oy)
    for (Index ox = 0; ox < width; ++ox)
      plan->taps[static_cast<std::size_t>(oy * width + ox)][0] = {
          static_cast<int>(oy * width + (width - 1 - ox)), 1.0};
  return plan;
}

void apply_plan_plane(const ResamplePlan& plan, const double* src, double* dst) {
  const Index n = plan.npixels();
  for (Index p = 0; p < n; ++p) {
    double acc = 0.0;
    for (const auto& tap : plan.taps[static_cast<std::size_t>(p)]) {
      if (tap.src < 0) break;
      acc += tap.w * src[tap.src];
    }
    dst[p] = acc;
  }
}

void apply_plan_plane_transpose(const ResamplePlan& plan, const double* dst_grad,
                                double* src_grad) {
  const Index n = plan.npixels();
  for (Index p = 0; p < n; ++p) {
    const double g = dst_grad[p];
    if (g == 0.0) continue;
    for (const auto& tap : plan.taps[static_cast<std::size_t>(p)]) {
      if (tap.src < 0) break;
      src_grad[tap.src] += tap.w * g;
    }
  }
}

}  // namespace beyond::ndt
