// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "beyond/dataio.hpp"

namespace beyond::io {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double hue_deg, double sat, double val) {
  double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = val * (1.0 - sat);
  const double q = val * (1.0 - sat * f);
  const double t = val * (1.0 - sat * (1.0 - f));
  switch (i % 6) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

// Signed inside-ness of motif `shape` at offset (dx, dy) from the center,
// 1 inside, 0 outside, soft within one pixel of the boundary.
double motif_mask(int shape, double dx, double dy, double r) {
  auto soft = [](double signed_dist) {  // >0 inside
    return std::min(1.0, std::max(0.0, signed_dist + 0.5));
  };
  const double dist = std::sqrt(dx * dx + dy * dy);
  const double box = std::max(std::abs(dx), std::abs(dy));
  switch (shape % 8) {
    case 0:  // disk
      return soft(r - dist);
    case 1:  // ring
      return soft(r - dist) * soft(dist - 0.55 * r);
    case 2:  // cross
      return std::max(soft(0.3 * r - std::abs(dx)), soft(0.3 * r - std::abs(dy))) * soft(r - box);
    case 3:  // square
      return soft(0.8 * r - box);
    case 4:  // diamond
      return soft(r - (std::abs(dx) + std::abs(dy)));
    case 5:  // horizontal bar
      return soft(0.35 * r - std::abs(dy)) * soft(r - std::abs(dx));
    case 6:  // x-shape
      return std::max(soft(0.3 * r - std::abs(dx - dy) / std::sqrt(2.0)),
                      soft(0.3 * r - std::abs(dx + dy) / std::sqrt(2.0))) *
             soft(r - dist);
    default:  // frame
      return soft(0.9 * r - box) * soft(box - 0.5 * r);
  }
}

}  // namespace

DatasetContainer generate_synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > 16)
    throw Error("data-io", "unsupported-classes",
                "generate_synthetic_dataset: classes must be in [2,16]");
  if (cfg.per_class < 1 || cfg.channels != 3)
    throw Error("data-io", "bad-config", "generate_synthetic_dataset: need per_class >= 1, rgb");

  const int n = cfg.classes * cfg.per_class;
  const Index h = cfg.height, w = cfg.width;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);  // sample i has class i % classes
  Rng root(cfg.seed);
  Rng shuffle_rng = root.split(0x0DDE);
  shuffle_rng.shuffle(order);

  std::vector<Tensor> images;
  std::vector<int> labels;
  images.reserve(static_cast<std::size_t>(n));
  labels.reserve(static_cast<std::size_t>(n));

  for (int slot = 0; slot < n; ++slot) {
    const int sample_id = order[static_cast<std::size_t>(slot)];
    const int cls = sample_id % cfg.classes;
    Rng rng = root.split(0x5A17 + static_cast<std::uint64_t>(sample_id));

    // Class identity: shape family plus a well-separated base hue.
    const int shape = cls % 8;
    const double hue_base = cls * (360.0 / cfg.classes);
    const double hue_jitter = std::min(8.0, 90.0 / cfg.classes);
    const Rgb fg = hsv_to_rgb(hue_base + rng.uniform(-hue_jitter, hue_jitter), 0.85,
                              rng.uniform(0.8, 0.95));

    const double cy = (h - 1) / 2.0 + rng.uniform(-0.12, 0.12) * h;
    const double cx = (w - 1) / 2.0 + rng.uniform(-0.12, 0.12) * w;
    const double r = rng.uniform(0.26, 0.38) * std::min(h, w);

    Tensor img = ndt::zeros({3, h, w});
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double m = motif_mask(shape, x - cx, y - cy, r);
        const double bg = rng.uniform(0.05, 0.22);
        const Index at = y * w + x;
        img.data[0 * h * w + at] = bg + m * (fg.r - bg);
        img.data[1 * h * w + at] = bg + m * (fg.g - bg);
        img.data[2 * h * w + at] = bg + m * (fg.b - bg);
      }
    images.push_back(std::move(img));
    labels.push_back(cls);
  }

  DatasetContainer d = DatasetContainer::from_images(
      images, labels, cfg.classes,
      "synthetic seed=" + std::to_string(cfg.seed) + " classes=" + std::to_string(cfg.classes));
  return d;
}

}  // namespace beyond::io
