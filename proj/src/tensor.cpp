// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/tensor.hpp"

#include <cmath>
#include <cstring>

namespace beyond::ndt {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor zeros(Shape s) {
  Index n = numel(s);
  return Tensor(std::move(s), Array::Zero(n));
}

Tensor full(Shape s, double v) {
  Index n = numel(s);
  return Tensor(std::move(s), Array::Constant(n, v));
}

Tensor scalar_tensor(double v) { return full({1}, v); }

Tensor from_values(Shape s, std::vector<double> v) {
  Array a(static_cast<Index>(v.size()));
  for (Index i = 0; i < a.size(); ++i) a[i] = v[static_cast<std::size_t>(i)];
  return Tensor(std::move(s), std::move(a));
}

Tensor uniform(Shape s, double lo, double hi, Rng& rng) {
  Index n = numel(s);
  Array a(n);
  for (Index i = 0; i < n; ++i) a[i] = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(a));
}

Tensor normal(Shape s, double mean, double stddev, Rng& rng) {
  Index n = numel(s);
  Array a(n);
  for (Index i = 0; i < n; ++i) a[i] = rng.normal(mean, stddev);
  return Tensor(std::move(s), std::move(a));
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

bool all_finite(const Array& a) { return a.isFinite().all(); }

void ensure_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t.data))
    throw Error("ndt", "nonfinite", where + ": tensor contains NaN or Inf");
}

double dot(const Tensor& a, const Tensor& b) { return (a.data * b.data).sum(); }

double norm2(const Tensor& a) { return std::sqrt((a.data * a.data).sum()); }

double max_abs(const Tensor& a) { return a.size() == 0 ? 0.0 : a.data.abs().maxCoeff(); }

double cosine_value(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape, b.shape))
    throw Error("ndt", "shape",
                "cosine: lhs " + shape_str(a.shape) + " rhs " + shape_str(b.shape));
  double na = norm2(a), nb = norm2(b);
  if (na <= 1e-12 || nb <= 1e-12)
    throw Error("ndt", "degenerate", "cosine: zero-norm argument (degenerate embedding)");
  return dot(a, b) / (na * nb);
}

std::uint64_t content_hash(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data.data());
  std::size_t n = static_cast<std::size_t>(t.data.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace beyond::ndt
