// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "beyond/error.hpp"
#include "beyond/rng.hpp"

namespace beyond::ndt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;  // flat row-major storage
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Dense n-d value: shape plus flat row-major doubles. Data is always finite;
// operation boundaries reject NaN/Inf.
struct Tensor {
  Shape shape;
  Array data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, Array d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw Error("ndt", "shape", "tensor init: shape " + shape_str(shape) +
                                       " does not match data length " + std::to_string(data.size()));
  }

  Index size() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }
  double scalar() const { return data[0]; }
  Index dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  // Matrix view of a rank-2 tensor (rows x cols, row-major).
  Eigen::Map<const RowMat> mat() const {
    return Eigen::Map<const RowMat>(data.data(), shape.at(0), shape.at(1));
  }
  Eigen::Map<RowMat> mat() {
    return Eigen::Map<RowMat>(data.data(), shape.at(0), shape.at(1));
  }
};

Tensor zeros(Shape s);
Tensor full(Shape s, double v);
Tensor scalar_tensor(double v);
Tensor from_values(Shape s, std::vector<double> v);
Tensor uniform(Shape s, double lo, double hi, Rng& rng);
Tensor normal(Shape s, double mean, double stddev, Rng& rng);

bool same_shape(const Shape& a, const Shape& b);
bool all_finite(const Array& a);
void ensure_finite(const Tensor& t, const std::string& where);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double max_abs(const Tensor& a);

// Cosine similarity of two equal-length vectors; throws on zero-norm input.
// Tape-free counterpart of the differentiable op in tape.hpp.
double cosine_value(const Tensor& a, const Tensor& b);

// FNV-1a over the raw bytes of the data; used for freeze checks and checksums.
std::uint64_t content_hash(const Tensor& t);

}  // namespace beyond::ndt
