// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "beyond/resample.hpp"
#include "beyond/tensor.hpp"

namespace beyond::ndt {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddConst,
  kAddRowwise,
  kAddChanwise,
  kMatmul,
  kConv2d,
  kAvgPool2,
  kRelu,
  kMean,
  kSum,
  kL2Norm,
  kSoftmaxXent,
  kStopGrad,
  kClamp,
  kReshape,
  kResample,
  kCosine,
  kCosRowsMean,
  kTileRows,
  kConcatRows,
};

const char* op_name(Op op);

// One recorded operation: operand ids, primitive kind, and the forward value
// needed by the backward rule. Operand ids always precede the record's own id.
struct Node {
  Op op = Op::kLeaf;
  std::vector<int> args;
  Tensor value;
  bool requires_grad = false;
  double c0 = 0.0, c1 = 0.0;  // Scale / AddConst / Clamp parameters
  int stride = 1, pad = 0;    // Conv2d
  Shape shape_arg;            // Reshape target
  std::vector<int> targets;   // SoftmaxXent class labels
  PlanPtr plan;               // Resample
  std::string name;           // leaf name
};

class Tape;

// Handle to a recorded value. Cheap to copy; only valid with its tape alive.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Result of a reverse sweep. Gradients exist for every leaf; querying a leaf
// that did not require grad yields zeros and raises the detached flag.
class Gradients {
 public:
  const Tensor& wrt(Var leaf);
  const Tensor& wrt(const std::string& leaf_name);
  bool detached_requested() const { return detached_requested_; }

 private:
  friend class Tape;
  const Tensor& wrt_id(int id);
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;  // indexed by node id; filled only for leaves
  bool detached_requested_ = false;
};

// Recorded computation. Single-owner during construction; evaluation is eager
// so every node holds its forward value by the time it is visible.
class Tape {
 public:
  Var leaf(Tensor value, std::string name = "");
  Var constant(Tensor value, std::string name = "");

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const Tensor& value(int id) const { return node(id).value; }

  // Reverse sweep from a scalar output; errors on non-scalar outputs.
  Gradients backward(Var output) const;

  // Reverse sweep seeded with an explicit cotangent of the output's shape.
  Gradients vjp(Var output, const Tensor& seed) const;

  // Forward tangent sweep from leaf tangents to the output's tangent.
  Tensor jvp(Var output, const std::vector<std::pair<Var, Tensor>>& tangents) const;

  // Recompute every node from its operands and compare bit-exactly.
  bool verify_replay() const;

  Var record(Node n);

 private:
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> names_;

  friend class Gradients;
  Gradients reverse_sweep(int output_id, const Tensor& seed) const;
};

// ---- primitives (free functions; all record onto the operands' tape) ----

Var add(Var a, Var b);  // equal shapes, or scalar-tensor broadcast
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var neg(Var a);
Var matmul(Var a, Var b);             // [m,k] x [k,n]
Var add_rowwise(Var x, Var bias);     // [n,h] + [h]
Var add_chanwise(Var x, Var bias);    // [n,c,h,w] + [c]
Var conv2d(Var x, Var w, int stride = 1, int pad = 0);  // x [n,c,h,w], w [f,c,kh,kw]
Var avg_pool2(Var x);                 // 2x2 window, stride 2
Var relu(Var a);
Var mean(Var a);    // over all elements
Var sum(Var a);     // over all elements
Var l2norm(Var a);
Var softmax_xent(Var logits, std::vector<int> targets);  // [n,k] -> scalar mean loss
Var stop_grad(Var a);
Var clamp(Var a, double lo, double hi);
Var reshape(Var a, Shape s);
Var resample(Var x, PlanPtr plan);    // x [n,c,h,w]; fixed spatial linear map
Var cosine(Var a, Var b);             // vectors -> scalar similarity
Var cos_rows_mean(Var a, Var b);      // [n,d],[n,d] -> mean of row cosines
Var tile_rows(Var v, Index n);        // [d] -> [n,d]
Var concat_rows(const std::vector<Var>& xs);  // stack along dim 0

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace beyond::ndt
