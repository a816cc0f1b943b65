// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/tape.hpp"

#include <cmath>
#include <cstring>

namespace beyond::ndt {

namespace {

[[noreturn]] void shape_error(const char* prim, const Shape& a, const Shape& b) {
  throw Error("ndt", "shape",
              std::string(prim) + ": lhs " + shape_str(a) + " rhs " + shape_str(b));
}

[[noreturn]] void shape_error1(const char* prim, const Shape& a, const std::string& why) {
  throw Error("ndt", "shape", std::string(prim) + ": " + why + " (got " + shape_str(a) + ")");
}

inline Index idx4(Index n, Index c, Index h, Index w, Index C, Index H, Index W) {
  return ((n * C + c) * H + h) * W + w;
}

// Binary elementwise shapes: equal, or one side scalar.
Shape binary_shape(const char* prim, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(a) == 1) return b;
  if (numel(b) == 1) return a;
  shape_error(prim, a, b);
}

struct ConvDims {
  Index n, c, h, w, f, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const char* prim, const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 4) shape_error1(prim, xs, "input must be rank 4 [n,c,h,w]");
  if (ws.size() != 4) shape_error1(prim, ws, "kernel must be rank 4 [f,c,kh,kw]");
  if (xs[1] != ws[1]) shape_error(prim, xs, ws);
  ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, stride, pad};
  const Index hp = d.h + 2 * pad - d.kh;
  const Index wp = d.w + 2 * pad - d.kw;
  if (hp < 0 || wp < 0 || stride < 1) shape_error(prim, xs, ws);
  d.ho = hp / stride + 1;
  d.wo = wp / stride + 1;
  return d;
}

Array softmax_rows(const Tensor& logits) {
  const Index n = logits.shape[0], k = logits.shape[1];
  Array probs(n * k);
  for (Index i = 0; i < n; ++i) {
    double m = logits.data[i * k];
    for (Index j = 1; j < k; ++j) m = std::max(m, logits.data[i * k + j]);
    double z = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double e = std::exp(logits.data[i * k + j] - m);
      probs[i * k + j] = e;
      z += e;
    }
    for (Index j = 0; j < k; ++j) probs[i * k + j] /= z;
  }
  return probs;
}

struct CosParts {
  double na, nb, dot, cos;
};

CosParts cos_parts(const double* a, const double* b, Index n) {
  double na = 0, nb = 0, d = 0;
  for (Index i = 0; i < n; ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    d += a[i] * b[i];
  }
  CosParts p{std::sqrt(na), std::sqrt(nb), d, 0.0};
  if (p.na <= 1e-12 || p.nb <= 1e-12)
    throw Error("ndt", "degenerate", "cosine: zero-norm argument (degenerate embedding)");
  p.cos = p.dot / (p.na * p.nb);
  return p;
}

// Forward evaluation of one node from operand values. Shared by recording,
// replay verification, and (for linear ops) the tangent sweep.
Tensor eval_node(const Node& n, const std::vector<const Tensor*>& a) {
  switch (n.op) {
    case Op::kLeaf:
      return n.value;
    case Op::kAdd: {
      const Tensor &x = *a[0], &y = *a[1];
      Shape s = binary_shape("add", x.shape, y.shape);
      if (x.shape == y.shape) return Tensor(s, x.data + y.data);
      if (x.is_scalar()) return Tensor(s, x.data[0] + y.data);
      return Tensor(s, x.data + y.data[0]);
    }
    case Op::kSub: {
      const Tensor &x = *a[0], &y = *a[1];
      Shape s = binary_shape("sub", x.shape, y.shape);
      if (x.shape == y.shape) return Tensor(s, x.data - y.data);
      if (x.is_scalar()) return Tensor(s, x.data[0] - y.data);
      return Tensor(s, x.data - y.data[0]);
    }
    case Op::kMul: {
      const Tensor &x = *a[0], &y = *a[1];
      Shape s = binary_shape("mul", x.shape, y.shape);
      if (x.shape == y.shape) return Tensor(s, x.data * y.data);
      if (x.is_scalar()) return Tensor(s, x.data[0] * y.data);
      return Tensor(s, x.data * y.data[0]);
    }
    case Op::kScale:
      return Tensor(a[0]->shape, a[0]->data * n.c0);
    case Op::kAddConst:
      return Tensor(a[0]->shape, a[0]->data + n.c0);
    case Op::kAddRowwise: {
      const Tensor &x = *a[0], &b = *a[1];
      Tensor out(x.shape, x.data);
      const Index rows = x.shape[0], cols = x.shape[1];
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) out.data[i * cols + j] += b.data[j];
      return out;
    }
    case Op::kAddChanwise: {
      const Tensor &x = *a[0], &b = *a[1];
      Tensor out(x.shape, x.data);
      const Index N = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
      for (Index i = 0; i < N; ++i)
        for (Index c = 0; c < C; ++c) {
          const double bv = b.data[c];
          double* p = out.data.data() + (i * C + c) * HW;
          for (Index q = 0; q < HW; ++q) p[q] += bv;
        }
      return out;
    }
    case Op::kMatmul: {
      const Tensor &x = *a[0], &y = *a[1];
      Tensor out = zeros({x.shape[0], y.shape[1]});
      out.mat().noalias() = x.mat() * y.mat();
      return out;
    }
    case Op::kConv2d: {
      const Tensor &x = *a[0], &w = *a[1];
      ConvDims d = conv_dims("conv2d", x.shape, w.shape, n.stride, n.pad);
      Tensor out = zeros({d.n, d.f, d.ho, d.wo});
      const double* xp = x.data.data();
      const double* wp = w.data.data();
      double* op = out.data.data();
      for (Index in = 0; in < d.n; ++in)
        for (Index f = 0; f < d.f; ++f)
          for (Index oh = 0; oh < d.ho; ++oh)
            for (Index ow = 0; ow < d.wo; ++ow) {
              double acc = 0.0;
              for (Index c = 0; c < d.c; ++c)
                for (Index ky = 0; ky < d.kh; ++ky) {
                  const Index ih = oh * d.stride - d.pad + ky;
                  if (ih < 0 || ih >= d.h) continue;
                  const double* xrow = xp + idx4(in, c, ih, 0, d.c, d.h, d.w);
                  const double* wrow = wp + idx4(f, c, ky, 0, d.c, d.kh, d.kw);
                  for (Index kx = 0; kx < d.kw; ++kx) {
                    const Index iw = ow * d.stride - d.pad + kx;
                    if (iw < 0 || iw >= d.w) continue;
                    acc += xrow[iw] * wrow[kx];
                  }
                }
              op[idx4(in, f, oh, ow, d.f, d.ho, d.wo)] = acc;
            }
      return out;
    }
    case Op::kAvgPool2: {
      const Tensor& x = *a[0];
      const Index N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      const Index Ho = H / 2, Wo = W / 2;
      Tensor out = zeros({N, C, Ho, Wo});
      for (Index in = 0; in < N; ++in)
        for (Index c = 0; c < C; ++c)
          for (Index oh = 0; oh < Ho; ++oh)
            for (Index ow = 0; ow < Wo; ++ow) {
              const double s = x.data[idx4(in, c, 2 * oh, 2 * ow, C, H, W)] +
                               x.data[idx4(in, c, 2 * oh, 2 * ow + 1, C, H, W)] +
                               x.data[idx4(in, c, 2 * oh + 1, 2 * ow, C, H, W)] +
                               x.data[idx4(in, c, 2 * oh + 1, 2 * ow + 1, C, H, W)];
              out.data[idx4(in, c, oh, ow, C, Ho, Wo)] = s * 0.25;
            }
      return out;
    }
    case Op::kRelu:
      return Tensor(a[0]->shape, a[0]->data.max(0.0));
    case Op::kMean:
      return scalar_tensor(a[0]->data.mean());
    case Op::kSum:
      return scalar_tensor(a[0]->data.sum());
    case Op::kL2Norm:
      return scalar_tensor(std::sqrt((a[0]->data * a[0]->data).sum()));
    case Op::kSoftmaxXent: {
      const Tensor& logits = *a[0];
      const Index rows = logits.shape[0], k = logits.shape[1];
      Array probs = softmax_rows(logits);
      double loss = 0.0;
      for (Index i = 0; i < rows; ++i) {
        const int t = n.targets[static_cast<std::size_t>(i)];
        loss -= std::log(std::max(probs[i * k + t], 1e-300));
      }
      return scalar_tensor(loss / static_cast<double>(rows));
    }
    case Op::kStopGrad:
      return *a[0];
    case Op::kClamp:
      return Tensor(a[0]->shape, a[0]->data.max(n.c0).min(n.c1));
    case Op::kReshape:
      return Tensor(n.shape_arg, a[0]->data);
    case Op::kResample: {
      const Tensor& x = *a[0];
      const Index N = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
      Tensor out = zeros(x.shape);
      for (Index i = 0; i < N * C; ++i)
        apply_plan_plane(*n.plan, x.data.data() + i * HW, out.data.data() + i * HW);
      return out;
    }
    case Op::kCosine: {
      const Tensor &x = *a[0], &y = *a[1];
      CosParts p = cos_parts(x.data.data(), y.data.data(), x.size());
      return scalar_tensor(p.cos);
    }
    case Op::kCosRowsMean: {
      const Tensor &x = *a[0], &y = *a[1];
      const Index rows = x.shape[0], d = x.shape[1];
      double acc = 0.0;
      for (Index i = 0; i < rows; ++i)
        acc += cos_parts(x.data.data() + i * d, y.data.data() + i * d, d).cos;
      return scalar_tensor(acc / static_cast<double>(rows));
    }
    case Op::kTileRows: {
      const Tensor& v = *a[0];
      const Index d = v.size(), rows = n.shape_arg[0];
      Tensor out = zeros({rows, d});
      for (Index i = 0; i < rows; ++i)
        std::memcpy(out.data.data() + i * d, v.data.data(), sizeof(double) * static_cast<std::size_t>(d));
      return out;
    }
    case Op::kConcatRows: {
      Index rows = 0;
      Shape rest = a[0]->shape;
      for (const Tensor* t : a) rows += t->shape[0];
      rest[0] = rows;
      Tensor out = zeros(rest);
      Index off = 0;
      for (const Tensor* t : a) {
        std::memcpy(out.data.data() + off, t->data.data(),
                    sizeof(double) * static_cast<std::size_t>(t->size()));
        off += t->size();
      }
      return out;
    }
  }
  throw Error("ndt", "internal", "unhandled op");
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kAddRowwise: return "add_rowwise";
    case Op::kAddChanwise: return "add_chanwise";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kAvgPool2: return "avg_pool2";
    case Op::kRelu: return "relu";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kL2Norm: return "l2norm";
    case Op::kSoftmaxXent: return "softmax_xent";
    case Op::kStopGrad: return "stop_grad";
    case Op::kClamp: return "clamp";
    case Op::kReshape: return "reshape";
    case Op::kResample: return "resample";
    case Op::kCosine: return "cosine";
    case Op::kCosRowsMean: return "cos_rows_mean";
    case Op::kTileRows: return "tile_rows";
    case Op::kConcatRows: return "concat_rows";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Shape& Var::shape() const { return tape_->value(id_).shape; }

Var Tape::leaf(Tensor value, std::string name) {
  ensure_finite(value, "leaf");
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = value.requires_grad;
  n.value = std::move(value);
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  if (!nodes_.back().name.empty()) names_[nodes_.back().name] = id;
  return Var(this, id);
}

Var Tape::constant(Tensor value, std::string name) {
  value.requires_grad = false;
  return leaf(std::move(value), std::move(name));
}

Var Tape::record(Node n) {
  std::vector<const Tensor*> args;
  args.reserve(n.args.size());
  bool rg = false;
  for (int id : n.args) {
    const Node& arg = node(id);
    args.push_back(&arg.value);
    rg = rg || arg.requires_grad;
  }
  n.value = eval_node(n, args);
  ensure_finite(n.value, op_name(n.op));
  n.requires_grad = (n.op == Op::kStopGrad) ? false : rg;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

bool Tape::verify_replay() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf) continue;
    std::vector<const Tensor*> args;
    for (int id : n.args) args.push_back(&node(id).value);
    Tensor again = eval_node(n, args);
    if (again.shape != n.value.shape) return false;
    if (std::memcmp(again.data.data(), n.value.data.data(),
                    sizeof(double) * static_cast<std::size_t>(again.size())) != 0)
      return false;
  }
  return true;
}

// ---- reverse sweep ----

Gradients Tape::reverse_sweep(int output_id, const Tensor& seed) const {
  std::vector<Array> adj(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);

  auto bump = [&](int id, const Array& g) {
    // Anything without requires_grad is pruned; detached leaves stay at zero.
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    if (!has[static_cast<std::size_t>(id)]) {
      adj[static_cast<std::size_t>(id)] = g;
      has[static_cast<std::size_t>(id)] = 1;
    } else {
      adj[static_cast<std::size_t>(id)] += g;
    }
  };

  bump(output_id, seed.data);

  for (int id = output_id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!has[static_cast<std::size_t>(id)] || n.op == Op::kLeaf || !n.requires_grad) continue;
    const Array& g = adj[static_cast<std::size_t>(id)];
    auto argv = [&](int i) -> const Tensor& { return node(n.args[static_cast<std::size_t>(i)]).value; };
    auto argid = [&](int i) { return n.args[static_cast<std::size_t>(i)]; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        const Tensor &x = argv(0), &y = argv(1);
        if (x.shape == y.shape) {
          bump(argid(0), g);
          bump(argid(1), g);
        } else if (x.is_scalar()) {
          bump(argid(0), Array::Constant(1, g.sum()));
          bump(argid(1), g);
        } else {
          bump(argid(0), g);
          bump(argid(1), Array::Constant(1, g.sum()));
        }
        break;
      }
      case Op::kSub: {
        const Tensor &x = argv(0), &y = argv(1);
        if (x.shape == y.shape) {
          bump(argid(0), g);
          bump(argid(1), -g);
        } else if (x.is_scalar()) {
          bump(argid(0), Array::Constant(1, g.sum()));
          bump(argid(1), -g);
        } else {
          bump(argid(0), g);
          bump(argid(1), Array::Constant(1, -g.sum()));
        }
        break;
      }
      case Op::kMul: {
        const Tensor &x = argv(0), &y = argv(1);
        if (x.shape == y.shape) {
          bump(argid(0), g * y.data);
          bump(argid(1), g * x.data);
        } else if (x.is_scalar()) {
          bump(argid(0), Array::Constant(1, (g * y.data).sum()));
          bump(argid(1), g * x.data[0]);
        } else {
          bump(argid(0), g * y.data[0]);
          bump(argid(1), Array::Constant(1, (g * x.data).sum()));
        }
        break;
      }
      case Op::kScale:
        bump(argid(0), g * n.c0);
        break;
      case Op::kAddConst:
        bump(argid(0), g);
        break;
      case Op::kAddRowwise: {
        const Index rows = argv(0).shape[0], cols = argv(0).shape[1];
        bump(argid(0), g);
        Array gb = Array::Zero(cols);
        for (Index i = 0; i < rows; ++i)
          for (Index j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        bump(argid(1), gb);
        break;
      }
      case Op::kAddChanwise: {
        const Shape& xs = argv(0).shape;
        const Index N = xs[0], C = xs[1], HW = xs[2] * xs[3];
        bump(argid(0), g);
        Array gb = Array::Zero(C);
        for (Index i = 0; i < N; ++i)
          for (Index c = 0; c < C; ++c) {
            const double* p = g.data() + (i * C + c) * HW;
            double acc = 0.0;
            for (Index q = 0; q < HW; ++q) acc += p[q];
            gb[c] += acc;
          }
        bump(argid(1), gb);
        break;
      }
      case Op::kMatmul: {
        const Tensor &x = argv(0), &y = argv(1);
        Eigen::Map<const RowMat> G(g.data(), n.value.shape[0], n.value.shape[1]);
        Array gx(x.size()), gy(y.size());
        Eigen::Map<RowMat>(gx.data(), x.shape[0], x.shape[1]).noalias() =
            G * y.mat().transpose();
        Eigen::Map<RowMat>(gy.data(), y.shape[0], y.shape[1]).noalias() =
            x.mat().transpose() * G;
        bump(argid(0), gx);
        bump(argid(1), gy);
        break;
      }
      case Op::kConv2d: {
        const Tensor &x = argv(0), &w = argv(1);
        ConvDims d = conv_dims("conv2d", x.shape, w.shape, n.stride, n.pad);
        Array gx = Array::Zero(x.size());
        Array gw = Array::Zero(w.size());
        const double* xp = x.data.data();
        const double* wp = w.data.data();
        for (Index in = 0; in < d.n; ++in)
          for (Index f = 0; f < d.f; ++f)
            for (Index oh = 0; oh < d.ho; ++oh)
              for (Index ow = 0; ow < d.wo; ++ow) {
                const double go = g[idx4(in, f, oh, ow, d.f, d.ho, d.wo)];
                if (go == 0.0) continue;
                for (Index c = 0; c < d.c; ++c)
                  for (Index ky = 0; ky < d.kh; ++ky) {
                    const Index ih = oh * d.stride - d.pad + ky;
                    if (ih < 0 || ih >= d.h) continue;
                    const Index xbase = idx4(in, c, ih, 0, d.c, d.h, d.w);
                    const Index wbase = idx4(f, c, ky, 0, d.c, d.kh, d.kw);
                    for (Index kx = 0; kx < d.kw; ++kx) {
                      const Index iw = ow * d.stride - d.pad + kx;
                      if (iw < 0 || iw >= d.w) continue;
                      gx[xbase + iw] += go * wp[wbase + kx];
                      gw[wbase + kx] += go * xp[xbase + iw];
                    }
                  }
              }
        bump(argid(0), gx);
        bump(argid(1), gw);
        break;
      }
      case Op::kAvgPool2: {
        const Shape& xs = argv(0).shape;
        const Index N = xs[0], C = xs[1], H = xs[2], W = xs[3];
        const Index Ho = H / 2, Wo = W / 2;
        Array gx = Array::Zero(argv(0).size());
        for (Index in = 0; in < N; ++in)
          for (Index c = 0; c < C; ++c)
            for (Index oh = 0; oh < Ho; ++oh)
              for (Index ow = 0; ow < Wo; ++ow) {
                const double q = 0.25 * g[idx4(in, c, oh, ow, C, Ho, Wo)];
                gx[idx4(in, c, 2 * oh, 2 * ow, C, H, W)] += q;
                gx[idx4(in, c, 2 * oh, 2 * ow + 1, C, H, W)] += q;
                gx[idx4(in, c, 2 * oh + 1, 2 * ow, C, H, W)] += q;
                gx[idx4(in, c, 2 * oh + 1, 2 * ow + 1, C, H, W)] += q;
              }
        bump(argid(0), gx);
        break;
      }
      case Op::kRelu: {
        const Tensor& x = argv(0);
        bump(argid(0), g * (x.data > 0.0).cast<double>());
        break;
      }
      case Op::kMean:
        bump(argid(0), Array::Constant(argv(0).size(), g[0] / static_cast<double>(argv(0).size())));
        break;
      case Op::kSum:
        bump(argid(0), Array::Constant(argv(0).size(), g[0]));
        break;
      case Op::kL2Norm: {
        const Tensor& x = argv(0);
        const double nv = std::max(n.value.data[0], 1e-12);
        bump(argid(0), x.data * (g[0] / nv));
        break;
      }
      case Op::kSoftmaxXent: {
        const Tensor& logits = argv(0);
        const Index rows = logits.shape[0], k = logits.shape[1];
        Array probs = softmax_rows(logits);
        const double scale = g[0] / static_cast<double>(rows);
        for (Index i = 0; i < rows; ++i)
          probs[i * k + n.targets[static_cast<std::size_t>(i)]] -= 1.0;
        bump(argid(0), probs * scale);
        break;
      }
      case Op::kStopGrad:
        break;
      case Op::kClamp: {
        const Tensor& x = argv(0);
        Array mask = ((x.data >= n.c0) && (x.data <= n.c1)).cast<double>();
        bump(argid(0), g * mask);
        break;
      }
      case Op::kReshape:
        bump(argid(0), g);
        break;
      case Op::kResample: {
        const Shape& xs = argv(0).shape;
        const Index NC = xs[0] * xs[1], HW = xs[2] * xs[3];
        Array gx = Array::Zero(argv(0).size());
        for (Index i = 0; i < NC; ++i)
          apply_plan_plane_transpose(*n.plan, g.data() + i * HW, gx.data() + i * HW);
        bump(argid(0), gx);
        break;
      }
      case Op::kCosine: {
        const Tensor &x = argv(0), &y = argv(1);
        CosParts p = cos_parts(x.data.data(), y.data.data(), x.size());
        const double g0 = g[0];
        Array gx = (y.data / (p.na * p.nb) - x.data * (p.cos / (p.na * p.na))) * g0;
        Array gy = (x.data / (p.na * p.nb) - y.data * (p.cos / (p.nb * p.nb))) * g0;
        bump(argid(0), gx);
        bump(argid(1), gy);
        break;
      }
      case Op::kCosRowsMean: {
        const Tensor &x = argv(0), &y = argv(1);
        const Index rows = x.shape[0], d = x.shape[1];
        const double g0 = g[0] / static_cast<double>(rows);
        Array gx = Array::Zero(x.size()), gy = Array::Zero(y.size());
        for (Index i = 0; i < rows; ++i) {
          const double* xr = x.data.data() + i * d;
          const double* yr = y.data.data() + i * d;
          CosParts p = cos_parts(xr, yr, d);
          for (Index j = 0; j < d; ++j) {
            gx[i * d + j] = (yr[j] / (p.na * p.nb) - xr[j] * (p.cos / (p.na * p.na))) * g0;
            gy[i * d + j] = (xr[j] / (p.na * p.nb) - yr[j] * (p.cos / (p.nb * p.nb))) * g0;
          }
        }
        bump(argid(0), gx);
        bump(argid(1), gy);
        break;
      }
      case Op::kTileRows: {
        const Index d = argv(0).size(), rows = n.shape_arg[0];
        Array gv = Array::Zero(d);
        for (Index i = 0; i < rows; ++i)
          for (Index j = 0; j < d; ++j) gv[j] += g[i * d + j];
        bump(argid(0), gv);
        break;
      }
      case Op::kConcatRows: {
        Index off = 0;
        for (std::size_t i = 0; i < n.args.size(); ++i) {
          const Tensor& t = argv(static_cast<int>(i));
          bump(n.args[i], Array(g.segment(off, t.size())));
          off += t.size();
        }
        break;
      }
    }
  }

  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kLeaf) continue;
    if (has[id])
      out.grads_[id] = Tensor(n.value.shape, std::move(adj[id]));
    else
      out.grads_[id] = zeros(n.value.shape);
  }
  return out;
}

Gradients Tape::backward(Var output) const {
  if (output.tape() != this) throw Error("ndt", "tape", "backward: output from another tape");
  const Tensor& v = value(output.id());
  if (!v.is_scalar())
    throw Error("ndt", "nonscalar",
                "backward: output must be scalar, got " + shape_str(v.shape));
  return reverse_sweep(output.id(), scalar_tensor(1.0));
}

Gradients Tape::vjp(Var output, const Tensor& seed) const {
  if (output.tape() != this) throw Error("ndt", "tape", "vjp: output from another tape");
  if (seed.shape != value(output.id()).shape)
    shape_error("vjp-seed", seed.shape, value(output.id()).shape);
  return reverse_sweep(output.id(), seed);
}

// ---- forward tangent sweep ----

Tensor Tape::jvp(Var output, const std::vector<std::pair<Var, Tensor>>& tangents) const {
  if (output.tape() != this) throw Error("ndt", "tape", "jvp: output from another tape");
  const int out_id = output.id();
  std::vector<Array> tan(static_cast<std::size_t>(out_id) + 1);

  for (const auto& [v, t] : tangents) {
    if (v.tape() != this) throw Error("ndt", "tape", "jvp: tangent leaf from another tape");
    if (node(v.id()).op != Op::kLeaf) throw Error("ndt", "tape", "jvp: tangent target not a leaf");
    if (t.shape != node(v.id()).value.shape)
      shape_error("jvp-tangent", t.shape, node(v.id()).value.shape);
    if (v.id() <= out_id) tan[static_cast<std::size_t>(v.id())] = t.data;
  }

  auto tz = [&](int id) -> Array {
    auto& slot = tan[static_cast<std::size_t>(id)];
    if (slot.size() == 0) return Array::Zero(node(id).value.size());
    return slot;
  };

  for (int id = 0; id <= out_id; ++id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::kLeaf) continue;
    auto argid = [&](int i) { return n.args[static_cast<std::size_t>(i)]; };
    auto argv = [&](int i) -> const Tensor& { return node(argid(i)).value; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      // Linear ops: tangent rule is the op itself applied to tangents.
      case Op::kAdd:
      case Op::kSub:
      case Op::kAddRowwise:
      case Op::kAddChanwise:
      case Op::kAvgPool2:
      case Op::kMean:
      case Op::kSum:
      case Op::kReshape:
      case Op::kResample:
      case Op::kTileRows:
      case Op::kConcatRows:
      case Op::kScale: {
        std::vector<Tensor> targs;
        std::vector<const Tensor*> ptrs;
        targs.reserve(n.args.size());
        for (std::size_t i = 0; i < n.args.size(); ++i)
          targs.emplace_back(argv(static_cast<int>(i)).shape, tz(n.args[i]));
        for (const Tensor& t : targs) ptrs.push_back(&t);
        tan[static_cast<std::size_t>(id)] = eval_node(n, ptrs).data;
        break;
      }
      case Op::kAddConst:
        tan[static_cast<std::size_t>(id)] = tz(argid(0));
        break;
      case Op::kMul: {
        const Tensor &x = argv(0), &y = argv(1);
        Array tx = tz(argid(0)), ty = tz(argid(1));
        if (x.shape == y.shape)
          tan[static_cast<std::size_t>(id)] = tx * y.data + x.data * ty;
        else if (x.is_scalar())
          tan[static_cast<std::size_t>(id)] = tx[0] * y.data + x.data[0] * ty;
        else
          tan[static_cast<std::size_t>(id)] = tx * y.data[0] + x.data * ty[0];
        break;
      }
      case Op::kMatmul: {
        const Tensor &x = argv(0), &y = argv(1);
        Tensor tx(x.shape, tz(argid(0))), ty(y.shape, tz(argid(1)));
        Array out(n.value.size());
        Eigen::Map<RowMat> O(out.data(), n.value.shape[0], n.value.shape[1]);
        O.noalias() = tx.mat() * y.mat();
        O.noalias() += x.mat() * ty.mat();
        tan[static_cast<std::size_t>(id)] = out;
        break;
      }
      case Op::kConv2d: {
        const Tensor &x = argv(0), &w = argv(1);
        Tensor tx(x.shape, tz(argid(0))), tw(w.shape, tz(argid(1)));
        std::vector<const Tensor*> p1{&tx, &w}, p2{&x, &tw};
        tan[static_cast<std::size_t>(id)] = eval_node(n, p1).data + eval_node(n, p2).data;
        break;
      }
      case Op::kRelu:
        tan[static_cast<std::size_t>(id)] = tz(argid(0)) * (argv(0).data > 0.0).cast<double>();
        break;
      case Op::kL2Norm: {
        const Tensor& x = argv(0);
        const double nv = std::max(n.value.data[0], 1e-12);
        tan[static_cast<std::size_t>(id)] = Array::Constant(1, (x.data * tz(argid(0))).sum() / nv);
        break;
      }
      case Op::kSoftmaxXent: {
        const Tensor& logits = argv(0);
        const Index rows = logits.shape[0], k = logits.shape[1];
        Array probs = softmax_rows(logits);
        for (Index i = 0; i < rows; ++i)
          probs[i * k + n.targets[static_cast<std::size_t>(i)]] -= 1.0;
        tan[static_cast<std::size_t>(id)] =
            Array::Constant(1, (probs * tz(argid(0))).sum() / static_cast<double>(rows));
        break;
      }
      case Op::kStopGrad:
        tan[static_cast<std::size_t>(id)] = Array::Zero(n.value.size());
        break;
      case Op::kClamp: {
        const Tensor& x = argv(0);
        Array mask = ((x.data >= n.c0) && (x.data <= n.c1)).cast<double>();
        tan[static_cast<std::size_t>(id)] = tz(argid(0)) * mask;
        break;
      }
      case Op::kCosine: {
        const Tensor &x = argv(0), &y = argv(1);
        Array tx = tz(argid(0)), ty = tz(argid(1));
        CosParts p = cos_parts(x.data.data(), y.data.data(), x.size());
        const double dcos = (y.data * tx).sum() / (p.na * p.nb) +
                            (x.data * ty).sum() / (p.na * p.nb) -
                            p.cos * ((x.data * tx).sum() / (p.na * p.na) +
                                     (y.data * ty).sum() / (p.nb * p.nb));
        tan[static_cast<std::size_t>(id)] = Array::Constant(1, dcos);
        break;
      }
      case Op::kCosRowsMean: {
        const Tensor &x = argv(0), &y = argv(1);
        Array tx = tz(argid(0)), ty = tz(argid(1));
        const Index rows = x.shape[0], d = x.shape[1];
        double acc = 0.0;
        for (Index i = 0; i < rows; ++i) {
          const double* xr = x.data.data() + i * d;
          const double* yr = y.data.data() + i * d;
          CosParts p = cos_parts(xr, yr, d);
          double xy = 0, yx = 0, xx = 0, yy = 0;
          for (Index j = 0; j < d; ++j) {
            xy += yr[j] * tx[i * d + j];
            yx += xr[j] * ty[i * d + j];
            xx += xr[j] * tx[i * d + j];
            yy += yr[j] * ty[i * d + j];
          }
          acc += xy / (p.na * p.nb) + yx / (p.na * p.nb) -
                 p.cos * (xx / (p.na * p.na) + yy / (p.nb * p.nb));
        }
        tan[static_cast<std::size_t>(id)] = Array::Constant(1, acc / static_cast<double>(rows));
        break;
      }
    }
  }

  return Tensor(value(out_id).shape, tz(out_id));
}

// ---- Gradients ----

const Tensor& Gradients::wrt_id(int id) {
  const Node& n = tape_->node(id);
  if (n.op != Op::kLeaf) throw Error("ndt", "tape", "gradient query: not a leaf");
  if (!n.requires_grad) detached_requested_ = true;
  return grads_[static_cast<std::size_t>(id)];
}

const Tensor& Gradients::wrt(Var leaf) {
  if (leaf.tape() != tape_) throw Error("ndt", "tape", "gradient query: leaf from another tape");
  return wrt_id(leaf.id());
}

const Tensor& Gradients::wrt(const std::string& leaf_name) {
  auto it = tape_->names_.find(leaf_name);
  if (it == tape_->names_.end())
    throw Error("ndt", "tape", "gradient query: unknown leaf '" + leaf_name + "'");
  return wrt_id(it->second);
}

// ---- primitive recorders ----

namespace {
Tape& same_tape(const char* prim, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw Error("ndt", "tape", std::string(prim) + ": operands from different tapes");
  return *a.tape();
}

Var record_binary(const char* prim, Op op, Var a, Var b) {
  Tape& t = same_tape(prim, a, b);
  binary_shape(prim, a.shape(), b.shape());  // validate early
  Node n;
  n.op = op;
  n.args = {a.id(), b.id()};
  return t.record(std::move(n));
}
}  // namespace

Var add(Var a, Var b) { return record_binary("add", Op::kAdd, a, b); }
Var sub(Var a, Var b) { return record_binary("sub", Op::kSub, a, b); }
Var mul(Var a, Var b) { return record_binary("mul", Op::kMul, a, b); }

Var scale(Var a, double c) {
  Node n;
  n.op = Op::kScale;
  n.args = {a.id()};
  n.c0 = c;
  return a.tape()->record(std::move(n));
}

Var add_const(Var a, double c) {
  Node n;
  n.op = Op::kAddConst;
  n.args = {a.id()};
  n.c0 = c;
  return a.tape()->record(std::move(n));
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  const Shape &as = a.shape(), &bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) shape_error("matmul", as, bs);
  Node n;
  n.op = Op::kMatmul;
  n.args = {a.id(), b.id()};
  return t.record(std::move(n));
}

Var add_rowwise(Var x, Var bias) {
  Tape& t = same_tape("add_rowwise", x, bias);
  const Shape &xs = x.shape(), &bs = bias.shape();
  if (xs.size() != 2 || bs.size() != 1 || xs[1] != bs[0]) shape_error("add_rowwise", xs, bs);
  Node n;
  n.op = Op::kAddRowwise;
  n.args = {x.id(), bias.id()};
  return t.record(std::move(n));
}

Var add_chanwise(Var x, Var bias) {
  Tape& t = same_tape("add_chanwise", x, bias);
  const Shape &xs = x.shape(), &bs = bias.shape();
  if (xs.size() != 4 || bs.size() != 1 || xs[1] != bs[0]) shape_error("add_chanwise", xs, bs);
  Node n;
  n.op = Op::kAddChanwise;
  n.args = {x.id(), bias.id()};
  return t.record(std::move(n));
}

Var conv2d(Var x, Var w, int stride, int pad) {
  Tape& t = same_tape("conv2d", x, w);
  conv_dims("conv2d", x.shape(), w.shape(), stride, pad);  // validate
  Node n;
  n.op = Op::kConv2d;
  n.args = {x.id(), w.id()};
  n.stride = stride;
  n.pad = pad;
  return t.record(std::move(n));
}

Var avg_pool2(Var x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
    shape_error1("avg_pool2", xs, "needs rank 4 with even spatial dims");
  Node n;
  n.op = Op::kAvgPool2;
  n.args = {x.id()};
  return x.tape()->record(std::move(n));
}

Var relu(Var a) {
  Node n;
  n.op = Op::kRelu;
  n.args = {a.id()};
  return a.tape()->record(std::move(n));
}

Var mean(Var a) {
  Node n;
  n.op = Op::kMean;
  n.args = {a.id()};
  return a.tape()->record(std::move(n));
}

Var sum(Var a) {
  Node n;
  n.op = Op::kSum;
  n.args = {a.id()};
  return a.tape()->record(std::move(n));
}

Var l2norm(Var a) {
  Node n;
  n.op = Op::kL2Norm;
  n.args = {a.id()};
  return a.tape()->record(std::move(n));
}

Var softmax_xent(Var logits, std::vector<int> targets) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) shape_error1("softmax_xent", ls, "logits must be rank 2");
  if (static_cast<Index>(targets.size()) != ls[0])
    shape_error1("softmax_xent", ls,
                 "target count " + std::to_string(targets.size()) + " != rows");
  for (int t : targets)
    if (t < 0 || t >= ls[1])
      throw Error("ndt", "label", "softmax_xent: label " + std::to_string(t) +
                                      " outside [0," + std::to_string(ls[1]) + ")");
  Node n;
  n.op = Op::kSoftmaxXent;
  n.args = {logits.id()};
  n.targets = std::move(targets);
  return logits.tape()->record(std::move(n));
}

Var stop_grad(Var a) {
  Node n;
  n.op = Op::kStopGrad;
  n.args = {a.id()};
  return a.tape()->record(std::move(n));
}

Var clamp(Var a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.args = {a.id()};
  n.c0 = lo;
  n.c1 = hi;
  return a.tape()->record(std::move(n));
}

Var reshape(Var a, Shape s) {
  if (numel(s) != numel(a.shape())) shape_error("reshape", a.shape(), s);
  Node n;
  n.op = Op::kReshape;
  n.args = {a.id()};
  n.shape_arg = std::move(s);
  return a.tape()->record(std::move(n));
}

Var resample(Var x, PlanPtr plan) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) shape_error1("resample", xs, "input must be rank 4");
  if (xs[2] != plan->height || xs[3] != plan->width)
    shape_error1("resample", xs, "plan grid mismatch");
  Node n;
  n.op = Op::kResample;
  n.args = {x.id()};
  n.plan = std::move(plan);
  return x.tape()->record(std::move(n));
}

Var cosine(Var a, Var b) {
  Tape& t = same_tape("cosine", a, b);
  if (a.shape() != b.shape()) shape_error("cosine", a.shape(), b.shape());
  Node n;
  n.op = Op::kCosine;
  n.args = {a.id(), b.id()};
  return t.record(std::move(n));
}

Var cos_rows_mean(Var a, Var b) {
  Tape& t = same_tape("cos_rows_mean", a, b);
  const Shape &as = a.shape(), &bs = b.shape();
  if (as.size() != 2 || as != bs) shape_error("cos_rows_mean", as, bs);
  Node n;
  n.op = Op::kCosRowsMean;
  n.args = {a.id(), b.id()};
  return t.record(std::move(n));
}

Var tile_rows(Var v, Index rows) {
  const Shape& vs = v.shape();
  if (vs.size() != 1) shape_error1("tile_rows", vs, "input must be rank 1");
  Node n;
  n.op = Op::kTileRows;
  n.args = {v.id()};
  n.shape_arg = {rows, vs[0]};
  return v.tape()->record(std::move(n));
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("ndt", "shape", "concat_rows: empty input list");
  Tape* t = xs[0].tape();
  const Shape& first = xs[0].shape();
  for (const Var& v : xs) {
    if (v.tape() != t) throw Error("ndt", "tape", "concat_rows: operands from different tapes");
    const Shape& s = v.shape();
    if (s.size() != first.size()) shape_error("concat_rows", first, s);
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s[i] != first[i]) shape_error("concat_rows", first, s);
  }
  Node n;
  n.op = Op::kConcatRows;
  for (const Var& v : xs) n.args.push_back(v.id());
  return t->record(std::move(n));
}

}  // namespace beyond::ndt
