// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "beyond/grad_check.hpp"
#include "beyond/rng.hpp"
#include "beyond/tape.hpp"
#include "beyond/tensor.hpp"

using namespace beyond;
using namespace beyond::ndt;

namespace {

// Keeps randomized points away from relu/clamp kinks so central differences
// are valid; the margin is well above the finite-difference step.
Tensor random_away_from(Tensor t, double locus, double margin, Rng& rng) {
  for (Index i = 0; i < t.size(); ++i) {
    if (std::abs(t.data[i] - locus) < margin)
      t.data[i] = locus + (rng.bernoulli(0.5) ? margin : -margin) * 2.0;
  }
  return t;
}

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform(std::move(s), lo, hi, rng);
}

}  // namespace

TEST_CASE("relu forward matches definition") {
  Tape t;
  Var x = t.constant(from_values({3}, {-1, 0, 2}));
  Var y = relu(x);
  CHECK(y.value().data[0] == 0.0);
  CHECK(y.value().data[1] == 0.0);
  CHECK(y.value().data[2] == 2.0);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln 2") {
  Tape t;
  Var logits = t.constant(from_values({1, 2}, {0, 0}));
  Var loss = softmax_xent(logits, {0});
  CHECK(loss.value().scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("conv2d against sliding-window oracle") {
  // 1x1x3x3 input, 1x1x2x2 all-ones kernel: each output is its 2x2 window sum.
  Rng rng(7);
  Tensor img = rand_t({1, 1, 3, 3}, rng);
  Tape t;
  Var x = t.constant(img);
  Var w = t.constant(full({1, 1, 2, 2}, 1.0));
  Var y = conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (Index oy = 0; oy < 2; ++oy)
    for (Index ox = 0; ox < 2; ++ox) {
      double want = 0.0;
      for (Index ky = 0; ky < 2; ++ky)
        for (Index kx = 0; kx < 2; ++kx) want += img.data[(oy + ky) * 3 + ox + kx];
      CHECK(y.value().data[oy * 2 + ox] == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Tape t;
  Tensor p = scalar_tensor(3.0);
  p.requires_grad = true;
  Var x = t.leaf(p, "x");
  Var y = sum(mul(x, x));
  Gradients g = t.backward(y);
  CHECK(g.wrt(x).scalar() == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("stop-gradient: only the undetached factor contributes") {
  Tape t;
  Tensor p = scalar_tensor(3.0);
  p.requires_grad = true;
  Var x = t.leaf(p, "x");
  Var y = sum(mul(stop_grad(x), x));
  Gradients g = t.backward(y);
  CHECK(g.wrt(x).scalar() == doctest::Approx(3.0).epsilon(1e-14));

  // Gradient through a pure stop-gradient expression is exactly zero.
  Var z = sum(stop_grad(mul(x, x)));
  Gradients g2 = t.backward(z);
  CHECK(g2.wrt(x).scalar() == 0.0);
}

TEST_CASE("cosine similarity values") {
  Rng rng(3);
  Tensor v = rand_t({5}, rng);
  Tape t;
  Var a = t.constant(v);
  CHECK(cosine(a, a).value().scalar() == doctest::Approx(1.0).epsilon(1e-12));

  Var e1 = t.constant(from_values({2}, {1, 0}));
  Var e2 = t.constant(from_values({2}, {0, 1}));
  CHECK(cosine(e1, e2).value().scalar() == doctest::Approx(0.0).epsilon(1e-12));

  Var d = t.constant(from_values({2}, {1, 1}));
  CHECK(cosine(e1, d).value().scalar() == doctest::Approx(0.70711).epsilon(1e-4));

  Var zero = t.constant(from_values({2}, {0, 0}));
  CHECK_THROWS_AS((void)cosine(e1, zero), Error);
}

TEST_CASE("shape errors name the primitive and both shapes") {
  Tape t;
  Var a = t.constant(zeros({2, 3}));
  Var b = t.constant(zeros({4, 5}));
  try {
    (void)matmul(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == "shape");
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("non-finite values rejected at operation boundaries") {
  Tape t;
  Tensor bad = zeros({2});
  bad.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)t.leaf(bad), Error);
}

TEST_CASE("backward requires a scalar output") {
  Tape t;
  Tensor p = zeros({3});
  p.requires_grad = true;
  Var x = t.leaf(p);
  Var y = relu(x);
  CHECK_THROWS_AS((void)t.backward(y), Error);
}

TEST_CASE("detached leaf gradient is zero with a warning flag") {
  Tape t;
  Tensor w = scalar_tensor(2.0);
  w.requires_grad = true;
  Var wv = t.leaf(w, "w");
  Var xv = t.constant(scalar_tensor(5.0), "x");
  Var y = sum(mul(wv, xv));
  Gradients g = t.backward(y);
  CHECK_FALSE(g.detached_requested());
  CHECK(g.wrt(xv).scalar() == 0.0);
  CHECK(g.detached_requested());
  CHECK(g.wrt("w").scalar() == doctest::Approx(5.0));
}

TEST_CASE("determinism: identical seeds give bit-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor img = rand_t({1, 2, 6, 6}, rng);
    Tensor w = rand_t({3, 2, 3, 3}, rng, -0.5, 0.5);
    img.requires_grad = true;
    w.requires_grad = true;
    Tape t;
    Var x = t.leaf(img, "x");
    Var k = t.leaf(w, "w");
    Var y = mean(relu(conv2d(x, k, 1, 1)));
    Gradients g = t.backward(y);
    return std::make_pair(y.value().scalar(), Tensor(g.wrt("x")));
  };
  auto [v1, g1] = run(42);
  auto [v2, g2] = run(42);
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data.data(), g2.data.data(),
                    sizeof(double) * static_cast<std::size_t>(g1.size())) == 0);
}

TEST_CASE("linearity of backward over scalar outputs") {
  Rng rng(11);
  Tensor p = rand_t({6}, rng);
  p.requires_grad = true;
  Tape t;
  Var x = t.leaf(p, "x");
  Var u = sum(mul(x, x));
  Var v = l2norm(relu(x));
  const double alpha = 1.7, beta = -0.4;
  Var combo = add(scale(u, alpha), scale(v, beta));

  Tensor gu = Tensor(t.backward(u).wrt(x));
  Tensor gv = Tensor(t.backward(v).wrt(x));
  Tensor gc = Tensor(t.backward(combo).wrt(x));
  for (Index i = 0; i < p.size(); ++i)
    CHECK(gc.data[i] == doctest::Approx(alpha * gu.data[i] + beta * gv.data[i]).epsilon(1e-12));
}

TEST_CASE("tape replay reproduces every stored intermediate bit-exactly") {
  Rng rng(5);
  Tensor img = rand_t({2, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor w1 = rand_t({4, 3, 3, 3}, rng, -0.3, 0.3);
  Tape t;
  Var x = t.leaf(img);
  Var k = t.leaf(w1);
  Var h = avg_pool2(relu(conv2d(x, k, 1, 1)));
  Var flat = reshape(h, {2, 4 * 4 * 4});
  Var loss = softmax_xent(matmul(flat, t.constant(rand_t({64, 3}, rng))), {0, 2});
  (void)loss;
  CHECK(t.verify_replay());
}

// ---- randomized finite-difference agreement for every primitive ----

namespace {

struct PrimCase {
  const char* name;
  Shape point_shape;
  ScalarFn fn;
  double kink_locus = std::numeric_limits<double>::quiet_NaN();  // NaN = smooth
};

std::vector<PrimCase> primitive_cases(Rng& rng) {
  std::vector<PrimCase> cases;
  auto aux = [&rng](Shape s, double lo = -1.0, double hi = 1.0) {
    return uniform(std::move(s), lo, hi, rng);
  };

  cases.push_back({"add", {5}, [a = aux({5})](Tape& t, Var x) {
                     return sum(mul(add(x, t.constant(a)), t.constant(a)));
                   }});
  cases.push_back({"add-scalar-broadcast", {1}, [a = aux({5})](Tape& t, Var x) {
                     return l2norm(add(x, t.constant(a)));
                   }});
  cases.push_back({"sub", {5}, [a = aux({5})](Tape& t, Var x) {
                     return l2norm(sub(x, t.constant(a)));
                   }});
  cases.push_back({"mul", {5}, [a = aux({5})](Tape& t, Var x) {
                     return sum(mul(x, mul(x, t.constant(a))));
                   }});
  cases.push_back({"mul-scalar-broadcast", {1}, [a = aux({5})](Tape& t, Var x) {
                     return l2norm(mul(x, t.constant(a)));
                   }});
  cases.push_back({"scale", {4}, [](Tape&, Var x) { return sum(scale(x, -2.5)); }});
  cases.push_back({"add_const", {4}, [](Tape&, Var x) {
                     return l2norm(add_const(x, 0.7));
                   }});
  cases.push_back({"add_rowwise", {3}, [m = aux({4, 3})](Tape& t, Var x) {
                     return l2norm(add_rowwise(t.constant(m), x));
                   }});
  cases.push_back({"add_chanwise", {2}, [m = aux({2, 2, 3, 3})](Tape& t, Var x) {
                     return l2norm(add_chanwise(t.constant(m), x));
                   }});
  cases.push_back({"matmul-lhs", {2, 3}, [m = aux({3, 4})](Tape& t, Var x) {
                     return sum(matmul(x, t.constant(m)));
                   }});
  cases.push_back({"matmul-rhs", {3, 4}, [m = aux({2, 3})](Tape& t, Var x) {
                     return l2norm(matmul(t.constant(m), x));
                   }});
  cases.push_back({"conv2d-input", {1, 2, 5, 5}, [w = aux({3, 2, 3, 3})](Tape& t, Var x) {
                     return sum(conv2d(x, t.constant(w), 1, 1));
                   }});
  cases.push_back({"conv2d-kernel", {3, 2, 3, 3}, [m = aux({1, 2, 5, 5})](Tape& t, Var x) {
                     return l2norm(conv2d(t.constant(m), x, 2, 0));
                   }});
  cases.push_back({"avg_pool2", {1, 2, 4, 4}, [](Tape&, Var x) {
                     return l2norm(avg_pool2(x));
                   }});
  cases.push_back({"relu", {6}, [a = aux({6})](Tape& t, Var x) {
                     return sum(mul(relu(x), t.constant(a)));
                   },
                   0.0});
  cases.push_back({"mean", {7}, [](Tape&, Var x) { return mean(x); }});
  cases.push_back({"sum", {7}, [](Tape&, Var x) { return sum(x); }});
  cases.push_back({"l2norm", {5}, [](Tape&, Var x) { return l2norm(x); }});
  cases.push_back({"softmax_xent", {3, 4}, [](Tape&, Var x) {
                     return softmax_xent(x, {1, 3, 0});
                   }});
  cases.push_back({"clamp", {6}, [a = aux({6})](Tape& t, Var x) {
                     return sum(mul(clamp(x, -0.5, 0.5), t.constant(a)));
                   },
                   0.5});
  cases.push_back({"reshape", {6}, [a = aux({2, 3})](Tape& t, Var x) {
                     return l2norm(mul(reshape(x, {2, 3}), t.constant(a)));
                   }});
  cases.push_back({"resample", {1, 1, 5, 5}, [](Tape&, Var x) {
                     return l2norm(resample(x, make_rotation_plan(5, 5, 23.0)));
                   }});
  cases.push_back({"cosine", {4}, [a = aux({4})](Tape& t, Var x) {
                     return cosine(x, t.constant(a));
                   }});
  cases.push_back({"cos_rows_mean", {3, 4}, [m = aux({3, 4})](Tape& t, Var x) {
                     return cos_rows_mean(x, t.constant(m));
                   }});
  cases.push_back({"tile_rows", {3}, [m = aux({4, 3})](Tape& t, Var x) {
                     return cos_rows_mean(tile_rows(x, 4), t.constant(m));
                   }});
  cases.push_back({"concat_rows", {2, 3}, [m = aux({3, 3})](Tape& t, Var x) {
                     return l2norm(concat_rows({x, t.constant(m), x}));
                   }});
  return cases;
}

}  // namespace

TEST_CASE("finite-difference agreement for every primitive at 10 random points") {
  Rng seeds(20260810);
  Rng aux_rng(99);
  for (const PrimCase& c : primitive_cases(aux_rng)) {
    CAPTURE(c.name);
    for (int rep = 0; rep < 10; ++rep) {
      Rng rng = seeds.split(static_cast<std::uint64_t>(rep));
      Tensor point = rand_t(c.point_shape, rng);
      if (!std::isnan(c.kink_locus)) {
        point = random_away_from(point, c.kink_locus, 5e-3, rng);
        point = random_away_from(point, -c.kink_locus, 5e-3, rng);
      }
      GradCheckReport r = gradient_check(c.fn, point, 1e-3);
      CAPTURE(rep);
      CAPTURE(r.max_rel_error);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("gradient_check passes on a quadratic and fails on a broken gradient") {
  Rng rng(17);
  Tensor point = rand_t({8}, rng);

  GradCheckReport ok = gradient_check(
      [](Tape&, Var x) { return sum(mul(x, x)); }, point, 1e-4);
  CHECK(ok.pass);

  // stop_grad detaches one factor, so reverse mode reports x instead of 2x.
  GradCheckReport bad = gradient_check(
      [](Tape&, Var x) { return sum(mul(stop_grad(x), x)); }, point, 1e-4);
  CHECK_FALSE(bad.pass);
  CHECK(bad.max_rel_error > 0.1);
}

TEST_CASE("jvp agrees with the dense Jacobian assembled from vjp rows") {
  Rng rng(23);
  Tensor img = rand_t({1, 1, 4, 4}, rng, 0.0, 1.0);
  img.requires_grad = true;
  Tensor w = rand_t({2, 1, 3, 3}, rng, -0.5, 0.5);

  Tape t;
  Var x = t.leaf(img, "x");
  Var k = t.constant(w);
  Var out = reshape(avg_pool2(relu(conv2d(x, k, 1, 1))), {2 * 2 * 2});
  const Index out_dim = out.value().size();
  const Index in_dim = img.size();

  // Dense Jacobian, one vjp per output coordinate.
  RowMat jac(out_dim, in_dim);
  for (Index r = 0; r < out_dim; ++r) {
    Tensor seed = zeros(out.shape());
    seed.data[r] = 1.0;
    Gradients g = t.vjp(out, seed);
    Tensor row = g.wrt(x);
    for (Index cidx = 0; cidx < in_dim; ++cidx) jac(r, cidx) = row.data[cidx];
  }

  for (int rep = 0; rep < 4; ++rep) {
    Tensor v = rand_t(img.shape, rng);
    Tensor jv = t.jvp(out, {{x, v}});
    Eigen::VectorXd direct = jac * Eigen::Map<const Eigen::VectorXd>(v.data.data(), in_dim);
    for (Index i = 0; i < out_dim; ++i) {
      CHECK(jv.data[i] == doctest::Approx(direct[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("full CNN loss gradient matches central finite differences") {
  Rng rng(31);
  Tensor img = rand_t({1, 2, 6, 6}, rng, 0.05, 0.95);
  Tensor w1 = rand_t({3, 2, 3, 3}, rng, -0.4, 0.4);
  Tensor wd = rand_t({3 * 3 * 3, 4}, rng, -0.4, 0.4);
  Tensor bd = rand_t({4}, rng, -0.1, 0.1);

  ScalarFn cnn_loss = [&](Tape& t, Var x) {
    Var h = avg_pool2(relu(conv2d(x, t.constant(w1), 1, 1)));
    Var flat = reshape(h, {1, 3 * 3 * 3});
    Var logits = add_rowwise(matmul(flat, t.constant(wd)), t.constant(bd));
    return softmax_xent(logits, {2});
  };

  GradCheckReport r = gradient_check(cnn_loss, img, 1e-4, 1e-4);
  CAPTURE(r.max_rel_error);
  CHECK(r.pass);
}
