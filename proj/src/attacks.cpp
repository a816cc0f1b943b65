// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/attacks.hpp"

#include <cmath>

namespace beyond::attacks {

using augment::Policy;
using detector::DetectorThresholds;
using models::ModelBundle;
using ndt::Array;
using ndt::Index;
using ndt::Shape;
using ndt::Tape;
using ndt::Var;

namespace {

Array sign_of(const Array& a) {
  return (a > 0.0).cast<double>() - (a < 0.0).cast<double>();
}

Array clamp01(const Array& a) { return a.max(0.0).min(1.0); }

// Project onto the L-inf ball of radius eps around origin, then keep
// x0 + delta inside the pixel box.
Array project_delta(const Array& delta, const Array& x0, double eps) {
  Array d = delta.max(-eps).min(eps);
  return clamp01(x0 + d) - x0;
}

Tensor as_image4(const Tensor& x) {
  return Tensor(Shape{1, x.shape[0], x.shape[1], x.shape[2]}, x.data);
}

struct ClfGrad {
  Array grad;
  double loss;
};

// Gradient of the cross-entropy of c(x) toward label y, with respect to x.
ClfGrad classifier_grad(const Tensor& x, int y, const models::ClassifierNet& clf) {
  Tape t;
  Tensor x4 = as_image4(x);
  x4.requires_grad = true;
  Var xv = t.leaf(x4, "x");
  Var logits = models::dense_apply(models::register_dense(t, clf.out),
                                   models::trunk_apply(clf.trunk, models::register_trunk(t, clf.trunk), xv));
  Var loss = ndt::softmax_xent(logits, {y});
  ndt::Gradients g = t.backward(loss);
  return ClfGrad{Array(g.wrt(xv).data), loss.value().scalar()};
}

void check_differentiable_policy(const Policy& policy) {
  std::string offenders;
  for (const augment::AugmentationSpec& s : policy)
    if (!s.differentiable) {
      if (!offenders.empty()) offenders += ", ";
      offenders += augment::kind_name(s.kind);
    }
  if (!offenders.empty())
    throw Error("attacks", "nondifferentiable",
                "policy contains non-differentiable augmentations: " + offenders);
}

struct EncoderOnTape {
  models::TrunkVars trunk;
  models::ProjVars proj;
  models::DenseVars head;
};

EncoderOnTape register_encoder(Tape& t, const ModelBundle& bundle) {
  return EncoderOnTape{models::register_trunk(t, bundle.encoder.trunk),
                       models::register_projector(t, bundle.encoder.projector),
                       models::register_dense(t, bundle.head.fc)};
}

struct AdaptiveTerms {
  Var objective;  // L_C + Sim_l - alpha * Sim_r   (Sim_r absent when alpha == 0)
  Var sim_l;
  Var sim_r;           // only valid() when alpha != 0 or force_sim_r
  Var neg_alpha_simr;  // -alpha * Sim_r term as recorded (invalid when absent)
};

// Builds the adaptive objective at x0 + delta on the tape. Fresh draws are the
// caller's responsibility (EOT).
AdaptiveTerms build_adaptive_terms(Tape& t, const Tensor& x0, Var delta, int y_t,
                                   const ModelBundle& bundle,
                                   const std::vector<augment::Draw>& draws, double alpha,
                                   bool force_sim_r) {
  Var x0v = t.constant(as_image4(x0), "x0");
  Var xp = ndt::clamp(ndt::add(x0v, delta), 0.0, 1.0);

  // classifier loss toward the target
  Var clf_logits =
      models::dense_apply(models::register_dense(t, bundle.classifier.out),
                          models::trunk_apply(bundle.classifier.trunk,
                                              models::register_trunk(t, bundle.classifier.trunk), xp));
  Var l_c = ndt::softmax_xent(clf_logits, {y_t});

  EncoderOnTape enc = register_encoder(t, bundle);
  const int k = static_cast<int>(draws.size());

  std::vector<Var> aug;
  aug.reserve(draws.size());
  for (const augment::Draw& d : draws) aug.push_back(augment::apply_draw_on_tape(d, xp));
  Var batch = ndt::concat_rows(aug);
  Var feats = models::trunk_apply(bundle.encoder.trunk, enc.trunk, batch);

  Var head_logits = models::dense_apply(enc.head, feats);
  Var sim_l = ndt::softmax_xent(head_logits, std::vector<int>(static_cast<std::size_t>(k), y_t));

  AdaptiveTerms terms;
  terms.sim_l = sim_l;
  Var objective = ndt::add(l_c, sim_l);
  if (alpha != 0.0 || force_sim_r) {
    Var embeds = models::projector_apply(enc.proj, feats);
    Var f0 = models::trunk_apply(bundle.encoder.trunk, enc.trunk, xp);
    Var r0 = ndt::reshape(models::projector_apply(enc.proj, f0),
                          {static_cast<Index>(bundle.encoder.embed_dim)});
    Var sim_r = ndt::cos_rows_mean(embeds, ndt::tile_rows(r0, k));
    terms.sim_r = sim_r;
    if (alpha != 0.0) {
      terms.neg_alpha_simr = ndt::scale(sim_r, -alpha);
      objective = ndt::add(objective, terms.neg_alpha_simr);
    }
  }
  terms.objective = objective;
  return terms;
}

std::vector<augment::Draw> eot_draws(const Policy& policy, int k, Rng& rng) {
  std::vector<augment::Draw> draws;
  draws.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Rng stream = rng.split(static_cast<std::uint64_t>(i));
    draws.push_back(augment::sample_draw(policy, stream));
  }
  return draws;
}

}  // namespace

void check_budget(const Tensor& x0, const Tensor& x_adv, double eps) {
  if (x0.shape != x_adv.shape)
    throw Error("attacks", "shape", "budget check: shape mismatch");
  const double linf = (x_adv.data - x0.data).abs().maxCoeff();
  if (linf > eps + 1e-9)
    throw Error("attacks", "budget",
                "budget violated: |x_adv - x|_inf = " + std::to_string(linf) + " > eps = " +
                    std::to_string(eps));
  if ((x_adv.data < -1e-12).any() || (x_adv.data > 1.0 + 1e-12).any())
    throw Error("attacks", "budget", "budget violated: pixels outside [0,1]");
}

int least_likely_class(const models::ClassifierNet& clf, const Tensor& x) {
  Tensor logits = models::classify(clf, x).logits;
  int worst = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits.data[i] < logits.data[worst]) worst = static_cast<int>(i);
  return worst;
}

AttackResult fgsm(const Tensor& x, int y, const models::ClassifierNet& clf, double eps) {
  if (eps < 0.0) throw Error("attacks", "bad-eps", "fgsm: eps must be >= 0");
  ClfGrad g = classifier_grad(x, y, clf);
  if (g.grad.abs().maxCoeff() == 0.0) return AttackResult{x, true};
  Tensor adv(x.shape, clamp01(x.data + eps * sign_of(g.grad)));
  check_budget(x, adv, eps);
  return AttackResult{std::move(adv), false};
}

AttackResult pgd(const Tensor& x, int y, const models::ClassifierNet& clf,
                 const AttackBudget& budget) {
  if (budget.steps < 1) throw Error("attacks", "bad-steps", "pgd: steps must be >= 1");
  if (budget.eps < 0.0) throw Error("attacks", "bad-eps", "pgd: eps must be >= 0");

  Rng rng(budget.seed);
  Array delta = Array::Zero(x.size());
  if (budget.random_start) {
    for (Index i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-budget.eps, budget.eps);
    delta = project_delta(delta, x.data, budget.eps);
  }

  const int label = budget.targeted.value_or(y);
  const double direction = budget.targeted ? -1.0 : 1.0;  // descend toward target
  bool null_grad = false;

  for (int step = 0; step < budget.steps; ++step) {
    Tensor xi(x.shape, clamp01(x.data + delta));
    ClfGrad g = classifier_grad(xi, label, clf);
    if (g.grad.abs().maxCoeff() == 0.0) {
      null_grad = true;
      break;
    }
    delta = project_delta(delta + budget.step_size * direction * sign_of(g.grad), x.data,
                          budget.eps);
  }

  Tensor adv(x.shape, clamp01(x.data + delta));
  check_budget(x, adv, budget.eps);
  return AttackResult{std::move(adv), null_grad};
}

Tensor adaptive_gradient(const Tensor& x, const Tensor& delta, int y_t,
                         const ModelBundle& bundle, const Policy& policy,
                         const AdaptiveConfig& config, std::uint64_t draw_seed) {
  check_differentiable_policy(policy);
  Rng rng(draw_seed);
  std::vector<augment::Draw> draws = eot_draws(policy, config.k_eot, rng);

  Tape t;
  Tensor d4 = as_image4(delta);
  d4.requires_grad = true;
  Var dv = t.leaf(d4, "delta");
  AdaptiveTerms terms = build_adaptive_terms(t, x, dv, y_t, bundle, draws, config.alpha, false);
  ndt::Gradients g = t.backward(terms.objective);
  return Tensor(x.shape, Array(g.wrt(dv).data));
}

AttackResult adaptive_attack(const Tensor& x, int y_t, const ModelBundle& bundle,
                             const Policy& policy, const AdaptiveConfig& config) {
  check_differentiable_policy(policy);
  const AttackBudget& b = config.budget;
  if (b.steps < 1) throw Error("attacks", "bad-steps", "adaptive_attack: steps must be >= 1");
  if (config.k_eot < 1) throw Error("attacks", "bad-keot", "adaptive_attack: k_eot must be >= 1");

  Rng rng(b.seed);
  Array delta = Array::Zero(x.size());
  if (b.random_start) {
    for (Index i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-b.eps, b.eps);
    delta = project_delta(delta, x.data, b.eps);
  }

  bool null_grad = false;
  for (int step = 0; step < b.steps; ++step) {
    Tensor g = adaptive_gradient(x, Tensor(x.shape, delta), y_t, bundle, policy, config,
                                 Rng::mix(b.seed, 0xE07 + static_cast<std::uint64_t>(step)));
    if (ndt::max_abs(g) == 0.0) {
      null_grad = true;
      break;
    }
    delta = project_delta(delta - b.step_size * sign_of(g.data), x.data, b.eps);
  }

  Tensor adv(x.shape, clamp01(x.data + delta));
  check_budget(x, adv, b.eps);
  return AttackResult{std::move(adv), null_grad};
}

Var benign_score_surrogate(Tape& tape, Var x4, const ModelBundle& bundle, const Policy& policy,
                           const DetectorThresholds& thresholds, int k_draws, Rng& rng) {
  check_differentiable_policy(policy);
  EncoderOnTape enc = register_encoder(tape, bundle);

  // The classifier's current label anchors the soft consistency term.
  Tensor img(Shape{x4.shape()[1], x4.shape()[2], x4.shape()[3]}, x4.value().data);
  const int label = models::classify(bundle.classifier, img).label;

  std::vector<augment::Draw> draws = eot_draws(policy, k_draws, rng);
  std::vector<Var> aug;
  aug.reserve(draws.size());
  for (const augment::Draw& d : draws) aug.push_back(augment::apply_draw_on_tape(d, x4));
  Var batch = ndt::concat_rows(aug);
  Var feats = models::trunk_apply(bundle.encoder.trunk, enc.trunk, batch);

  Var head_logits = models::dense_apply(enc.head, feats);
  Var soft_label = ndt::scale(
      ndt::softmax_xent(head_logits, std::vector<int>(static_cast<std::size_t>(k_draws), label)),
      -1.0);

  Var embeds = models::projector_apply(enc.proj, feats);
  Var f0 = models::trunk_apply(bundle.encoder.trunk, enc.trunk, x4);
  Var r0 = ndt::reshape(models::projector_apply(enc.proj, f0),
                        {static_cast<Index>(bundle.encoder.embed_dim)});
  Var rep = ndt::cos_rows_mean(embeds, ndt::tile_rows(r0, k_draws));

  Var z_label = ndt::scale(ndt::add_const(soft_label, -thresholds.soft_label_mean),
                           1.0 / thresholds.soft_label_std);
  Var z_rep = ndt::scale(ndt::add_const(rep, -thresholds.rep_mean), 1.0 / thresholds.rep_std);

  // min(z_label, z_rep): gradient follows the active branch.
  return z_label.value().scalar() <= z_rep.value().scalar() ? z_label : z_rep;
}

Tensor orthogonal_component(const Tensor& g_cls, const Tensor& g_det) {
  if (g_cls.shape != g_det.shape)
    throw Error("attacks", "shape", "orthogonal_component: shape mismatch");
  const double nd = ndt::norm2(g_det);
  if (nd <= 1e-30) return g_cls;
  const double coef = ndt::dot(g_cls, g_det) / (nd * nd);
  return Tensor(g_cls.shape, g_cls.data - coef * g_det.data);
}

AttackResult orthogonal_pgd(const Tensor& x, int y_t, const ModelBundle& bundle,
                            const Policy& policy, const DetectorThresholds& thresholds,
                            const AttackBudget& budget, OrthogonalStrategy strategy) {
  check_differentiable_policy(policy);
  if (budget.steps < 1) throw Error("attacks", "bad-steps", "orthogonal_pgd: steps must be >= 1");

  Rng rng(budget.seed);
  Array delta = Array::Zero(x.size());
  if (budget.random_start) {
    for (Index i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-budget.eps, budget.eps);
    delta = project_delta(delta, x.data, budget.eps);
  }

  const int k_draws = 8;
  bool null_grad = false;

  for (int step = 0; step < budget.steps; ++step) {
    Tensor xi(x.shape, clamp01(x.data + delta));
    ClfGrad gc = classifier_grad(xi, y_t, bundle.classifier);  // descend toward target

    // Detector-score gradient (ascending the benign surrogate looks cleaner).
    Tape t;
    Tensor x4 = as_image4(xi);
    x4.requires_grad = true;
    Var xv = t.leaf(x4, "x");
    Rng draw_rng(Rng::mix(budget.seed, 0x09D + static_cast<std::uint64_t>(step)));
    Var benign = benign_score_surrogate(t, xv, bundle, policy, thresholds, k_draws, draw_rng);
    Tensor gd = Tensor(x.shape, Array(t.backward(benign).wrt(xv).data));

    if (strategy == OrthogonalStrategy::kOrthogonal) {
      Tensor step_grad = orthogonal_component(Tensor(x.shape, gc.grad), gd);
      if (ndt::max_abs(step_grad) == 0.0 && gc.grad.abs().maxCoeff() == 0.0) {
        null_grad = true;
        break;
      }
      delta = project_delta(delta - budget.step_size * sign_of(step_grad.data), x.data,
                            budget.eps);
    } else {
      const int current = models::classify(bundle.classifier, xi).label;
      if (current != y_t) {
        if (gc.grad.abs().maxCoeff() == 0.0) {
          null_grad = true;
          break;
        }
        delta = project_delta(delta - budget.step_size * sign_of(gc.grad), x.data, budget.eps);
      } else {
        detector::DetectionRecord rec =
            detector::detect(xi, bundle, policy, thresholds,
                             Rng::mix(budget.seed, 0xDE7 + static_cast<std::uint64_t>(step)));
        if (!rec.reject) break;  // both objectives satisfied
        if (ndt::max_abs(gd) == 0.0) {
          null_grad = true;
          break;
        }
        delta = project_delta(delta + budget.step_size * sign_of(gd.data), x.data, budget.eps);
      }
    }
  }

  Tensor adv(x.shape, clamp01(x.data + delta));
  check_budget(x, adv, budget.eps);
  return AttackResult{std::move(adv), null_grad};
}

double gradient_conflict_rate(const Tensor& x, const ModelBundle& bundle, const Policy& policy,
                              const AdaptiveConfig& config, double step_size) {
  check_differentiable_policy(policy);
  // The draw stream is keyed by the step size so measurement rows that differ
  // only in s are independent.
  const std::uint64_t key =
      Rng::mix(config.budget.seed, static_cast<std::uint64_t>(step_size * 1e9));
  Rng rng(key);

  Array delta(x.size());
  for (Index i = 0; i < delta.size(); ++i)
    delta[i] = rng.uniform(-config.budget.eps, config.budget.eps);
  Array at = clamp01(x.data + delta);

  const int y_t = config.budget.targeted.value_or(least_likely_class(bundle.classifier, x));
  Rng draw_rng = rng.split(0xD12A);
  std::vector<augment::Draw> draws = eot_draws(policy, config.k_eot, draw_rng);

  // Differentiate both terms at the perturbed point: the leaf is a zero delta
  // around x + delta, so gradients land exactly there.
  Tape t;
  Tensor d0 = ndt::zeros({1, x.shape[0], x.shape[1], x.shape[2]});
  d0.requires_grad = true;
  Var dv = t.leaf(d0, "delta");
  AdaptiveTerms live =
      build_adaptive_terms(t, Tensor(x.shape, at), dv, y_t, bundle, draws, config.alpha, true);

  Tensor g1 = Tensor(x.shape, Array(t.backward(live.sim_l).wrt(dv).data));
  Var neg_term =
      live.neg_alpha_simr.valid() ? live.neg_alpha_simr : ndt::scale(live.sim_r, -config.alpha);
  Tensor g2 = Tensor(x.shape, Array(t.backward(neg_term).wrt(dv).data));

  if (ndt::max_abs(g1) == 0.0 && ndt::max_abs(g2) == 0.0)
    throw Error("attacks", "degenerate-point", "gradient_conflict_rate: all-zero gradients");

  Index conflicts = 0;
  for (Index i = 0; i < g1.size(); ++i)
    if (g1.data[i] * g2.data[i] < 0.0) ++conflicts;
  return static_cast<double>(conflicts) / static_cast<double>(g1.size());
}

}  // namespace beyond::attacks
