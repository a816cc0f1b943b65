// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/sweeps.hpp"

#include <algorithm>
#include <chrono>

namespace beyond::eval {

using detector::DetectorThresholds;
using models::ModelBundle;

SweepKind sweep_kind_from_name(const std::string& name) {
  if (name == "neighbors") return SweepKind::kNeighbors;
  if (name == "alpha") return SweepKind::kAlpha;
  if (name == "epsilon") return SweepKind::kEpsilon;
  if (name == "ablation") return SweepKind::kAblation;
  throw Error("evaluation", "bad-sweep", "unknown sweep kind: " + name);
}

const char* sweep_kind_name(SweepKind kind) {
  switch (kind) {
    case SweepKind::kNeighbors: return "neighbors";
    case SweepKind::kAlpha: return "alpha";
    case SweepKind::kEpsilon: return "epsilon";
    case SweepKind::kAblation: return "ablation";
  }
  return "?";
}

ScoreSets score_samples(const std::vector<Tensor>& clean, const std::vector<Tensor>& adversarial,
                        const ModelBundle& bundle, const augment::Policy& policy,
                        const DetectorThresholds& thresholds, int k, std::uint64_t seed,
                        const Provenance& adv_provenance) {
  ScoreSets sets;
  Rng root(seed);
  Rng clean_rng = root.split(1), adv_rng = root.split(2);

  auto add = [&](const Tensor& x, bool is_adv, Rng& rng, std::size_t i) {
    augment::NeighborSet nb = augment::generate_neighbors(x, k, policy, rng.split(i).seed());
    detector::SampleStats stats = detector::neighbor_stats(x, bundle, nb);
    const double ls = stats.label_stat(), rs = stats.rep_stat();
    Provenance prov = is_adv ? adv_provenance : Provenance{"clean", 0.0, seed};
    sets.combined.push_back({detector::combined_score(thresholds, ls, rs), is_adv, prov});
    sets.label_only.push_back(
        {1.0 - detector::ecdf(thresholds.ref_label_stat, ls), is_adv, prov});
    sets.rep_only.push_back({1.0 - detector::ecdf(thresholds.ref_rep_stat, rs), is_adv, prov});
  };

  for (std::size_t i = 0; i < clean.size(); ++i) add(clean[i], false, clean_rng, i);
  for (std::size_t i = 0; i < adversarial.size(); ++i) add(adversarial[i], true, adv_rng, i);
  return sets;
}

namespace {

std::vector<Tensor> attack_set_pgd(const SweepContext& ctx, const attacks::AttackBudget& budget) {
  std::vector<Tensor> out;
  out.reserve(ctx.attack_sources.size());
  Rng root(Rng::mix(ctx.seed, 0xA77));
  for (std::size_t i = 0; i < ctx.attack_sources.size(); ++i) {
    attacks::AttackBudget b = budget;
    b.seed = root.split(i).seed();
    out.push_back(attacks::pgd(ctx.attack_sources[i], ctx.attack_labels[i],
                               ctx.bundle->classifier, b)
                      .x_adv);
  }
  return out;
}

std::vector<Tensor> attack_set_adaptive(const SweepContext& ctx,
                                        const attacks::AdaptiveConfig& config) {
  std::vector<Tensor> out;
  out.reserve(ctx.attack_sources.size());
  Rng root(Rng::mix(ctx.seed, 0xADA));
  for (std::size_t i = 0; i < ctx.attack_sources.size(); ++i) {
    attacks::AdaptiveConfig c = config;
    c.budget.seed = root.split(i).seed();
    const int y_t = attacks::least_likely_class(ctx.bundle->classifier, ctx.attack_sources[i]);
    out.push_back(
        attacks::adaptive_attack(ctx.attack_sources[i], y_t, *ctx.bundle, ctx.policy, c).x_adv);
  }
  return out;
}

SweepRow metrics_row(const SweepContext& ctx, const std::vector<ScoredSample>& scores,
                     const std::vector<Tensor>& adversarial, double grid_value,
                     const std::string& mechanism, const DetectorThresholds& thresholds) {
  SweepRow row;
  row.grid_value = grid_value;
  row.mechanism = mechanism;
  row.auc = roc_auc(scores).auc;
  row.tpr_at_fpr5 = tpr_at_fpr(scores, 0.05);
  row.robust_acc = robust_accuracy(adversarial, ctx.attack_labels, *ctx.bundle, ctx.policy,
                                   thresholds, Rng::mix(ctx.seed, 0x4A));
  return row;
}

void require_sources(const SweepContext& ctx) {
  if (!ctx.bundle) throw Error("evaluation", "bad-context", "run_sweep: bundle missing");
  if (ctx.clean_eval.empty() || ctx.attack_sources.empty())
    throw Error("evaluation", "empty-set", "run_sweep: empty evaluation sets");
  if (ctx.attack_sources.size() != ctx.attack_labels.size())
    throw Error("evaluation", "shape", "run_sweep: attack label count mismatch");
}

}  // namespace

SweepResult run_sweep(SweepKind kind, const std::vector<double>& grid, const SweepContext& ctx) {
  if (grid.empty()) throw Error("evaluation", "empty-grid", "run_sweep: empty grid");
  require_sources(ctx);

  SweepResult result;
  result.kind = kind;

  switch (kind) {
    case SweepKind::kNeighbors: {
      std::vector<Tensor> adv = attack_set_pgd(ctx, ctx.pgd_budget);
      const Provenance prov{"pgd", ctx.pgd_budget.eps, ctx.seed};
      for (double gv : grid) {
        const int k = static_cast<int>(gv);
        if (k < 1) throw Error("evaluation", "bad-grid", "neighbors sweep: k must be >= 1");
        ScoreSets sets = score_samples(ctx.clean_eval, adv, *ctx.bundle, ctx.policy,
                                       ctx.thresholds, k, Rng::mix(ctx.seed, 0x50 + k), prov);
        // Count thresholds are k-scaled, so the verdict path recalibrates at
        // this k; rank references for scores stay fixed.
        DetectorThresholds th_k = detector::calibrate_thresholds(
            ctx.calibration_set, *ctx.bundle, ctx.policy, k, ctx.thresholds.target_fpr,
            Rng::mix(ctx.seed, 0xCA1), std::min<std::size_t>(200, ctx.calibration_set.size()));
        result.rows.push_back(metrics_row(ctx, sets.combined, adv, gv, "combined", th_k));
      }
      break;
    }
    case SweepKind::kAlpha: {
      for (double alpha : grid) {
        attacks::AdaptiveConfig cfg = ctx.adaptive;
        cfg.alpha = alpha;
        std::vector<Tensor> adv = attack_set_adaptive(ctx, cfg);
        const Provenance prov{"adaptive(alpha=" + std::to_string(alpha) + ")", cfg.budget.eps,
                              ctx.seed};
        ScoreSets sets =
            score_samples(ctx.clean_eval, adv, *ctx.bundle, ctx.policy, ctx.thresholds,
                          ctx.thresholds.k, Rng::mix(ctx.seed, 0xA1), prov);
        result.rows.push_back(metrics_row(ctx, sets.combined, adv, alpha, "combined",
                                          ctx.thresholds));
      }
      break;
    }
    case SweepKind::kEpsilon:
    case SweepKind::kAblation: {
      for (double eps : grid) {
        attacks::AdaptiveConfig cfg = ctx.adaptive;
        cfg.budget.eps = eps;
        cfg.budget.step_size = std::min(cfg.budget.step_size, eps);
        std::vector<Tensor> adv = attack_set_adaptive(ctx, cfg);
        const Provenance prov{"adaptive", eps, ctx.seed};
        ScoreSets sets =
            score_samples(ctx.clean_eval, adv, *ctx.bundle, ctx.policy, ctx.thresholds,
                          ctx.thresholds.k, Rng::mix(ctx.seed, 0xE5), prov);
        if (kind == SweepKind::kEpsilon) {
          result.rows.push_back(metrics_row(ctx, sets.combined, adv, eps, "combined",
                                            ctx.thresholds));
        } else {
          result.rows.push_back(metrics_row(ctx, sets.label_only, adv, eps, "label",
                                            ctx.thresholds));
          result.rows.push_back(metrics_row(ctx, sets.rep_only, adv, eps, "rep", ctx.thresholds));
          result.rows.push_back(metrics_row(ctx, sets.combined, adv, eps, "combined",
                                            ctx.thresholds));
        }
      }
      break;
    }
  }
  return result;
}

// ---- cost accounting ----

double dense_flops(const models::DenseLayer& layer) {
  return 2.0 * static_cast<double>(layer.in) * static_cast<double>(layer.out);
}

double conv_flops(const models::ConvLayer& layer, ndt::Index h_out, ndt::Index w_out) {
  return 2.0 * static_cast<double>(layer.ksize) * layer.ksize * layer.in_ch * layer.out_ch *
         static_cast<double>(h_out) * static_cast<double>(w_out);
}

namespace {

std::size_t count_params(const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) {
    (void)name;
    n += static_cast<std::size_t>(t->size());
  }
  return n;
}

double trunk_flops(const models::Trunk& t) {
  // conv1 at full resolution (pad 1, stride 1), conv2 after one 2x2 pool.
  return conv_flops(t.c1, t.height, t.width) + conv_flops(t.c2, t.height / 2, t.width / 2) +
         dense_flops(t.fc);
}

}  // namespace

CostReport cost_report(ModelBundle& bundle, const std::vector<Tensor>& sample_batch,
                       const augment::Policy& policy, int k, std::uint64_t seed) {
  if (sample_batch.empty())
    throw Error("evaluation", "empty-set", "cost_report: empty sample batch");

  CostReport r;
  r.params_classifier = count_params(models::named_params(bundle.classifier));
  r.params_encoder = count_params(models::named_params(bundle.encoder));
  r.params_head = count_params(models::named_params(bundle.head));
  r.params_total = r.params_classifier + r.params_encoder + r.params_head;

  r.flops_classifier = trunk_flops(bundle.classifier.trunk) + dense_flops(bundle.classifier.out);
  r.flops_encoder = trunk_flops(bundle.encoder.trunk);
  r.flops_projector = dense_flops(bundle.encoder.projector.l1) +
                      dense_flops(bundle.encoder.projector.l2) +
                      dense_flops(bundle.encoder.projector.l3);
  r.flops_head = dense_flops(bundle.head.fc);
  r.flops_total = r.flops_classifier + r.flops_encoder + r.flops_projector + r.flops_head;

  // Median wall time of 5 scoring passes over the batch.
  std::vector<double> times;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng root(Rng::mix(seed, static_cast<std::uint64_t>(rep)));
    for (std::size_t i = 0; i < sample_batch.size(); ++i) {
      augment::NeighborSet nb =
          augment::generate_neighbors(sample_batch[i], k, policy, root.split(i).seed());
      (void)detector::neighbor_stats(sample_batch[i], bundle, nb);
    }
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  r.wall_time_seconds = times[2];
  r.overall = r.flops_total * static_cast<double>(r.params_total) * r.wall_time_seconds;
  return r;
}

}  // namespace beyond::eval
