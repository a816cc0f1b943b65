// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
//
// Batch front end for the full pipeline: data generation, training,
// calibration, attacks, detection, evaluation, sweeps, and reports.
// All outputs are files under --out; exit 0 on success, 1 on domain errors
// (prefixed "error:<module>:<kind>"), 2 on usage errors.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "beyond/attacks.hpp"
#include "beyond/config.hpp"
#include "beyond/dataio.hpp"
#include "beyond/detector.hpp"
#include "beyond/metrics.hpp"
#include "beyond/sweeps.hpp"
#include "beyond/theory.hpp"
#include "beyond/train.hpp"

namespace fs = std::filesystem;
using namespace beyond;
using nlohmann::json;

namespace {

struct Paths {
  fs::path root;
  fs::path data_dir() const { return root / "data"; }
  fs::path models_dir() const { return root / "models"; }
  fs::path runs_dir() const { return root / "runs"; }
  fs::path train() const { return data_dir() / "train.bynd"; }
  fs::path calib() const { return data_dir() / "calib.bynd"; }
  fs::path eval() const { return data_dir() / "eval.bynd"; }
  fs::path adversarial(const std::string& kind) const {
    return data_dir() / ("adv-" + kind + ".bynd");
  }
  fs::path classifier() const { return models_dir() / "classifier.ckpt"; }
  fs::path encoder() const { return models_dir() / "encoder.ckpt"; }
  fs::path head() const { return models_dir() / "head.ckpt"; }
  fs::path thresholds() const { return root / "thresholds.json"; }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void finish_run(const Paths& paths, const std::string& run_id, const cli::RunConfig& cfg,
                io::ResultsBundle results) {
  fs::create_directories(paths.runs_dir());
  results.summary["run_id"] = run_id;
  results.raw_files.emplace_back("config.json", cfg.to_json().dump(2) + "\n");
  io::write_results(paths.runs_dir().string(), run_id, cfg.force, results);
  std::cout << "run " << run_id << " -> " << (paths.runs_dir() / run_id).string() << "\n";
}

models::Dataset load_split(const fs::path& path) {
  return io::load_dataset(path.string()).to_dataset();
}

models::ModelBundle load_bundle(const Paths& paths, bool need_classifier = true,
                                bool need_encoder = true, bool need_head = true) {
  models::ModelBundle bundle;
  io::BundleParts parts;
  if (fs::exists(paths.classifier()))
    parts.classifier = io::load_checkpoint(paths.classifier().string(), bundle).classifier;
  if (fs::exists(paths.encoder()))
    parts.encoder = io::load_checkpoint(paths.encoder().string(), bundle).encoder;
  if (fs::exists(paths.head())) parts.head = io::load_checkpoint(paths.head().string(), bundle).head;
  if ((need_classifier && !parts.classifier) || (need_encoder && !parts.encoder) ||
      (need_head && !parts.head))
    throw Error("cli", "missing-model",
                "required checkpoints missing under " + paths.models_dir().string() +
                    " (run train-clf / train-ssl / probe first)");
  return bundle;
}

json thresholds_to_json(const detector::DetectorThresholds& th) {
  json j;
  j["tau_cos"] = th.tau_cos;
  j["t_label"] = th.t_label;
  j["t_rep"] = th.t_rep;
  j["target_fpr"] = th.target_fpr;
  j["k"] = th.k;
  j["calibration_fpr"] = th.calibration_fpr;
  j["ref_label_stat"] = th.ref_label_stat;
  j["ref_rep_stat"] = th.ref_rep_stat;
  j["soft_label_mean"] = th.soft_label_mean;
  j["soft_label_std"] = th.soft_label_std;
  j["rep_mean"] = th.rep_mean;
  j["rep_std"] = th.rep_std;
  return j;
}

detector::DetectorThresholds thresholds_from_json(const json& j) {
  detector::DetectorThresholds th;
  th.tau_cos = j.at("tau_cos");
  th.t_label = j.at("t_label");
  th.t_rep = j.at("t_rep");
  th.target_fpr = j.at("target_fpr");
  th.k = j.at("k");
  th.calibration_fpr = j.at("calibration_fpr");
  th.ref_label_stat = j.at("ref_label_stat").get<std::vector<double>>();
  th.ref_rep_stat = j.at("ref_rep_stat").get<std::vector<double>>();
  th.soft_label_mean = j.at("soft_label_mean");
  th.soft_label_std = j.at("soft_label_std");
  th.rep_mean = j.at("rep_mean");
  th.rep_std = j.at("rep_std");
  return th;
}

detector::DetectorThresholds load_thresholds(const Paths& paths) {
  std::ifstream in(paths.thresholds());
  if (!in)
    throw Error("cli", "missing-thresholds",
                "no thresholds at " + paths.thresholds().string() + " (run calibrate first)");
  json j;
  in >> j;
  return thresholds_from_json(j);
}

void save_thresholds_file(const Paths& paths, const detector::DetectorThresholds& th) {
  fs::create_directories(paths.root);
  std::ofstream out(paths.thresholds());
  out << thresholds_to_json(th).dump(2) << "\n";
}

// ---- commands ----

int cmd_gen_data(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  io::SynthConfig sc;
  sc.classes = cfg.data.classes;
  sc.per_class = cfg.data.per_class;
  sc.height = cfg.data.height;
  sc.width = cfg.data.width;
  sc.seed = cfg.seed_for("data");
  io::DatasetContainer all = io::generate_synthetic_dataset(sc);

  const std::uint32_t n = all.count();
  const std::uint32_t n_train = static_cast<std::uint32_t>(n * cfg.data.train_frac);
  const std::uint32_t n_calib = static_cast<std::uint32_t>(cfg.data.calib_count);
  if (n_train + n_calib >= n)
    throw Error("cli", "bad-split", "train_frac + calib_count leave no evaluation split");

  auto slice = [&](std::uint32_t from, std::uint32_t to, const std::string& tag) {
    std::vector<ndt::Tensor> images;
    std::vector<int> labels;
    for (std::uint32_t i = from; i < to; ++i) {
      images.push_back(all.image(i));
      labels.push_back(all.labels[i]);
    }
    io::DatasetContainer part =
        io::DatasetContainer::from_images(images, labels, all.num_classes, all.provenance + " split=" + tag);
    return part;
  };

  fs::create_directories(paths.data_dir());
  io::save_dataset(paths.train().string(), slice(0, n_train, "train"));
  io::save_dataset(paths.calib().string(), slice(n_train, n_train + n_calib, "calib"));
  io::save_dataset(paths.eval().string(), slice(n_train + n_calib, n, "eval"));

  io::ResultsBundle results;
  results.summary = {{"count", n},
                     {"train", n_train},
                     {"calib", n_calib},
                     {"eval", n - n_train - n_calib},
                     {"classes", cfg.data.classes}};
  finish_run(paths, "gen-data", cfg, std::move(results));
  return 0;
}

int cmd_train_clf(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::Dataset train = load_split(paths.train());
  models::Dataset test = load_split(paths.eval());

  models::TrainConfig tc;
  tc.epochs = cfg.models.clf_epochs;
  tc.batch = cfg.models.clf_batch;
  tc.lr = cfg.models.clf_lr;
  tc.seed = cfg.seed_for("classifier");
  models::ClassifierNet net = models::train_classifier(train, test, cfg.data.classes, tc);

  models::ModelBundle bundle;
  bundle.classifier = net;
  fs::create_directories(paths.models_dir());
  io::save_checkpoint(paths.classifier().string(), bundle, {true, false, false},
                      {{"seed", tc.seed}, {"epochs", tc.epochs}, {"lr", tc.lr}});

  io::ResultsBundle results;
  results.summary = {{"train_accuracy", net.train_accuracy}, {"test_accuracy", net.test_accuracy}};
  finish_run(paths, "train-clf", cfg, std::move(results));
  return 0;
}

int cmd_train_ssl(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::Dataset train = load_split(paths.train());

  models::TrainConfig tc;
  tc.epochs = cfg.models.ssl_epochs;
  tc.batch = cfg.models.ssl_batch;
  tc.lr = cfg.models.ssl_lr;
  tc.weight_decay = cfg.models.ssl_weight_decay;
  tc.predictor_lr_scale = cfg.models.predictor_lr_scale;
  tc.seed = cfg.seed_for("ssl");
  models::SSLEncoder enc = models::train_ssl(train, cfg.training_policy(), tc);

  models::ModelBundle bundle;
  bundle.encoder = enc;
  fs::create_directories(paths.models_dir());
  io::save_checkpoint(paths.encoder().string(), bundle, {false, true, false},
                      {{"seed", tc.seed}, {"epochs", tc.epochs}, {"lr", tc.lr}});

  const std::size_t guard_n = std::min<std::size_t>(train.size(), 256);
  std::vector<ndt::Tensor> guard(train.images.begin(),
                                 train.images.begin() + static_cast<long>(guard_n));
  io::ResultsBundle results;
  results.summary = {{"initial_probe_loss", enc.initial_probe_loss},
                     {"final_probe_loss", enc.final_probe_loss},
                     {"embedding_coordinate_std", models::embedding_coordinate_std(enc, guard)}};
  finish_run(paths, "train-ssl", cfg, std::move(results));
  return 0;
}

int cmd_probe(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths, false, true, false);
  models::Dataset train = load_split(paths.train());
  models::Dataset test = load_split(paths.eval());

  models::TrainConfig tc;
  tc.epochs = cfg.models.head_epochs;
  tc.batch = cfg.models.head_batch;
  tc.lr = cfg.models.head_lr;
  tc.seed = cfg.seed_for("head");
  bundle.head = models::train_class_head(bundle.encoder, train, test, cfg.data.classes, tc);

  io::save_checkpoint(paths.head().string(), bundle, {false, false, true},
                      {{"seed", tc.seed}, {"epochs", tc.epochs}});

  io::ResultsBundle results;
  results.summary = {{"head_test_accuracy", bundle.head.test_accuracy}};
  finish_run(paths, "probe", cfg, std::move(results));
  return 0;
}

int cmd_calibrate(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths);
  models::Dataset calib = load_split(paths.calib());

  detector::DetectorThresholds th = detector::calibrate_thresholds(
      calib.images, bundle, cfg.detection_policy(), cfg.detector.k, cfg.detector.target_fpr,
      cfg.seed_for("calibrate"));
  save_thresholds_file(paths, th);

  io::ResultsBundle results;
  results.summary = {{"tau_cos", th.tau_cos},
                     {"t_label", th.t_label},
                     {"t_rep", th.t_rep},
                     {"k", th.k},
                     {"target_fpr", th.target_fpr},
                     {"calibration_fpr", th.calibration_fpr}};
  finish_run(paths, "calibrate", cfg, std::move(results));
  return 0;
}

struct AttackOutcome {
  std::vector<ndt::Tensor> adversarial;
  std::vector<int> labels;
  int misclassified = 0;
};

AttackOutcome run_attack(const cli::RunConfig& cfg, const models::ModelBundle& bundle,
                         const detector::DetectorThresholds* thresholds) {
  Paths paths{cfg.out_dir};
  models::Dataset eval_set = load_split(paths.eval());
  const std::size_t n = std::min<std::size_t>(eval_set.size(), cfg.eval.n_attack);
  if (n == 0) throw Error("cli", "empty-set", "attack: evaluation split is empty");

  AttackOutcome out;
  Rng root(cfg.seed_for("attack"));
  for (std::size_t i = 0; i < n; ++i) {
    const ndt::Tensor& x = eval_set.images[i];
    const int y = eval_set.labels[i];
    attacks::AttackBudget budget;
    budget.eps = cfg.attacks.eps;
    budget.step_size = cfg.attacks.step_size;
    budget.steps = cfg.attacks.steps;
    budget.seed = root.split(i).seed();

    ndt::Tensor adv = x;
    if (cfg.attacks.kind == "fgsm") {
      adv = attacks::fgsm(x, y, bundle.classifier, cfg.attacks.eps).x_adv;
    } else if (cfg.attacks.kind == "pgd") {
      adv = attacks::pgd(x, y, bundle.classifier, budget).x_adv;
    } else if (cfg.attacks.kind == "adaptive") {
      attacks::AdaptiveConfig ac{cfg.attacks.alpha, cfg.attacks.k_eot, budget};
      const int y_t = attacks::least_likely_class(bundle.classifier, x);
      adv = attacks::adaptive_attack(x, y_t, bundle, cfg.detection_policy(), ac).x_adv;
    } else if (cfg.attacks.kind == "orthogonal" || cfg.attacks.kind == "selection") {
      if (!thresholds)
        throw Error("cli", "missing-thresholds", "orthogonal attacks need calibrated thresholds");
      const int y_t = attacks::least_likely_class(bundle.classifier, x);
      adv = attacks::orthogonal_pgd(x, y_t, bundle, cfg.detection_policy(), *thresholds, budget,
                                    cfg.attacks.kind == "orthogonal"
                                        ? attacks::OrthogonalStrategy::kOrthogonal
                                        : attacks::OrthogonalStrategy::kSelection)
                .x_adv;
    } else {
      throw Error("cli", "bad-attack", "unknown attack kind: " + cfg.attacks.kind);
    }
    out.misclassified += (models::classify(bundle.classifier, adv).label != y);
    out.adversarial.push_back(std::move(adv));
    out.labels.push_back(y);
  }
  return out;
}

int cmd_attack(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  const bool needs_detector =
      cfg.attacks.kind == "orthogonal" || cfg.attacks.kind == "selection";
  models::ModelBundle bundle =
      load_bundle(paths, true, needs_detector || cfg.attacks.kind == "adaptive",
                  needs_detector || cfg.attacks.kind == "adaptive");
  detector::DetectorThresholds th;
  if (needs_detector) th = load_thresholds(paths);

  AttackOutcome out = run_attack(cfg, bundle, needs_detector ? &th : nullptr);

  io::DatasetContainer adv_container = io::DatasetContainer::from_images(
      out.adversarial, out.labels, cfg.data.classes,
      "adversarial kind=" + cfg.attacks.kind + " eps=" + fmt(cfg.attacks.eps) +
          " steps=" + std::to_string(cfg.attacks.steps) +
          " seed=" + std::to_string(cfg.seed_for("attack")));
  io::save_dataset(paths.adversarial(cfg.attacks.kind).string(), adv_container);

  io::ResultsBundle results;
  results.summary = {{"kind", cfg.attacks.kind},
                     {"eps", cfg.attacks.eps},
                     {"count", out.adversarial.size()},
                     {"attack_success_rate",
                      static_cast<double>(out.misclassified) /
                          static_cast<double>(out.adversarial.size())}};
  finish_run(paths, "attack-" + cfg.attacks.kind, cfg, std::move(results));
  return 0;
}

int cmd_detect(const cli::RunConfig& cfg, const std::string& input) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths);
  detector::DetectorThresholds th = load_thresholds(paths);

  const fs::path in_path = input.empty() ? paths.eval() : fs::path(input);
  io::DatasetContainer container = io::load_dataset(in_path.string());
  models::Dataset data = container.to_dataset();
  const std::size_t n = std::min<std::size_t>(data.size(), cfg.eval.n_eval);
  std::vector<ndt::Tensor> xs(data.images.begin(), data.images.begin() + static_cast<long>(n));

  std::vector<detector::DetectionRecord> records =
      detector::detect_batch(xs, bundle, cfg.detection_policy(), th, cfg.seed_for("detect"));

  io::ResultsTable table;
  table.name = "verdicts";
  table.columns = {"index", "ind_label", "ind_rep", "label_stat", "rep_stat", "score", "verdict"};
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    rejected += r.reject;
    table.rows.push_back({std::to_string(i), std::to_string(r.ind_label),
                          std::to_string(r.ind_rep), fmt(r.label_stat), fmt(r.rep_stat),
                          fmt(r.score), r.reject ? "reject" : "accept"});
  }

  io::ResultsBundle results;
  results.tables.push_back(std::move(table));
  results.summary = {{"input", in_path.string()},
                     {"count", records.size()},
                     {"reject_rate", static_cast<double>(rejected) / records.size()},
                     {"provenance", container.provenance}};
  if (container.provenance.find("adversarial") == std::string::npos)
    results.summary["fpr"] = static_cast<double>(rejected) / records.size();
  finish_run(paths, "detect", cfg, std::move(results));
  return 0;
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& adv_input) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths);
  detector::DetectorThresholds th = load_thresholds(paths);

  models::Dataset clean = load_split(paths.eval());
  const fs::path adv_path =
      adv_input.empty() ? paths.adversarial(cfg.attacks.kind) : fs::path(adv_input);
  io::DatasetContainer adv_container = io::load_dataset(adv_path.string());
  models::Dataset adv = adv_container.to_dataset();

  const std::size_t n_clean = std::min<std::size_t>(clean.size(), cfg.eval.n_eval);
  std::vector<ndt::Tensor> clean_x(clean.images.begin(),
                                   clean.images.begin() + static_cast<long>(n_clean));

  eval::Provenance prov{adv_container.provenance, cfg.attacks.eps, cfg.seed};
  eval::ScoreSets sets = eval::score_samples(clean_x, adv.images, bundle, cfg.detection_policy(),
                                             th, th.k, cfg.seed_for("eval"), prov);

  eval::RocCurve curve = eval::roc_auc(sets.combined);
  const double tpr5 = eval::tpr_at_fpr(sets.combined, 0.05);
  const double ra = eval::robust_accuracy(adv.images, adv.labels, bundle, cfg.detection_policy(),
                                          th, cfg.seed_for("eval-detect"));

  io::CurveData curve_data;
  curve_data.name = "roc";
  for (const eval::RocPoint& p : curve.points)
    curve_data.points.push_back({p.fpr, p.tpr, p.threshold});

  io::ResultsBundle results;
  results.curves.push_back(std::move(curve_data));
  results.summary = {{"auc", curve.auc},
                     {"tpr_at_fpr_5", tpr5},
                     {"robust_accuracy", ra},
                     {"auc_label_only", eval::roc_auc(sets.label_only).auc},
                     {"auc_rep_only", eval::roc_auc(sets.rep_only).auc},
                     {"adversarial_input", adv_path.string()}};
  finish_run(paths, "eval", cfg, std::move(results));
  return 0;
}

int cmd_sweep(const cli::RunConfig& cfg, const std::string& kind_name, std::string grid_text) {
  Paths paths{cfg.out_dir};
  eval::SweepKind kind = eval::sweep_kind_from_name(kind_name);

  models::ModelBundle bundle = load_bundle(paths);
  detector::DetectorThresholds th = load_thresholds(paths);
  models::Dataset clean = load_split(paths.eval());
  models::Dataset calib = load_split(paths.calib());

  eval::SweepContext ctx;
  ctx.bundle = &bundle;
  ctx.policy = cfg.detection_policy();
  ctx.thresholds = th;
  ctx.calibration_set = calib.images;
  const std::size_t n_eval = std::min<std::size_t>(clean.size(), cfg.eval.n_eval);
  ctx.clean_eval.assign(clean.images.begin(), clean.images.begin() + static_cast<long>(n_eval));
  const std::size_t n_att = std::min<std::size_t>(clean.size(), cfg.eval.n_attack);
  ctx.attack_sources.assign(clean.images.begin(), clean.images.begin() + static_cast<long>(n_att));
  ctx.attack_labels.assign(clean.labels.begin(), clean.labels.begin() + static_cast<long>(n_att));
  ctx.adaptive = attacks::AdaptiveConfig{
      cfg.attacks.alpha, cfg.attacks.k_eot,
      attacks::AttackBudget{cfg.attacks.eps, cfg.attacks.steps, cfg.attacks.step_size}};
  ctx.pgd_budget =
      attacks::AttackBudget{cfg.attacks.eps, cfg.attacks.steps, cfg.attacks.step_size};
  ctx.seed = cfg.seed_for("sweep");

  std::vector<double> grid;
  if (grid_text.empty()) {
    switch (kind) {
      case eval::SweepKind::kNeighbors: grid = {5, 10, 25, 50}; break;
      case eval::SweepKind::kAlpha: grid = {0, 1, 10, 20, 50, 100}; break;
      case eval::SweepKind::kEpsilon:
      case eval::SweepKind::kAblation:
        grid = {2.0 / 255.0, 8.0 / 255.0, 32.0 / 255.0};
        break;
    }
  } else {
    std::stringstream ss(grid_text);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(cli::parse_eps(item));
  }

  eval::SweepResult result = eval::run_sweep(kind, grid, ctx);

  io::ResultsTable table;
  table.name = "sweep";
  table.columns = {"grid_value", "mechanism", "auc", "tpr_at_fpr5", "robust_accuracy"};
  for (const eval::SweepRow& row : result.rows)
    table.rows.push_back(
        {fmt(row.grid_value), row.mechanism, fmt(row.auc), fmt(row.tpr_at_fpr5),
         fmt(row.robust_acc)});

  io::ResultsBundle results;
  results.tables.push_back(std::move(table));
  results.summary = {{"kind", kind_name}, {"grid", grid}, {"rows", result.rows.size()}};
  finish_run(paths, "sweep-" + kind_name, cfg, std::move(results));
  return 0;
}

int cmd_theory(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths);
  models::Dataset eval_set = load_split(paths.eval());

  const std::size_t n = std::min<std::size_t>(eval_set.size(), cfg.eval.n_eval);
  std::vector<ndt::Tensor> xs(eval_set.images.begin(),
                              eval_set.images.begin() + static_cast<long>(n));
  std::vector<int> ys(eval_set.labels.begin(), eval_set.labels.begin() + static_cast<long>(n));

  attacks::AttackBudget budget{cfg.attacks.eps, cfg.attacks.steps, cfg.attacks.step_size};
  Rng atk_rng(cfg.seed_for("theory-attack"));
  std::size_t attack_index = 0;
  theory::AttackFn attack = [&](const ndt::Tensor& x, int label) -> std::optional<ndt::Tensor> {
    attacks::AttackBudget b = budget;
    b.seed = atk_rng.split(attack_index++).seed();
    try {
      return attacks::pgd(x, label, bundle.classifier, b).x_adv;
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  theory::GapReport gap = theory::feature_gap_check(xs, ys, bundle, cfg.detection_policy(),
                                                    attack, cfg.seed_for("theory-gap"));
  theory::OrderingReport ord = theory::perturbation_ordering_check(
      xs, ys, bundle, cfg.detection_policy(), budget, cfg.seed_for("theory-ord"));

  io::ResultsTable gaps;
  gaps.name = "feature_gaps";
  gaps.columns = {"clean_gap", "adv_gap"};
  for (const auto& [c, a] : gap.gaps) gaps.rows.push_back({fmt(c), fmt(a)});

  io::ResultsTable norms;
  norms.name = "perturbation_norms";
  norms.columns = {"jvp_delta", "jvp_w_delta", "jvp_w_noise"};
  for (const auto& row : ord.norms) norms.rows.push_back({fmt(row[0]), fmt(row[1]), fmt(row[2])});

  io::ResultsBundle results;
  results.tables.push_back(std::move(gaps));
  results.tables.push_back(std::move(norms));
  results.summary = {{"mean_clean_gap", gap.mean_clean},
                     {"mean_adv_gap", gap.mean_adv},
                     {"gap_ratio", gap.mean_adv / std::max(gap.mean_clean, 1e-30)},
                     {"fraction_adv_greater", gap.fraction_adv_greater},
                     {"ordering_fraction_full_chain", ord.fraction_full_chain},
                     {"ordering_fraction_first", ord.fraction_first},
                     {"ordering_fraction_second", ord.fraction_second}};
  std::cout << "feature gap: clean=" << gap.mean_clean << " adv=" << gap.mean_adv
            << " ratio=" << gap.mean_adv / std::max(gap.mean_clean, 1e-30)
            << " frac(adv>clean)=" << gap.fraction_adv_greater << "\n"
            << "ordering chain holds on " << ord.fraction_full_chain * 100.0 << "% of samples\n";
  finish_run(paths, "theory", cfg, std::move(results));
  return 0;
}

int cmd_cost(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  models::ModelBundle bundle = load_bundle(paths);
  models::Dataset eval_set = load_split(paths.eval());
  const std::size_t n = std::min<std::size_t>(eval_set.size(), 16);
  std::vector<ndt::Tensor> batch(eval_set.images.begin(),
                                 eval_set.images.begin() + static_cast<long>(n));

  eval::CostReport r = eval::cost_report(bundle, batch, cfg.detection_policy(), cfg.detector.k,
                                         cfg.seed_for("cost"));

  io::ResultsTable table;
  table.name = "costs";
  table.columns = {"component", "params", "flops"};
  table.rows = {{"classifier", std::to_string(r.params_classifier), fmt(r.flops_classifier)},
                {"encoder", std::to_string(r.params_encoder), fmt(r.flops_encoder)},
                {"projector", "-", fmt(r.flops_projector)},
                {"head", std::to_string(r.params_head), fmt(r.flops_head)},
                {"total", std::to_string(r.params_total), fmt(r.flops_total)}};

  io::ResultsBundle results;
  results.tables.push_back(std::move(table));
  results.summary = {{"params", r.params_total},
                     {"flops", r.flops_total},
                     {"wall_time_seconds", r.wall_time_seconds},
                     {"overall", r.overall}};
  finish_run(paths, "cost", cfg, std::move(results));
  return 0;
}

int cmd_report(const cli::RunConfig& cfg) {
  Paths paths{cfg.out_dir};
  if (!fs::exists(paths.runs_dir()))
    throw Error("cli", "missing-runs", "no runs directory under " + paths.root.string());

  std::string md = "# Pipeline report\n\n";
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(paths.runs_dir()))
    if (entry.is_directory() && entry.path().filename().string().front() != '.')
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  for (const fs::path& dir : dirs) {
    const fs::path summary = dir / "summary.json";
    if (!fs::exists(summary)) continue;
    std::ifstream in(summary);
    json j;
    in >> j;
    md += "## " + dir.filename().string() + "\n\n";
    for (auto it = j.begin(); it != j.end(); ++it)
      md += "- " + it.key() + ": " + it.value().dump() + "\n";
    md += "\n";
  }

  const fs::path out_md = paths.root / "report.md";
  std::ofstream out(out_md);
  out << md;
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augmentation-neighborhood adversarial example detection laboratory"};
  app.require_subcommand(1);

  cli::RunConfig cfg;
  std::string config_path, eps_text, step_text, grid_text, input_path, sweep_kind = "neighbors";

  // Config file values act as defaults that explicit flags override, so the
  // file is applied before CLI11 binds: peek at argv for --config first.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    std::string path;
    if (arg == "--config" && i + 1 < argc)
      path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0)
      path = arg.substr(9);
    if (!path.empty()) {
      try {
        cfg.load_file(path);
      } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
      }
      break;
    }
  }

  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--out", cfg.out_dir, "output root directory");
  app.add_flag("--force", cfg.force, "overwrite existing run outputs");

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset splits");
  gen->add_option("--classes", cfg.data.classes);
  gen->add_option("--per-class", cfg.data.per_class);
  gen->add_option("--height", cfg.data.height);
  gen->add_option("--width", cfg.data.width);
  gen->add_option("--calib-count", cfg.data.calib_count);
  gen->add_option("--train-frac", cfg.data.train_frac);

  CLI::App* tclf = app.add_subcommand("train-clf", "train the target classifier");
  tclf->add_option("--epochs", cfg.models.clf_epochs);
  tclf->add_option("--batch", cfg.models.clf_batch);
  tclf->add_option("--lr", cfg.models.clf_lr);

  CLI::App* tssl = app.add_subcommand("train-ssl", "train the self-supervised encoder");
  tssl->add_option("--epochs", cfg.models.ssl_epochs);
  tssl->add_option("--batch", cfg.models.ssl_batch);
  tssl->add_option("--lr", cfg.models.ssl_lr);
  tssl->add_option("--weight-decay", cfg.models.ssl_weight_decay);
  tssl->add_option("--predictor-lr-scale", cfg.models.predictor_lr_scale);

  CLI::App* probe = app.add_subcommand("probe", "train the frozen-trunk classification head");
  probe->add_option("--epochs", cfg.models.head_epochs);
  probe->add_option("--lr", cfg.models.head_lr);

  CLI::App* calib = app.add_subcommand("calibrate", "calibrate detection thresholds on clean data");
  calib->add_option("--k", cfg.detector.k);
  calib->add_option("--target-fpr", cfg.detector.target_fpr);

  CLI::App* attack = app.add_subcommand("attack", "craft adversarial examples");
  attack->add_option("--kind", cfg.attacks.kind)
      ->check(CLI::IsMember({"fgsm", "pgd", "adaptive", "orthogonal", "selection"}));
  attack->add_option("--eps", eps_text, "budget, fraction (8/255) or decimal");
  attack->add_option("--step-size", step_text);
  attack->add_option("--steps", cfg.attacks.steps);
  attack->add_option("--alpha", cfg.attacks.alpha);
  attack->add_option("--k-eot", cfg.attacks.k_eot);
  attack->add_option("--n", cfg.eval.n_attack, "number of samples to attack");

  CLI::App* detect = app.add_subcommand("detect", "run the detector over a dataset container");
  detect->add_option("--input", input_path, "container path (default: clean eval split)");
  detect->add_option("--n", cfg.eval.n_eval);

  CLI::App* evalc = app.add_subcommand("eval", "score clean vs adversarial and compute metrics");
  evalc->add_option("--adversarial", input_path, "adversarial container path");
  evalc->add_option("--kind", cfg.attacks.kind, "attack kind (picks default container)");
  evalc->add_option("--eps", eps_text);
  evalc->add_option("--n", cfg.eval.n_eval);

  CLI::App* sweep = app.add_subcommand("sweep", "run an experiment sweep");
  sweep->add_option("--kind", sweep_kind)
      ->check(CLI::IsMember({"neighbors", "alpha", "epsilon", "ablation"}));
  sweep->add_option("--grid", grid_text, "comma-separated grid values");
  sweep->add_option("--eps", eps_text);
  sweep->add_option("--steps", cfg.attacks.steps);
  sweep->add_option("--k-eot", cfg.attacks.k_eot);
  sweep->add_option("--n-eval", cfg.eval.n_eval);
  sweep->add_option("--n-attack", cfg.eval.n_attack);

  CLI::App* theory = app.add_subcommand("theory", "feature-gap and perturbation-ordering checks");
  theory->add_option("--eps", eps_text);
  theory->add_option("--n", cfg.eval.n_eval);

  CLI::App* cost = app.add_subcommand("cost", "parameter/FLOPs/time accounting");
  (void)cost;
  CLI::App* report = app.add_subcommand("report", "aggregate run summaries into report.md");
  (void)report;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!eps_text.empty()) cfg.attacks.eps = cli::parse_eps(eps_text);
    if (!step_text.empty()) cfg.attacks.step_size = cli::parse_eps(step_text);

    if (*gen) return cmd_gen_data(cfg);
    if (*tclf) return cmd_train_clf(cfg);
    if (*tssl) return cmd_train_ssl(cfg);
    if (*probe) return cmd_probe(cfg);
    if (*calib) return cmd_calibrate(cfg);
    if (*attack) return cmd_attack(cfg);
    if (*detect) return cmd_detect(cfg, input_path);
    if (*evalc) return cmd_eval(cfg, input_path);
    if (*sweep) return cmd_sweep(cfg, sweep_kind, grid_text);
    if (*theory) return cmd_theory(cfg);
    if (*cost) return cmd_cost(cfg);
    if (*report) return cmd_report(cfg);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:cli:unexpected: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
