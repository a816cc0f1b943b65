// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/config.hpp"

#include <fstream>

#include "beyond/error.hpp"

namespace beyond::cli {

using nlohmann::json;

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out_dir;
  j["data"] = {{"classes", data.classes},     {"per_class", data.per_class},
               {"height", data.height},       {"width", data.width},
               {"train_frac", data.train_frac}, {"calib_count", data.calib_count}};
  j["models"] = {{"clf_epochs", models.clf_epochs},
                 {"clf_batch", models.clf_batch},
                 {"clf_lr", models.clf_lr},
                 {"ssl_epochs", models.ssl_epochs},
                 {"ssl_batch", models.ssl_batch},
                 {"ssl_lr", models.ssl_lr},
                 {"ssl_weight_decay", models.ssl_weight_decay},
                 {"predictor_lr_scale", models.predictor_lr_scale},
                 {"head_epochs", models.head_epochs},
                 {"head_batch", models.head_batch},
                 {"head_lr", models.head_lr}};
  j["augment"] = {{"rotation_deg", aug.rotation_deg},
                  {"jitter_lo", aug.jitter_lo},
                  {"jitter_hi", aug.jitter_hi},
                  {"train_rotation_deg", aug.train_rotation_deg},
                  {"train_jitter_lo", aug.train_jitter_lo},
                  {"train_jitter_hi", aug.train_jitter_hi},
                  {"train_translation", aug.train_translation}};
  j["detector"] = {{"k", detector.k}, {"target_fpr", detector.target_fpr}};
  j["attacks"] = {{"kind", attacks.kind},   {"eps", attacks.eps},
                  {"step_size", attacks.step_size}, {"steps", attacks.steps},
                  {"alpha", attacks.alpha}, {"k_eot", attacks.k_eot}};
  j["eval"] = {{"n_eval", eval.n_eval}, {"n_attack", eval.n_attack}};
  return j;
}

namespace {
template <class T>
void pull(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void pull_eps(const json& j, const char* key, double& into) {
  if (!j.contains(key)) return;
  if (j.at(key).is_string())
    into = parse_eps(j.at(key).get<std::string>());
  else
    into = j.at(key).get<double>();
}
}  // namespace

void RunConfig::merge_json(const json& j) {
  pull(j, "seed", seed);
  pull(j, "out", out_dir);
  if (j.contains("data")) {
    const json& d = j.at("data");
    pull(d, "classes", data.classes);
    pull(d, "per_class", data.per_class);
    pull(d, "height", data.height);
    pull(d, "width", data.width);
    pull(d, "train_frac", data.train_frac);
    pull(d, "calib_count", data.calib_count);
  }
  if (j.contains("models")) {
    const json& m = j.at("models");
    pull(m, "clf_epochs", models.clf_epochs);
    pull(m, "clf_batch", models.clf_batch);
    pull(m, "clf_lr", models.clf_lr);
    pull(m, "ssl_epochs", models.ssl_epochs);
    pull(m, "ssl_batch", models.ssl_batch);
    pull(m, "ssl_lr", models.ssl_lr);
    pull(m, "ssl_weight_decay", models.ssl_weight_decay);
    pull(m, "predictor_lr_scale", models.predictor_lr_scale);
    pull(m, "head_epochs", models.head_epochs);
    pull(m, "head_batch", models.head_batch);
    pull(m, "head_lr", models.head_lr);
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    pull(a, "rotation_deg", aug.rotation_deg);
    pull(a, "jitter_lo", aug.jitter_lo);
    pull(a, "jitter_hi", aug.jitter_hi);
    pull(a, "train_rotation_deg", aug.train_rotation_deg);
    pull(a, "train_jitter_lo", aug.train_jitter_lo);
    pull(a, "train_jitter_hi", aug.train_jitter_hi);
    pull(a, "train_translation", aug.train_translation);
  }
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    pull(d, "k", detector.k);
    pull(d, "target_fpr", detector.target_fpr);
  }
  if (j.contains("attacks")) {
    const json& a = j.at("attacks");
    pull(a, "kind", attacks.kind);
    pull_eps(a, "eps", attacks.eps);
    pull_eps(a, "step_size", attacks.step_size);
    pull(a, "steps", attacks.steps);
    pull(a, "alpha", attacks.alpha);
    pull(a, "k_eot", attacks.k_eot);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    pull(e, "n_eval", eval.n_eval);
    pull(e, "n_attack", eval.n_attack);
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cli", "config", "cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("cli", "config", std::string("config parse failure: ") + e.what());
  }
  merge_json(j);
}

std::uint64_t RunConfig::seed_for(const std::string& purpose) const {
  std::uint64_t h = 0x9E3779B97F4A7C15ULL;
  for (char c : purpose) h = Rng::mix(h, static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return Rng::mix(seed, h);
}

augment::Policy RunConfig::detection_policy() const {
  return {augment::rotation_spec(aug.rotation_deg),
          augment::color_jitter_spec(aug.jitter_lo, aug.jitter_hi)};
}

augment::Policy RunConfig::training_policy() const {
  augment::Policy p = {augment::rotation_spec(aug.train_rotation_deg),
                       augment::color_jitter_spec(aug.train_jitter_lo, aug.train_jitter_hi)};
  if (aug.train_translation > 0) p.push_back(augment::translation_spec(aug.train_translation));
  return p;
}

double parse_eps(const std::string& text) {
  const std::size_t slash = text.find('/');
  double num = 0.0, den = 1.0;
  try {
    if (slash == std::string::npos) {
      num = std::stod(text);
    } else {
      num = std::stod(text.substr(0, slash));
      den = std::stod(text.substr(slash + 1));
    }
  } catch (const std::exception&) {
    throw Error("cli", "eps", "cannot parse eps value: " + text);
  }
  if (den == 0.0) throw Error("cli", "eps", "division by zero in eps value: " + text);
  return num / den;
}

}  // namespace beyond::cli
