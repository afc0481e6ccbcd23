#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diec/dataset.hpp"
#include "diec/diec_train.hpp"
#include "diec/errors.hpp"
#include "diec/search.hpp"
#include "diec/unet.hpp"

namespace diec {

struct PretrainConfig {
  int epochs = 30;
  int batch = 64;
  double lr = 1e-3;

  void validate() const {
    if (epochs < 0) throw param_error("pretrain: epochs must be >= 0");
    if (batch < 1) throw param_error("pretrain: batch must be >= 1");
    if (!(lr > 0.0)) throw param_error("pretrain: lr must be positive");
  }
};

struct ScheduleConfig {
  int timesteps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ArchDescriptor backbone;
  ScheduleConfig schedule;
  PretrainConfig pretrain;
  SearchConfig search;
  DiECConfig diec;
  int sample_count = 16;  // images per sample grid
  uint64_t seed = 0;
  std::string out = "run";
};

namespace cfgdetail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw param_error("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || it.key() == a;
    if (!ok) throw param_error("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void fetch(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw param_error(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace cfgdetail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using cfgdetail::check_keys;
  using cfgdetail::fetch;
  ExperimentConfig c;
  check_keys(j, {"dataset", "backbone", "schedule", "pretrain", "search", "diec",
                 "sample_count", "seed", "out"},
             "root");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"kind", "image_size", "classes", "per_class", "seed", "noise",
                   "normalization", "images", "labels"},
               "dataset");
    std::string kind = dataset_kind_name(c.dataset.kind);
    fetch(d, "kind", kind);
    c.dataset.kind = dataset_kind_from_name(kind);
    fetch(d, "image_size", c.dataset.image_size);
    fetch(d, "classes", c.dataset.classes);
    fetch(d, "per_class", c.dataset.per_class);
    fetch(d, "seed", c.dataset.seed);
    fetch(d, "noise", c.dataset.noise);
    fetch(d, "normalization", c.dataset.normalization);
    fetch(d, "images", c.dataset.idx_images);
    fetch(d, "labels", c.dataset.idx_labels);
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    check_keys(b, {"in_channels", "image_size", "widths", "temb_dim"}, "backbone");
    fetch(b, "in_channels", c.backbone.in_channels);
    fetch(b, "image_size", c.backbone.image_size);
    if (b.contains("widths")) {
      std::vector<int> w = b.at("widths").get<std::vector<int>>();
      if (w.size() != 4) throw param_error("config: backbone.widths must have 4 entries");
      for (int i = 0; i < 4; ++i) c.backbone.widths[i] = w[i];
    }
    fetch(b, "temb_dim", c.backbone.temb_dim);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, {"timesteps", "beta_start", "beta_end"}, "schedule");
    fetch(s, "timesteps", c.schedule.timesteps);
    fetch(s, "beta_start", c.schedule.beta_start);
    fetch(s, "beta_end", c.schedule.beta_end);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    check_keys(p, {"epochs", "batch", "lr"}, "pretrain");
    fetch(p, "epochs", c.pretrain.epochs);
    fetch(p, "batch", c.pretrain.batch);
    fetch(p, "lr", c.pretrain.lr);
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    check_keys(s, {"t_max", "stride", "subset", "trials", "align_dim", "window", "rho",
                   "patience", "kmeans_restarts", "kmeans_iters"},
               "search");
    fetch(s, "t_max", c.search.T_s);
    fetch(s, "stride", c.search.dt);
    fetch(s, "subset", c.search.m);
    fetch(s, "trials", c.search.R);
    fetch(s, "align_dim", c.search.d);
    fetch(s, "window", c.search.w);
    fetch(s, "rho", c.search.rho);
    fetch(s, "patience", c.search.patience);
    fetch(s, "kmeans_restarts", c.search.kmeans_restarts);
    fetch(s, "kmeans_iters", c.search.kmeans_iters);
  }
  if (j.contains("diec")) {
    const auto& d = j.at("diec");
    check_keys(d, {"alpha", "beta", "gamma", "student_alpha", "init_trials", "target_interval",
                   "knn", "epochs", "batch", "lr", "label_change_stop", "use_lre",
                   "freeze_backbone"},
               "diec");
    fetch(d, "alpha", c.diec.alpha_kl);
    fetch(d, "beta", c.diec.beta_gr);
    fetch(d, "gamma", c.diec.gamma_en);
    fetch(d, "student_alpha", c.diec.student_alpha);
    fetch(d, "init_trials", c.diec.init_trials);
    fetch(d, "target_interval", c.diec.target_interval);
    fetch(d, "knn", c.diec.knn);
    fetch(d, "epochs", c.diec.epochs);
    fetch(d, "batch", c.diec.batch);
    fetch(d, "lr", c.diec.lr);
    fetch(d, "label_change_stop", c.diec.label_change_stop);
    fetch(d, "use_lre", c.diec.use_lre);
    fetch(d, "freeze_backbone", c.diec.freeze_backbone);
  }
  fetch(j, "sample_count", c.sample_count);
  fetch(j, "seed", c.seed);
  fetch(j, "out", c.out);

  // Cluster count and image geometry have one source of truth: the dataset.
  c.search.K = c.dataset.classes;
  c.diec.K = c.dataset.classes;
  if (c.dataset.kind != DatasetKind::IDX_PAIR) c.backbone.image_size = c.dataset.image_size;
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"kind", dataset_kind_name(c.dataset.kind)},
                  {"image_size", c.dataset.image_size},
                  {"classes", c.dataset.classes},
                  {"per_class", c.dataset.per_class},
                  {"seed", c.dataset.seed},
                  {"noise", c.dataset.noise},
                  {"normalization", c.dataset.normalization}};
  if (c.dataset.kind == DatasetKind::IDX_PAIR) {
    j["dataset"]["images"] = c.dataset.idx_images;
    j["dataset"]["labels"] = c.dataset.idx_labels;
  }
  j["backbone"] = {{"in_channels", c.backbone.in_channels},
                   {"image_size", c.backbone.image_size},
                   {"widths", std::vector<int>(c.backbone.widths.begin(),
                                               c.backbone.widths.end())},
                   {"temb_dim", c.backbone.temb_dim}};
  j["schedule"] = {{"timesteps", c.schedule.timesteps},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs}, {"batch", c.pretrain.batch},
                   {"lr", c.pretrain.lr}};
  j["search"] = {{"t_max", c.search.T_s},
                 {"stride", c.search.dt},
                 {"subset", c.search.m},
                 {"trials", c.search.R},
                 {"align_dim", c.search.d},
                 {"window", c.search.w},
                 {"rho", c.search.rho},
                 {"patience", c.search.patience},
                 {"kmeans_restarts", c.search.kmeans_restarts},
                 {"kmeans_iters", c.search.kmeans_iters}};
  j["diec"] = {{"alpha", c.diec.alpha_kl},
               {"beta", c.diec.beta_gr},
               {"gamma", c.diec.gamma_en},
               {"student_alpha", c.diec.student_alpha},
               {"init_trials", c.diec.init_trials},
               {"target_interval", c.diec.target_interval},
               {"knn", c.diec.knn},
               {"epochs", c.diec.epochs},
               {"batch", c.diec.batch},
               {"lr", c.diec.lr},
               {"label_change_stop", c.diec.label_change_stop},
               {"use_lre", c.diec.use_lre},
               {"freeze_backbone", c.diec.freeze_backbone}};
  j["sample_count"] = c.sample_count;
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

// Canonical form: nlohmann's object keys are already sorted; compact dump.
inline std::string config_canonical(const ExperimentConfig& c) {
  return config_to_json(c).dump();
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::string s = config_canonical(c);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ExperimentConfig config_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw param_error(std::string("config: parse failure: ") + e.what());
  }
  return config_from_json(j);
}

inline void config_validate(const ExperimentConfig& c) {
  c.dataset.validate();
  c.pretrain.validate();
  c.search.validate();
  c.diec.validate();
  if (c.schedule.timesteps < 1) throw param_error("config: schedule.timesteps must be >= 1");
  if (c.search.T_s > c.schedule.timesteps)
    throw param_error("config: search.t_max exceeds schedule.timesteps");
  if (c.sample_count < 0) throw param_error("config: sample_count must be >= 0");
  if (c.backbone.in_channels != 1)
    throw param_error("config: only single-channel images are supported");
  for (int wdt : c.backbone.widths)
    if (wdt < 1) throw param_error("config: backbone widths must be positive");
  if (c.backbone.temb_dim < 2 || c.backbone.temb_dim % 2 != 0)
    throw param_error("config: temb_dim must be even and >= 2");
}

}  // namespace diec
