#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diec/checkpoint.hpp"
#include "diec/config.hpp"
#include "diec/dataset.hpp"
#include "diec/diec_train.hpp"
#include "diec/pretrain.hpp"
#include "diec/sampling.hpp"
#include "diec/search.hpp"
#include "diec/svg.hpp"

namespace diec {

namespace expdetail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw data_error("cannot create directory: " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline std::string hash_comment(const std::string& hash) {
  return "# config_hash=" + hash + "\n";
}

// Parse a CSV artifact: optional hash comment, header, %.17g payload.
struct CsvTable {
  std::string hash;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;        // numeric view (nan for text)
  std::vector<std::vector<std::string>> cells;  // raw view
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open: " + path);
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      t.hash = line.substr(14);
      continue;
    }
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
      size_t pos = line.find(',', start);
      parts.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (!have_header) {
      t.header = parts;
      have_header = true;
      continue;
    }
    std::vector<double> nums;
    for (const auto& p : parts) {
      char* end = nullptr;
      double v = std::strtod(p.c_str(), &end);
      nums.push_back(end == p.c_str() ? std::numeric_limits<double>::quiet_NaN() : v);
    }
    t.rows.push_back(std::move(nums));
    t.cells.push_back(std::move(parts));
  }
  return t;
}

}  // namespace expdetail

// ---- CSV emitters (all floats via format_g17 for byte-determinism) ----

inline std::string csv_pretrain_log(const std::string& hash, const std::vector<double>& log) {
  std::string s = expdetail::hash_comment(hash) + "epoch,loss\n";
  for (size_t e = 0; e < log.size(); ++e)
    s += std::to_string(e + 1) + "," + format_g17(log[e]) + "\n";
  return s;
}

inline std::string csv_score_grid(const std::string& hash, const ScoreGrid& grid,
                                  bool smoothed) {
  std::string s = expdetail::hash_comment(hash) + "layer";
  for (int t : grid.timesteps) s += ",t" + std::to_string(t);
  s += "\n";
  const Tensord& m = smoothed ? grid.smoothed : grid.raw;
  for (size_t l = 0; l < grid.layers.size(); ++l) {
    s += tap_name(grid.layers[l]);
    for (size_t j = 0; j < grid.timesteps.size(); ++j) s += "," + format_g17(m.at2(l, j));
    s += "\n";
  }
  return s;
}

inline std::string csv_cot_trace(const std::string& hash, const SearchResult& sr,
                                 const AccTrace* acc) {
  std::string s = expdetail::hash_comment(hash) + "t,ss_raw,ss_smoothed";
  if (acc) s += ",acc_raw,acc_smoothed";
  s += "\n";
  for (size_t i = 0; i < sr.trace_t.size(); ++i) {
    s += std::to_string(sr.trace_t[i]) + "," + format_g17(sr.trace_raw[i]) + "," +
         format_g17(sr.trace_smoothed[i]);
    if (acc) {
      s += "," + (i < acc->raw.size() ? format_g17(acc->raw[i]) : std::string("nan"));
      s += "," + (i < acc->smoothed.size() ? format_g17(acc->smoothed[i]) : std::string("nan"));
    }
    s += "\n";
  }
  return s;
}

inline std::string csv_train_log(const std::string& hash, const std::vector<EpochLog>& log) {
  std::string s = expdetail::hash_comment(hash) +
                  "epoch,l_re,l_kl,l_gr,l_en,acc,nmi,ari,label_change,denoise_probe\n";
  for (const auto& r : log) {
    s += std::to_string(r.epoch);
    for (double v : {r.l_re, r.l_kl, r.l_gr, r.l_en, r.acc, r.nmi, r.ari, r.label_change,
                     r.denoise_probe})
      s += "," + format_g17(v);
    s += "\n";
  }
  return s;
}

// ---- dataset / model plumbing shared by the stages ----

inline Dataset prepare_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == DatasetKind::IDX_PAIR) {
    Dataset ds = load_idx(cfg.dataset.idx_images, cfg.dataset.idx_labels);
    ds.images = resize_center(ds.images, cfg.backbone.image_size);
    uint32_t maxl = 0;
    for (uint32_t l : ds.labels) maxl = std::max(maxl, l);
    if (maxl + 1 != static_cast<uint32_t>(cfg.dataset.classes))
      throw data_error("dataset: label range does not match configured class count");
    return ds;
  }
  return generate_synthetic(cfg.dataset);
}

inline nlohmann::json checkpoint_meta(const ExperimentConfig& cfg, const std::string& stage) {
  nlohmann::json j;
  j["config_hash"] = config_hash(cfg);
  j["stage"] = stage;
  j["arch"] = {{"in_channels", cfg.backbone.in_channels},
               {"image_size", cfg.backbone.image_size},
               {"widths", std::vector<int>(cfg.backbone.widths.begin(),
                                           cfg.backbone.widths.end())},
               {"temb_dim", cfg.backbone.temb_dim}};
  j["schedule"] = {{"timesteps", cfg.schedule.timesteps},
                   {"beta_start", cfg.schedule.beta_start},
                   {"beta_end", cfg.schedule.beta_end}};
  return j;
}

inline void verify_checkpoint_arch(const Checkpoint& ck, const ExperimentConfig& cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ck.meta);
  } catch (const nlohmann::json::exception&) {
    throw data_error("checkpoint: unreadable metadata");
  }
  nlohmann::json want = checkpoint_meta(cfg, "x");
  if (j.value("arch", nlohmann::json()) != want["arch"] ||
      j.value("schedule", nlohmann::json()) != want["schedule"])
    throw data_error("checkpoint: architecture/schedule does not match configuration");
}

// ---- pipeline stages; every artifact embeds the config hash ----

inline void exp_pretrain(const ExperimentConfig& cfg) {
  config_validate(cfg);
  const std::string hash = config_hash(cfg);
  expdetail::ensure_dir(cfg.out);
  write_text_file(expdetail::join(cfg.out, "config.json"), config_canonical(cfg) + "\n");

  Dataset ds = prepare_dataset(cfg);
  if (ds.images.dim(0) == 0) throw data_error("dataset: no samples");
  Rng root(cfg.seed);
  UNet<float> net(cfg.backbone, root);
  NoiseSchedule sched =
      build_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  std::vector<double> log =
      pretrain(net, ds.images, sched, cfg.pretrain.epochs, cfg.pretrain.batch, cfg.pretrain.lr,
               root);
  write_text_file(expdetail::join(cfg.out, "pretrain_log.csv"), csv_pretrain_log(hash, log));

  Checkpoint ck;
  ck.meta = checkpoint_meta(cfg, "pretrain").dump();
  checkpoint_add_model(ck, net);
  checkpoint_save(ck, expdetail::join(cfg.out, "checkpoint.dck"));

  if (cfg.sample_count > 0) {
    Rng srng = root.substream(rng_tag("sample_pre"));
    Tensorf samples = sample(net, sched, cfg.sample_count, srng);
    int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.sample_count))));
    write_text_file(expdetail::join(cfg.out, "samples_pre.pgm"), pgm_grid(samples, cols));
  }
}

inline SearchResult exp_search(const ExperimentConfig& cfg, bool grid_full) {
  config_validate(cfg);
  const std::string hash = config_hash(cfg);
  expdetail::ensure_dir(cfg.out);

  Dataset ds = prepare_dataset(cfg);
  Rng root(cfg.seed);
  UNet<float> net(cfg.backbone, root);
  Checkpoint ck = checkpoint_load(expdetail::join(cfg.out, "checkpoint.dck"));
  verify_checkpoint_arch(ck, cfg);
  checkpoint_load_model(ck, net);
  NoiseSchedule sched =
      build_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  SearchConfig scfg = cfg.search;
  scfg.m = std::min<int>(scfg.m, static_cast<int>(ds.images.dim(0)));
  SearchResult sr = run_optimal_search(net, ds.images, sched, scfg, root);

  write_text_file(expdetail::join(cfg.out, "grid_ss_raw.csv"),
                  csv_score_grid(hash, sr.grid, false));
  write_text_file(expdetail::join(cfg.out, "grid_ss_smoothed.csv"),
                  csv_score_grid(hash, sr.grid, true));

  std::vector<std::string> row_names;
  for (Tap l : sr.grid.layers) row_names.push_back(tap_name(l));
  write_text_file(expdetail::join(cfg.out, "heatmap_ss.svg"),
                  svg_heatmap("Smoothed clusterability by layer and timestep", row_names,
                              sr.grid.timesteps, sr.grid.smoothed));

  AccTrace acc;
  bool have_acc = !ds.labels.empty();
  if (have_acc)
    acc = acc_trace_at_layer(net, ds.images, ds.labels, sched, scfg, root, sr.col, sr.trace_t);
  write_text_file(expdetail::join(cfg.out, "trace_cot.csv"),
                  csv_cot_trace(hash, sr, have_acc ? &acc : nullptr));

  std::vector<SvgSeries> series;
  {
    SvgSeries ss;
    ss.label = "smoothed score";
    ss.color = "#d95f02";
    for (size_t i = 0; i < sr.trace_t.size(); ++i) {
      ss.x.push_back(sr.trace_t[i]);
      ss.y.push_back(sr.trace_smoothed[i]);
    }
    series.push_back(std::move(ss));
    if (have_acc) {
      SvgSeries sa;
      sa.label = "smoothed accuracy";
      sa.color = "#1f78b4";
      for (size_t i = 0; i < sr.trace_t.size(); ++i) {
        sa.x.push_back(sr.trace_t[i]);
        sa.y.push_back(acc.smoothed[i]);
      }
      series.push_back(std::move(sa));
    }
  }
  write_text_file(expdetail::join(cfg.out, "curve_cot.svg"),
                  svg_line_chart("Timestep selection at " + std::string(tap_name(sr.col)),
                                 "timestep", "score / accuracy", series));

  nlohmann::json sj;
  sj["config_hash"] = hash;
  sj["col"] = tap_name(sr.col);
  sj["cot"] = sr.cot;
  sj["early_stopped"] = sr.early_stopped;
  sj["passes_physical"] = sr.passes_physical;
  sj["passes_nominal"] = sr.passes_nominal;
  sj["subset_size"] = sr.subset.size();

  if (grid_full) {
    if (ds.labels.empty()) throw data_error("grid-full search needs labels");
    GridFullResult gf = grid_full_search(net, ds.images, ds.labels, sched, scfg, root);
    write_text_file(expdetail::join(cfg.out, "grid_acc.csv"),
                    csv_score_grid(hash, gf.acc_grid, false));
    write_text_file(expdetail::join(cfg.out, "heatmap_acc.svg"),
                    svg_heatmap("Labeled k-means accuracy by layer and timestep", row_names,
                                gf.acc_grid.timesteps, gf.acc_grid.raw, {222, 235, 247},
                                {8, 81, 156}));
    sj["grid_full"] = {{"best_layer", tap_name(gf.best_layer)},
                       {"best_timestep", gf.best_timestep},
                       {"best_acc", gf.best_acc}};
  }
  write_text_file(expdetail::join(cfg.out, "search.json"), sj.dump(2) + "\n");
  return sr;
}

inline TrainResult exp_train(const ExperimentConfig& cfg) {
  config_validate(cfg);
  const std::string hash = config_hash(cfg);
  expdetail::ensure_dir(cfg.out);

  Dataset ds = prepare_dataset(cfg);
  Rng root(cfg.seed);
  UNet<float> net(cfg.backbone, root);
  Checkpoint ck = checkpoint_load(expdetail::join(cfg.out, "checkpoint.dck"));
  verify_checkpoint_arch(ck, cfg);
  checkpoint_load_model(ck, net);
  NoiseSchedule sched =
      build_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  nlohmann::json sj;
  {
    std::ifstream f(expdetail::join(cfg.out, "search.json"));
    if (!f) throw data_error("missing search.json; run the search stage first");
    try {
      f >> sj;
    } catch (const nlohmann::json::exception& e) {
      throw data_error(std::string("search.json: ") + e.what());
    }
  }
  Tap col = tap_from_name(sj.at("col").get<std::string>());
  int cot = sj.at("cot").get<int>();

  ResidualHead<float> head(tap_channels(cfg.backbone)[static_cast<int>(col)], root);
  TrainResult tr = train_diec(net, head, ds.images, col, cot, sched, cfg.diec, root, ds.labels,
                              cfg.search.kmeans_restarts, cfg.search.kmeans_iters);

  write_text_file(expdetail::join(cfg.out, "train_log.csv"), csv_train_log(hash, tr.log));

  nlohmann::json mj;
  mj["config_hash"] = hash;
  mj["col"] = tap_name(col);
  mj["cot"] = cot;
  mj["epochs_run"] = tr.log.size();
  mj["early_stopped"] = tr.early_stopped;
  mj["probe_initial"] = tr.probe_initial;
  mj["events"] = tr.events;
  if (std::isfinite(tr.phase1_acc))
    mj["phase1"] = {{"acc", tr.phase1_acc}, {"nmi", tr.phase1_nmi}, {"ari", tr.phase1_ari}};
  if (!tr.log.empty() && std::isfinite(tr.log.back().acc))
    mj["final"] = {{"acc", tr.log.back().acc},
                   {"nmi", tr.log.back().nmi},
                   {"ari", tr.log.back().ari}};
  write_text_file(expdetail::join(cfg.out, "metrics.json"), mj.dump(2) + "\n");

  {
    std::vector<SvgSeries> series(2);
    series[0].label = "epoch-mean random-t loss";
    series[0].color = "#d95f02";
    series[1].label = "fixed-draw probe";
    series[1].color = "#1f78b4";
    for (const auto& r : tr.log) {
      series[0].x.push_back(r.epoch);
      series[0].y.push_back(r.l_re);
      series[1].x.push_back(r.epoch);
      series[1].y.push_back(r.denoise_probe);
    }
    write_text_file(expdetail::join(cfg.out, "denoise_curve.svg"),
                    svg_line_chart("Denoising loss during fine-tuning", "epoch", "loss",
                                   series));
  }

  Checkpoint fin;
  nlohmann::json meta = checkpoint_meta(cfg, "final");
  meta["col"] = tap_name(col);
  meta["cot"] = cot;
  fin.meta = meta.dump();
  checkpoint_add_model(fin, net);
  checkpoint_add_head(fin, head);
  fin.records.emplace_back("cluster.centroids", tr.state.centroids);
  checkpoint_save(fin, expdetail::join(cfg.out, "checkpoint_final.dck"));

  if (cfg.sample_count > 0) {
    Rng srng = root.substream(rng_tag("sample_post"));
    Tensorf samples = sample(net, sched, cfg.sample_count, srng);
    int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.sample_count))));
    write_text_file(expdetail::join(cfg.out, "samples_post.pgm"), pgm_grid(samples, cols));
  }
  return tr;
}

inline nlohmann::json exp_eval(const ExperimentConfig& cfg) {
  config_validate(cfg);
  const std::string hash = config_hash(cfg);
  expdetail::ensure_dir(cfg.out);

  Dataset ds = prepare_dataset(cfg);
  Rng root(cfg.seed);
  UNet<float> net(cfg.backbone, root);
  Checkpoint ck = checkpoint_load(expdetail::join(cfg.out, "checkpoint_final.dck"));
  verify_checkpoint_arch(ck, cfg);
  checkpoint_load_model(ck, net);

  nlohmann::json meta = nlohmann::json::parse(ck.meta);
  Tap col = tap_from_name(meta.at("col").get<std::string>());
  int cot = meta.at("cot").get<int>();
  const Tensorf* mu = ck.find("cluster.centroids");
  if (!mu) throw data_error("checkpoint: missing centroids");

  ResidualHead<float> head(tap_channels(cfg.backbone)[static_cast<int>(col)], root);
  checkpoint_load_head(ck, head);
  NoiseSchedule sched =
      build_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  Rng erng = root.substream(rng_tag("eval"));
  Tensorf Z = detail::embed_dataset(net, head, ds.images, col, cot, sched, erng);
  Tensorf Q = soft_assign(Z, *mu, cfg.diec.student_alpha);
  std::vector<uint32_t> hard = hard_labels(Q);

  nlohmann::json ej;
  ej["config_hash"] = hash;
  ej["n"] = ds.images.dim(0);
  ej["col"] = tap_name(col);
  ej["cot"] = cot;
  if (!ds.labels.empty()) {
    ej["acc"] = hungarian_acc(ds.labels, hard);
    ej["nmi"] = nmi(ds.labels, hard);
    ej["ari"] = ari(ds.labels, hard);
  }
  write_text_file(expdetail::join(cfg.out, "eval.json"), ej.dump(2) + "\n");
  return ej;
}

inline void exp_sample(const ExperimentConfig& cfg, int count) {
  config_validate(cfg);
  if (count < 1) throw param_error("sample: count must be >= 1");
  expdetail::ensure_dir(cfg.out);
  Rng root(cfg.seed);
  UNet<float> net(cfg.backbone, root);
  std::string fin = expdetail::join(cfg.out, "checkpoint_final.dck");
  std::string pre = expdetail::join(cfg.out, "checkpoint.dck");
  std::string path = std::filesystem::exists(fin) ? fin : pre;
  Checkpoint ck = checkpoint_load(path);
  verify_checkpoint_arch(ck, cfg);
  checkpoint_load_model(ck, net);
  NoiseSchedule sched =
      build_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  Rng srng = root.substream(rng_tag("sample_cli"));
  Tensorf samples = sample(net, sched, count, srng);
  int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
  write_text_file(expdetail::join(cfg.out, "samples.pgm"), pgm_grid(samples, cols));
}

// Re-render the SVG artifacts from the CSV/JSON logs in a run directory,
// refusing to mix artifacts whose embedded config hashes disagree.
inline void exp_report(const std::string& dir) {
  using expdetail::join;
  using expdetail::read_csv;
  std::string hash;
  auto take_hash = [&](const std::string& h, const std::string& from) {
    if (h.empty()) return;
    if (hash.empty()) hash = h;
    else if (hash != h)
      throw data_error("report: config hash mismatch in " + from);
  };

  std::vector<std::string> json_files = {"search.json", "metrics.json", "eval.json"};
  for (const auto& name : json_files) {
    std::ifstream f(join(dir, name));
    if (!f) continue;
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw data_error(name + ": " + e.what());
    }
    take_hash(j.value("config_hash", ""), name);
  }

  if (std::filesystem::exists(join(dir, "grid_ss_smoothed.csv"))) {
    expdetail::CsvTable t = read_csv(join(dir, "grid_ss_smoothed.csv"));
    take_hash(t.hash, "grid_ss_smoothed.csv");
    std::vector<std::string> row_names;
    std::vector<int> cols;
    for (size_t c = 1; c < t.header.size(); ++c)
      cols.push_back(std::atoi(t.header[c].c_str() + 1));
    Tensord vals({static_cast<uint32_t>(t.rows.size()), static_cast<uint32_t>(cols.size())});
    for (size_t r = 0; r < t.rows.size(); ++r) {
      row_names.push_back(t.cells[r][0]);
      for (size_t c = 0; c < cols.size(); ++c) vals.at2(r, c) = t.rows[r][c + 1];
    }
    write_text_file(join(dir, "heatmap_ss.svg"),
                    svg_heatmap("Smoothed clusterability by layer and timestep", row_names,
                                cols, vals));
  }

  if (std::filesystem::exists(join(dir, "trace_cot.csv"))) {
    expdetail::CsvTable t = read_csv(join(dir, "trace_cot.csv"));
    take_hash(t.hash, "trace_cot.csv");
    std::vector<SvgSeries> series;
    SvgSeries ss;
    ss.label = "smoothed score";
    ss.color = "#d95f02";
    SvgSeries sa;
    sa.label = "smoothed accuracy";
    sa.color = "#1f78b4";
    bool have_acc = t.header.size() >= 5;
    for (const auto& r : t.rows) {
      ss.x.push_back(r[0]);
      ss.y.push_back(r[2]);
      if (have_acc) {
        sa.x.push_back(r[0]);
        sa.y.push_back(r[4]);
      }
    }
    series.push_back(std::move(ss));
    if (have_acc) series.push_back(std::move(sa));
    write_text_file(join(dir, "curve_cot.svg"),
                    svg_line_chart("Timestep selection", "timestep", "score / accuracy",
                                   series));
  }

  if (std::filesystem::exists(join(dir, "train_log.csv"))) {
    expdetail::CsvTable t = read_csv(join(dir, "train_log.csv"));
    take_hash(t.hash, "train_log.csv");
    std::vector<SvgSeries> series(2);
    series[0].label = "epoch-mean random-t loss";
    series[0].color = "#d95f02";
    series[1].label = "fixed-draw probe";
    series[1].color = "#1f78b4";
    for (const auto& r : t.rows) {
      series[0].x.push_back(r[0]);
      series[0].y.push_back(r[1]);
      series[1].x.push_back(r[0]);
      series[1].y.push_back(r[9]);
    }
    write_text_file(join(dir, "denoise_curve.svg"),
                    svg_line_chart("Denoising loss during fine-tuning", "epoch", "loss",
                                   series));
  }

  if (hash.empty()) throw data_error("report: no artifacts with a config hash in " + dir);
}

// Full pipeline: pretrain -> search -> phase-1 init + fine-tuning -> eval.
// `stage_out`, when given, names the stage an escaping exception came from.
inline std::string run_experiment(const ExperimentConfig& cfg, bool grid_full = false,
                                  std::string* stage_out = nullptr) {
  auto at = [&](const char* s) {
    if (stage_out) *stage_out = s;
  };
  at("config");
  config_validate(cfg);
  at("pretrain");
  exp_pretrain(cfg);
  at("search");
  exp_search(cfg, grid_full);
  at("train");
  exp_train(cfg);
  at("eval");
  exp_eval(cfg);
  at("done");
  return cfg.out;
}

}  // namespace diec
