#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "diec/clusterability.hpp"
#include "diec/features.hpp"
#include "diec/linalg.hpp"
#include "diec/metrics.hpp"
#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

struct SearchConfig {
  int T_s = 200;      // timestep range upper end
  int dt = 5;         // stride
  int m = 512;        // subset size
  int R = 4;          // noise trials
  int d = 32;         // alignment dim (clamped per layer to min(d, D_l, m-1))
  int w = 5;          // smoothing window, odd
  double rho = 0.2;   // top fraction for layer aggregation
  int patience = 5;   // stage-2 early stop
  int K = 4;          // cluster count
  int kmeans_restarts = 10;
  int kmeans_iters = 300;
  Pooling pooling = Pooling::GAP;

  void validate() const {
    if (dt < 1) throw param_error("search: stride must be >= 1");
    if (T_s < 1) throw param_error("search: T_s must be >= 1");
    if (m < K + 1) throw param_error("search: subset size must exceed K");
    if (R < 1) throw param_error("search: R must be >= 1");
    if (w < 1 || w % 2 == 0) throw param_error("search: window must be odd");
    if (!(rho > 0.0) || rho > 1.0) throw param_error("search: rho out of (0, 1]");
    if (patience < 1) throw param_error("search: patience must be >= 1");
    if (d < 1) throw param_error("search: d must be >= 1");
  }

  std::vector<int> timesteps() const {
    std::vector<int> ts;
    for (int t = 1; t <= T_s; t += dt) ts.push_back(t);
    return ts;
  }
};

struct SearchResult {
  Tap col = Tap::D1;
  int cot = 0;
  ScoreGrid grid;                   // stage 1, aligned features
  std::vector<int> trace_t;         // stage 2 evaluated timesteps
  std::vector<double> trace_raw;
  std::vector<double> trace_smoothed;  // online centered moving average
  bool early_stopped = false;
  uint64_t passes_physical = 0;  // instrumented forward passes
  uint64_t passes_nominal = 0;   // per-layer accounting (stage 1 x 9 taps)
  std::vector<uint32_t> subset;
};

// ---- pure selection pieces (unit-testable without a model) ----

// Argmax over layers of the top-rho aggregate, shallowest layer on ties.
inline Tap select_col_from_grid(const ScoreGrid& grid, double rho) {
  if (grid.layers.empty()) throw param_error("select_col_from_grid: empty grid");
  double best = -std::numeric_limits<double>::infinity();
  Tap col = grid.layers[0];
  for (size_t l = 0; l < grid.layers.size(); ++l) {
    std::vector<double> row(grid.timesteps.size());
    for (size_t j = 0; j < row.size(); ++j) row[j] = grid.smoothed.at2(l, j);
    double s = layer_score_top_rho(row, rho);
    if (s > best) {
      best = s;
      col = grid.layers[l];
    }
  }
  return col;
}

// Online centered moving average: the smoothed value at the newest position
// equals the offline centered average over the evaluated prefix, so the
// window behind the cursor is full-width and the front is clipped at the
// cursor itself.
class OnlineMovAvg {
 public:
  explicit OnlineMovAvg(int w) : w_(w) {
    if (w < 1 || w % 2 == 0) throw param_error("OnlineMovAvg: window must be odd");
  }
  double push(double raw) {
    raw_.push_back(raw);
    int j = static_cast<int>(raw_.size()) - 1;
    int lo = std::max(0, j - w_ / 2);
    double s = 0.0;
    for (int i = lo; i <= j; ++i) s += raw_[i];
    return s / static_cast<double>(j - lo + 1);
  }

 private:
  int w_;
  std::vector<double> raw_;
};

struct CotSelection {
  int cot = 0;
  std::vector<int> evaluated;
  std::vector<double> raw, smoothed;
  bool early_stopped = false;
};

// Stage-2 selection driver over an injectable per-timestep score provider.
// Ascending timesteps, running max with strict improvement, patience P.
inline CotSelection select_cot_online(const std::function<double(int)>& score,
                                      const std::vector<int>& ts, int w, int patience) {
  if (ts.empty()) throw param_error("select_cot_online: no timesteps");
  CotSelection out;
  OnlineMovAvg avg(w);
  double smax = -std::numeric_limits<double>::infinity();
  int misses = 0;
  for (int t : ts) {
    double raw = score(t);
    double sm = avg.push(raw);
    out.evaluated.push_back(t);
    out.raw.push_back(raw);
    out.smoothed.push_back(sm);
    if (sm > smax) {
      smax = sm;
      out.cot = t;
      misses = 0;
    } else {
      ++misses;
    }
    if (misses >= patience) {
      out.early_stopped = true;
      break;
    }
  }
  return out;
}

// ---- full two-stage search ----

namespace detail {

inline std::vector<uint32_t> draw_subset(size_t n, int m, const Rng& base) {
  if (static_cast<size_t>(m) > n) throw param_error("search: subset size exceeds dataset");
  Rng rr = base.substream(rng_tag("subset"));
  std::vector<uint32_t> perm = rr.permutation(static_cast<uint32_t>(n));
  perm.resize(m);
  return perm;
}

}  // namespace detail

template <typename T = float>
SearchResult run_optimal_search(UNet<T>& net, const Tensorf& images, const NoiseSchedule& sched,
                                const SearchConfig& cfg, const Rng& base) {
  cfg.validate();
  if (cfg.T_s > sched.T) throw param_error("search: T_s exceeds schedule length");
  SearchResult res;
  res.subset = detail::draw_subset(images.dim(0), cfg.m, base);
  Tensorf sub = detail::gather_rows4(images, res.subset);
  std::vector<int> ts = cfg.timesteps();
  const uint64_t passes_before = forward_pass_counter();

  // Stage 1: aligned scores over the full (layer x timestep) grid.
  ScoreGrid& grid = res.grid;
  grid.layers.resize(kNumTaps);
  for (int l = 0; l < kNumTaps; ++l) grid.layers[l] = static_cast<Tap>(l);
  grid.timesteps = ts;
  grid.aligned = true;
  grid.window = cfg.w;
  grid.kmeans_restarts = cfg.kmeans_restarts;
  grid.raw = Tensord({static_cast<uint32_t>(kNumTaps), static_cast<uint32_t>(ts.size())});
  grid.smoothed = Tensord(grid.raw.shape());

  for (size_t j = 0; j < ts.size(); ++j) {
    auto taps = extract_all_taps(net, sub, res.subset, ts[j], cfg.R, sched, base, cfg.pooling);
    for (int l = 0; l < kNumTaps; ++l) {
      const Tensorf& E = taps[l];
      int dl = std::min<int>(cfg.d, std::min<size_t>(E.dim(1), E.dim(0) - 1));
      Tensorf aligned = align_embeddings(E, dl);
      Rng cell = base.substream({rng_tag("stage1_cell"), static_cast<uint64_t>(l),
                                 static_cast<uint64_t>(ts[j])});
      grid.raw.at2(l, j) = scott_score(aligned, cfg.K, cell, cfg.kmeans_restarts,
                                       cfg.kmeans_iters);
    }
  }
  for (int l = 0; l < kNumTaps; ++l) {
    std::vector<double> row(ts.size());
    for (size_t j = 0; j < ts.size(); ++j) row[j] = grid.raw.at2(l, j);
    std::vector<double> sm = moving_average_centered(row, cfg.w);
    for (size_t j = 0; j < ts.size(); ++j) grid.smoothed.at2(l, j) = sm[j];
  }
  res.col = select_col_from_grid(grid, cfg.rho);

  // Stage 2: native features at the selected layer, online smoothing,
  // patience-based early stop. Features are recomputed (the noise draws are
  // keyed by (sample, trial, timestep), so the values match stage 1).
  const int lstar = static_cast<int>(res.col);
  auto native_score = [&](int t) {
    FeatureBatch fb = extract_features(net, sub, res.subset, res.col, t, cfg.R, sched, base,
                                       cfg.pooling);
    Rng cell = base.substream({rng_tag("stage2_cell"), static_cast<uint64_t>(lstar),
                               static_cast<uint64_t>(t)});
    return scott_score(fb.embeddings, cfg.K, cell, cfg.kmeans_restarts, cfg.kmeans_iters);
  };
  CotSelection sel = select_cot_online(native_score, ts, cfg.w, cfg.patience);
  res.cot = sel.cot;
  res.trace_t = sel.evaluated;
  res.trace_raw = sel.raw;
  res.trace_smoothed = sel.smoothed;
  res.early_stopped = sel.early_stopped;

  res.passes_physical = forward_pass_counter() - passes_before;
  res.passes_nominal =
      static_cast<uint64_t>(cfg.m) * cfg.R *
      (ts.size() * static_cast<uint64_t>(kNumTaps) + sel.evaluated.size());
  return res;
}

// Labeled companion to the stage-2 trace: k-means accuracy at one layer over
// given timesteps, same subset and noise draws, same online smoothing.
struct AccTrace {
  std::vector<int> timesteps;
  std::vector<double> raw, smoothed;
};

template <typename T = float>
AccTrace acc_trace_at_layer(UNet<T>& net, const Tensorf& images,
                            const std::vector<uint32_t>& labels, const NoiseSchedule& sched,
                            const SearchConfig& cfg, const Rng& base, Tap layer,
                            const std::vector<int>& ts) {
  cfg.validate();
  if (labels.size() != images.dim(0)) throw shape_error("acc_trace_at_layer: label count");
  std::vector<uint32_t> subset = detail::draw_subset(images.dim(0), cfg.m, base);
  Tensorf sub = detail::gather_rows4(images, subset);
  std::vector<uint32_t> sub_labels(subset.size());
  for (size_t i = 0; i < subset.size(); ++i) sub_labels[i] = labels[subset[i]];

  AccTrace tr;
  tr.timesteps = ts;
  OnlineMovAvg avg(cfg.w);
  for (int t : ts) {
    FeatureBatch fb =
        extract_features(net, sub, subset, layer, t, cfg.R, sched, base, cfg.pooling);
    Rng cell = base.substream({rng_tag("acc_cell"), static_cast<uint64_t>(layer),
                               static_cast<uint64_t>(t)});
    KMeansResult km = kmeans(fb.embeddings, cfg.K, cfg.kmeans_restarts, cfg.kmeans_iters, cell);
    double acc = hungarian_acc(sub_labels, km.assignments);
    tr.raw.push_back(acc);
    tr.smoothed.push_back(avg.push(acc));
  }
  return tr;
}

// Exhaustive labeled oracle: k-means accuracy per (layer, timestep) cell on
// native features, same subset and noise draws as the unsupervised search.
struct GridFullResult {
  ScoreGrid acc_grid;  // raw = ACC, smoothed = moving average per row
  Tap best_layer = Tap::D1;
  int best_timestep = 0;
  double best_acc = 0.0;
};

template <typename T = float>
GridFullResult grid_full_search(UNet<T>& net, const Tensorf& images,
                                const std::vector<uint32_t>& labels, const NoiseSchedule& sched,
                                const SearchConfig& cfg, const Rng& base) {
  cfg.validate();
  if (labels.size() != images.dim(0)) throw shape_error("grid_full_search: label count");
  GridFullResult res;
  std::vector<uint32_t> subset = detail::draw_subset(images.dim(0), cfg.m, base);
  Tensorf sub = detail::gather_rows4(images, subset);
  std::vector<uint32_t> sub_labels(subset.size());
  for (size_t i = 0; i < subset.size(); ++i) sub_labels[i] = labels[subset[i]];
  std::vector<int> ts = cfg.timesteps();

  ScoreGrid& grid = res.acc_grid;
  grid.layers.resize(kNumTaps);
  for (int l = 0; l < kNumTaps; ++l) grid.layers[l] = static_cast<Tap>(l);
  grid.timesteps = ts;
  grid.aligned = false;
  grid.window = cfg.w;
  grid.kmeans_restarts = cfg.kmeans_restarts;
  grid.raw = Tensord({static_cast<uint32_t>(kNumTaps), static_cast<uint32_t>(ts.size())});
  grid.smoothed = Tensord(grid.raw.shape());

  for (size_t j = 0; j < ts.size(); ++j) {
    auto taps = extract_all_taps(net, sub, subset, ts[j], cfg.R, sched, base, cfg.pooling);
    for (int l = 0; l < kNumTaps; ++l) {
      Rng cell = base.substream({rng_tag("gridfull_cell"), static_cast<uint64_t>(l),
                                 static_cast<uint64_t>(ts[j])});
      KMeansResult km = kmeans(taps[l], cfg.K, cfg.kmeans_restarts, cfg.kmeans_iters, cell);
      grid.raw.at2(l, j) = hungarian_acc(sub_labels, km.assignments);
    }
  }
  res.best_acc = -1.0;
  for (int l = 0; l < kNumTaps; ++l) {
    std::vector<double> row(ts.size());
    for (size_t j = 0; j < ts.size(); ++j) row[j] = grid.raw.at2(l, j);
    std::vector<double> sm = moving_average_centered(row, cfg.w);
    for (size_t j = 0; j < ts.size(); ++j) {
      grid.smoothed.at2(l, j) = sm[j];
      if (grid.raw.at2(l, j) > res.best_acc) {
        res.best_acc = grid.raw.at2(l, j);
        res.best_layer = static_cast<Tap>(l);
        res.best_timestep = ts[j];
      }
    }
  }
  return res;
}

}  // namespace diec
