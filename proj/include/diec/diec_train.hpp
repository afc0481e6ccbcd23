#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "diec/affinity.hpp"
#include "diec/autodiff.hpp"
#include "diec/clusterability.hpp"
#include "diec/dec.hpp"
#include "diec/features.hpp"
#include "diec/metrics.hpp"
#include "diec/pretrain.hpp"
#include "diec/residual.hpp"
#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

struct DiECConfig {
  int K = 4;
  double alpha_kl = 0.1;    // weight of the assignment-sharpening term
  double beta_gr = 0.01;    // weight of the graph smoothness term
  double gamma_en = 0.001;  // weight of the affinity entropy term
  double student_alpha = 1.0;
  int init_trials = 8;      // noise trials averaged for the initial embedding
  int target_interval = 5;  // epochs between target refreshes
  int knn = 10;
  int epochs = 100;
  int batch = 64;
  double lr = 1e-3;
  double label_change_stop = 1e-3;  // stop when fewer labels move between refreshes
  bool use_lre = true;              // keep the random-timestep denoising branch
  bool freeze_backbone = false;
  int degenerate_patience = 3;  // consecutive empty refreshes before reseeding

  void validate() const {
    if (K < 2) throw param_error("diec: K must be >= 2");
    if (student_alpha <= 0.0) throw param_error("diec: student_alpha must be positive");
    if (init_trials < 1) throw param_error("diec: init_trials must be >= 1");
    if (target_interval < 1) throw param_error("diec: target_interval must be >= 1");
    if (knn < 1) throw param_error("diec: knn must be >= 1");
    if (epochs < 0) throw param_error("diec: epochs must be >= 0");
    if (batch < 1) throw param_error("diec: batch must be >= 1");
    if (!(lr > 0.0)) throw param_error("diec: lr must be positive");
    if (alpha_kl < 0.0 || beta_gr < 0.0 || gamma_en < 0.0)
      throw param_error("diec: loss weights must be non-negative");
    if (degenerate_patience < 1) throw param_error("diec: degenerate_patience must be >= 1");
  }
};

struct EpochLog {
  int epoch = 0;
  double l_re = 0.0;   // random-timestep denoising loss (logged even when not optimized)
  double l_kl = 0.0;   // per-sample assignment KL
  double l_gr = 0.0;   // per-sample graph smoothness
  double l_en = 0.0;   // per-sample affinity entropy (constant w.r.t. parameters)
  double acc = std::numeric_limits<double>::quiet_NaN();
  double nmi = std::numeric_limits<double>::quiet_NaN();
  double ari = std::numeric_limits<double>::quiet_NaN();
  double label_change = 0.0;  // fraction vs previous epoch
  double denoise_probe = 0.0; // fixed-draw denoising monitor
};

struct TrainResult {
  ClusterState state;
  AffinityGraph graph;
  std::vector<EpochLog> log;
  std::vector<uint32_t> phase1_labels;
  double phase1_acc = std::numeric_limits<double>::quiet_NaN();
  double phase1_nmi = std::numeric_limits<double>::quiet_NaN();
  double phase1_ari = std::numeric_limits<double>::quiet_NaN();
  double probe_initial = 0.0;
  double l_re_initial = 0.0;  // epoch-style random-t loss before any update
  bool early_stopped = false;
  std::vector<std::string> events;
};

namespace detail {

// Full-dataset embedding at (layer, timestep) with a single noise draw per
// sample, mapped through the residual head.
template <typename T>
Tensorf embed_dataset(UNet<T>& net, ResidualHead<T>& head, const Tensorf& images, Tap layer,
                      int t, const NoiseSchedule& sched, const Rng& base) {
  std::vector<uint32_t> idx(images.dim(0));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<uint32_t>(i);
  FeatureBatch fb = extract_features(net, images, idx, layer, t, 1, sched, base, Pooling::GAP);
  Tensor<T> e = fb.embeddings.template cast<T>();
  return head.apply(e).template cast<float>();
}

inline Tensorf flatten_rows(const Tensorf& images) {
  const uint32_t N = images.dim(0);
  const uint32_t D = static_cast<uint32_t>(images.numel() / N);
  Tensorf flat({N, D}, std::vector<float>(images.data(), images.data() + images.numel()));
  return flat;
}

inline double label_change_fraction(const std::vector<uint32_t>& a,
                                    const std::vector<uint32_t>& b) {
  if (a.size() != b.size()) throw shape_error("label_change_fraction: size mismatch");
  if (a.empty()) return 0.0;
  size_t moved = 0;
  for (size_t i = 0; i < a.size(); ++i) moved += a[i] != b[i];
  return static_cast<double>(moved) / static_cast<double>(a.size());
}

// The per-epoch random-timestep loss estimator at the current parameters,
// without updates. Draws follow the exact epoch structure (including the
// clustering-branch draw they share a stream with) under the given epoch key.
template <typename T>
double epoch_mean_lre(UNet<T>& net, const Tensorf& images, const NoiseSchedule& sched,
                      int batch_size, const Rng& base, uint64_t epoch_key) {
  const size_t N = images.dim(0);
  Rng erng = base.substream({rng_tag("diec_epoch"), epoch_key});
  std::vector<uint32_t> perm = erng.permutation(static_cast<uint32_t>(N));
  double sum = 0.0;
  size_t batches = 0;
  for (size_t off = 0; off < N; off += batch_size) {
    const size_t B = std::min<size_t>(batch_size, N - off);
    std::vector<uint32_t> bidx(perm.begin() + off, perm.begin() + off + B);
    Tensorf x0 = gather_rows4(images, bidx);
    Tensorf epsA(x0.shape());
    erng.fill_normal(epsA);
    std::vector<int> t_r(B);
    for (int& t : t_r) t = static_cast<int>(erng.uniform_int(1, sched.T));
    Tensorf epsB(x0.shape());
    erng.fill_normal(epsB);
    Tensorf xtB = forward_noising(x0, t_r, epsB, sched);
    Tape<T> tp(false);
    UNetVars pv = bind_unet(tp, net, false);
    UNetForward<T> fB = unet_forward(tp, net, pv, tp.constant(xtB.template cast<T>()), t_r);
    sum += static_cast<double>(tp.val(tp.mse(fB.eps, epsB.template cast<T>()))[0]);
    ++batches;
  }
  return sum / static_cast<double>(batches);
}

}  // namespace detail

// Phase 1: trial-averaged embeddings through the residual head, k-means for
// the initial centroids, first soft/target assignments, input-space affinity.
template <typename T>
TrainResult init_clustering(UNet<T>& net, ResidualHead<T>& head, const Tensorf& images,
                            Tap layer, int t_star, const NoiseSchedule& sched,
                            const DiECConfig& cfg, const Rng& base,
                            const std::vector<uint32_t>& labels, int kmeans_restarts = 10,
                            int kmeans_iters = 300) {
  cfg.validate();
  const size_t N = images.dim(0);
  if (N < static_cast<size_t>(cfg.K) + 1) throw param_error("diec: dataset smaller than K+1");
  if (!labels.empty() && labels.size() != N) throw shape_error("diec: label count mismatch");

  std::vector<uint32_t> idx(N);
  for (size_t i = 0; i < N; ++i) idx[i] = static_cast<uint32_t>(i);

  // zbar_i = mean over trials of head(e_i^{(m)}); the head is applied per
  // trial because it is nonlinear.
  Tensord acc({static_cast<uint32_t>(N), 0});
  Tensorf zbar;
  for (int m = 0; m < cfg.init_trials; ++m) {
    Rng trial = base.substream({rng_tag("phase1"), static_cast<uint64_t>(m)});
    FeatureBatch fb =
        extract_features(net, images, idx, layer, t_star, 1, sched, trial, Pooling::GAP);
    Tensor<T> z = head.apply(fb.embeddings.template cast<T>());
    if (m == 0) acc = Tensord({static_cast<uint32_t>(N), z.dim(1)});
    for (size_t i = 0; i < z.numel(); ++i) acc[i] += z[i];
  }
  zbar = Tensorf(acc.shape());
  for (size_t i = 0; i < acc.numel(); ++i)
    zbar[i] = static_cast<float>(acc[i] / cfg.init_trials);

  Rng km_rng = base.substream(rng_tag("phase1_kmeans"));
  KMeansResult km = kmeans(zbar, cfg.K, kmeans_restarts, kmeans_iters, km_rng);

  TrainResult res;
  res.state.centroids = km.centroids;
  res.state.student_alpha = cfg.student_alpha;
  res.state.Q = soft_assign(zbar, km.centroids, cfg.student_alpha);
  res.state.P = target_distribution(res.state.Q);
  res.state.hard = hard_labels(res.state.Q);
  res.phase1_labels = res.state.hard;
  res.graph = build_affinity(detail::flatten_rows(images), cfg.knn);
  if (!labels.empty()) {
    res.phase1_acc = hungarian_acc(labels, res.state.hard);
    res.phase1_nmi = nmi(labels, res.state.hard);
    res.phase1_ari = ari(labels, res.state.hard);
  }
  return res;
}

// Phase 2: joint fine-tuning of backbone, residual head, and centroids.
// Per batch: a fixed-timestep pass to the tap feeds the clustering losses,
// and (optionally) a random-timestep full pass keeps the denoising skill.
// Targets refresh every target_interval epochs; the affinity graph weights
// are re-solved in closed form at each epoch end.
template <typename T>
TrainResult train_diec(UNet<T>& net, ResidualHead<T>& head, const Tensorf& images, Tap layer,
                       int t_star, const NoiseSchedule& sched, const DiECConfig& cfg,
                       const Rng& base, const std::vector<uint32_t>& labels,
                       int kmeans_restarts = 10, int kmeans_iters = 300) {
  cfg.validate();
  if (t_star < 1 || t_star > sched.T) throw param_error("diec: t_star out of schedule range");
  const size_t N = images.dim(0);
  const int lstar = static_cast<int>(layer);

  TrainResult res = init_clustering(net, head, images, layer, t_star, sched, cfg, base, labels,
                                    kmeans_restarts, kmeans_iters);
  res.probe_initial = probe_denoise_loss(net, images, sched, base);
  res.l_re_initial = detail::epoch_mean_lre(net, images, sched, cfg.batch, base, 0);

  Tensor<T> mu = res.state.centroids.template cast<T>();
  Tensorf Q_cache = res.state.Q;
  Tensorf Z_cache;  // refreshed alongside Q at each epoch end
  Tensorf P = res.state.P;
  std::vector<uint32_t> hard_prev = res.state.hard;          // previous epoch end
  std::vector<uint32_t> hard_last_refresh = res.state.hard;  // previous target refresh
  std::vector<int> empty_streak(cfg.K, 0);

  Adam<T> opt(cfg.lr);
  const bool train_backbone = !cfg.freeze_backbone;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Target refresh at epoch start, from the freshest full-dataset pass.
    if (epoch % cfg.target_interval == 0) {
      std::vector<uint32_t> hard_now = hard_labels(Q_cache);
      std::vector<size_t> counts(cfg.K, 0);
      for (uint32_t h : hard_now) ++counts[h];
      for (int k = 0; k < cfg.K; ++k) {
        empty_streak[k] = counts[k] == 0 ? empty_streak[k] + 1 : 0;
        if (empty_streak[k] >= cfg.degenerate_patience) {
          // Reseed a persistently empty cluster at the sample worst covered
          // by the remaining centroids.
          if (Z_cache.numel() == 0)
            throw degenerate_cluster_error("diec: empty cluster before first refresh", k);
          size_t pick = 0;
          double far = -1.0;
          for (size_t i = 0; i < N; ++i) {
            double nearest = std::numeric_limits<double>::infinity();
            for (int c2 = 0; c2 < cfg.K; ++c2) {
              if (c2 == k) continue;
              double d2 = 0.0;
              for (size_t d = 0; d < Z_cache.dim(1); ++d) {
                double diff = Z_cache.at2(i, d) - static_cast<double>(mu.at2(c2, d));
                d2 += diff * diff;
              }
              nearest = std::min(nearest, d2);
            }
            if (nearest > far) {
              far = nearest;
              pick = i;
            }
          }
          for (size_t d = 0; d < Z_cache.dim(1); ++d)
            mu.at2(k, d) = static_cast<T>(Z_cache.at2(pick, d));
          Q_cache = soft_assign(Z_cache, mu.template cast<float>(), cfg.student_alpha);
          hard_now = hard_labels(Q_cache);
          empty_streak[k] = 0;
          res.events.push_back("epoch " + std::to_string(epoch) + ": reseeded cluster " +
                               std::to_string(k) + " at sample " + std::to_string(pick));
        }
      }
      P = target_distribution(Q_cache);
      double moved = detail::label_change_fraction(hard_now, hard_last_refresh);
      hard_last_refresh = hard_now;
      if (moved < cfg.label_change_stop) {
        res.early_stopped = true;
        res.events.push_back("epoch " + std::to_string(epoch) + ": early stop, " +
                             format_g17(moved) + " of labels moved since last refresh");
        break;
      }
    }

    Rng erng = base.substream({rng_tag("diec_epoch"), static_cast<uint64_t>(epoch)});
    std::vector<uint32_t> perm = erng.permutation(static_cast<uint32_t>(N));

    double sum_lre = 0.0, sum_kl = 0.0, sum_gr = 0.0;
    size_t lre_batches = 0, nbatch = 0;

    for (size_t off = 0; off < N; off += cfg.batch) {
      const size_t B = std::min<size_t>(cfg.batch, N - off);
      std::vector<uint32_t> bidx(perm.begin() + off, perm.begin() + off + B);
      Tensorf x0 = detail::gather_rows4(images, bidx);

      // Draw order is fixed so ablation flags never shift the noise stream:
      // clustering-branch noise, then per-sample random timesteps, then their
      // noise. epoch_mean_lre mirrors this layout exactly.
      Tensorf epsA(x0.shape());
      erng.fill_normal(epsA);
      std::vector<int> t_r(B);
      for (int& t : t_r) t = static_cast<int>(erng.uniform_int(1, sched.T));
      Tensorf epsB(x0.shape());
      erng.fill_normal(epsB);

      Tensorf xtA = forward_noising(x0, t_star, epsA, sched);
      Tensorf xtB = forward_noising(x0, t_r, epsB, sched);

      Tape<T> tp;
      UNetVars pv = bind_unet(tp, net, train_backbone);
      HeadVars hv = bind_head(tp, head, true);
      Var vmu = tp.leaf(mu, true);

      UNetForward<T> fA =
          unet_forward(tp, net, pv, tp.constant(xtA.template cast<T>()), t_star, lstar);
      Var e = tp.avgpool_spatial(fA.taps[lstar]);
      Var z = residual_embed(tp, e, hv);
      Var q = tp.student_q(tp.sqdist(z, vmu), cfg.student_alpha);

      bool have_term = false;
      Var total;
      auto add_term = [&](Var v) {
        total = have_term ? tp.add(total, v) : v;
        have_term = true;
      };

      double batch_kl = 0.0, batch_gr = 0.0;
      if (cfg.alpha_kl > 0.0) {
        Tensor<T> Pb({static_cast<uint32_t>(B), static_cast<uint32_t>(cfg.K)});
        for (size_t n = 0; n < B; ++n)
          for (int k = 0; k < cfg.K; ++k) Pb.at2(n, k) = static_cast<T>(P.at2(bidx[n], k));
        Var kl = tp.kl_const_p(Pb, q);
        batch_kl = tp.val(kl)[0];
        add_term(tp.scale(kl, cfg.alpha_kl / static_cast<double>(B)));
      }
      if (cfg.beta_gr > 0.0) {
        std::vector<uint32_t> rows;
        std::vector<T> sw;
        size_t edges = 0;
        for (size_t n = 0; n < B; ++n) edges += res.graph.nbr[bidx[n]].size();
        Tensor<T> qn({static_cast<uint32_t>(edges), static_cast<uint32_t>(cfg.K)});
        size_t e2 = 0;
        for (size_t n = 0; n < B; ++n)
          for (size_t j = 0; j < res.graph.nbr[bidx[n]].size(); ++j) {
            rows.push_back(static_cast<uint32_t>(n));
            sw.push_back(static_cast<T>(res.graph.w[bidx[n]][j]));
            uint32_t g = res.graph.nbr[bidx[n]][j];
            for (int k = 0; k < cfg.K; ++k)
              qn.at2(e2, k) = static_cast<T>(Q_cache.at2(g, k));
            ++e2;
          }
        Var gq = tp.graph_quad(q, rows, sw, qn);
        batch_gr = tp.val(gq)[0];
        add_term(tp.scale(gq, cfg.beta_gr / static_cast<double>(B)));
      }

      double batch_lre;
      if (cfg.use_lre) {
        UNetForward<T> fB = unet_forward(tp, net, pv, tp.constant(xtB.template cast<T>()), t_r);
        Var lre = tp.mse(fB.eps, epsB.template cast<T>());
        batch_lre = tp.val(lre)[0];
        if (train_backbone) add_term(lre);
        else add_term(tp.scale(lre, 1.0));  // logged; contributes no gradient
      } else {
        // Same pass without gradients, so the column stays comparable.
        Tape<T> tpe(false);
        UNetVars pve = bind_unet(tpe, net, false);
        UNetForward<T> fB =
            unet_forward(tpe, net, pve, tpe.constant(xtB.template cast<T>()), t_r);
        batch_lre = tpe.val(tpe.mse(fB.eps, epsB.template cast<T>()))[0];
      }

      if (have_term && tp.requires_grad(total)) {
        tp.backward(total);
        std::vector<Tensor<T>*> params;
        std::vector<const Tensor<T>*> grads;
        if (train_backbone) {
          size_t pos = 0;
          net.for_each_param([&](const std::string&, Tensor<T>& p) {
            params.push_back(&p);
            grads.push_back(&tp.grad(pv.v[pos]));
            ++pos;
          });
        }
        params.push_back(&head.w1);
        grads.push_back(&tp.grad(hv.w1));
        params.push_back(&head.b1);
        grads.push_back(&tp.grad(hv.b1));
        params.push_back(&head.w2);
        grads.push_back(&tp.grad(hv.w2));
        params.push_back(&head.b2);
        grads.push_back(&tp.grad(hv.b2));
        params.push_back(&mu);
        grads.push_back(&tp.grad(vmu));
        opt.step(params, grads);
      }

      sum_lre += batch_lre;
      ++lre_batches;
      sum_kl += batch_kl;
      sum_gr += batch_gr;
      ++nbatch;
    }
    (void)nbatch;

    // Epoch-end full-dataset cache: single draw per sample, current weights.
    Rng embed_rng = base.substream({rng_tag("epoch_embed"), static_cast<uint64_t>(epoch)});
    Z_cache = detail::embed_dataset(net, head, images, layer, t_star, sched, embed_rng);
    Q_cache = soft_assign(Z_cache, mu.template cast<float>(), cfg.student_alpha);
    std::vector<uint32_t> hard_now = hard_labels(Q_cache);

    // Closed-form affinity refresh; skipped when either weight is off since
    // the solution is undefined (gamma = 0) or has no effect on the loss.
    if (cfg.beta_gr > 0.0 && cfg.gamma_en > 0.0) {
      double before = affinity_objective(Q_cache, res.graph, cfg.beta_gr, cfg.gamma_en);
      update_affinity(res.graph, Q_cache, cfg.beta_gr, cfg.gamma_en);
      double after = affinity_objective(Q_cache, res.graph, cfg.beta_gr, cfg.gamma_en);
      if (after > before + 1e-9 * std::abs(before) + 1e-12)
        throw numeric_error("diec: affinity update increased its objective");
    }

    EpochLog row;
    row.epoch = epoch;
    row.l_re = lre_batches ? sum_lre / static_cast<double>(lre_batches) : 0.0;
    row.l_kl = sum_kl / static_cast<double>(N);
    row.l_gr = sum_gr / static_cast<double>(N);
    auto [lgr_now, len_now] = graph_losses(Q_cache, res.graph);
    (void)lgr_now;
    row.l_en = len_now / static_cast<double>(N);
    row.label_change = detail::label_change_fraction(hard_now, hard_prev);
    if (!labels.empty()) {
      row.acc = hungarian_acc(labels, hard_now);
      row.nmi = nmi(labels, hard_now);
      row.ari = ari(labels, hard_now);
    }
    row.denoise_probe = probe_denoise_loss(net, images, sched, base);
    res.log.push_back(row);
    hard_prev = hard_now;
  }

  res.state.centroids = mu.template cast<float>();
  res.state.Q = Q_cache;
  res.state.P = P;
  res.state.hard = hard_labels(Q_cache);
  res.state.student_alpha = cfg.student_alpha;
  return res;
}

}  // namespace diec
