#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "diec/errors.hpp"
#include "diec/linalg.hpp"
#include "diec/rng.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

struct KMeansResult {
  Tensorf centroids;  // K x d
  std::vector<uint32_t> assignments;
  double inertia = 0.0;
  int iterations = 0;
};

namespace detail {

inline double sqdist_rows(const float* a, const double* b, size_t d) {
  double s = 0.0;
  for (size_t i = 0; i < d; ++i) {
    double x = static_cast<double>(a[i]) - b[i];
    s += x * x;
  }
  return s;
}

}  // namespace detail

// Lloyd with k-means++ seeding and best-of-restarts. Empty clusters are
// refilled with the point farthest from its assigned centroid. Inertia must
// never increase across iterations; a violation is a numeric failure.
inline KMeansResult kmeans(const Tensorf& E, int K, int restarts, int max_iter, Rng& rng) {
  if (E.rank() != 2) throw shape_error("kmeans: E must be N x d");
  const size_t N = E.dim(0), d = E.dim(1);
  if (K < 1 || static_cast<size_t>(K) > N) throw param_error("kmeans: need 1 <= K <= N");
  if (restarts < 1 || max_iter < 1) throw param_error("kmeans: restarts/max_iter must be >= 1");

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int rs = 0; rs < restarts; ++rs) {
    Rng rr = rng.substream({rng_tag("kmeans"), static_cast<uint64_t>(rs)});
    // k-means++ seeding
    std::vector<double> cent(static_cast<size_t>(K) * d);
    std::vector<double> d2(N, std::numeric_limits<double>::infinity());
    size_t first = static_cast<size_t>(rr.uniform_int(0, static_cast<int64_t>(N) - 1));
    for (size_t j = 0; j < d; ++j) cent[j] = E.at2(first, j);
    for (int k = 1; k < K; ++k) {
      double total = 0.0;
      for (size_t i = 0; i < N; ++i) {
        double dd = detail::sqdist_rows(E.data() + i * d, cent.data() + (k - 1) * d, d);
        if (dd < d2[i]) d2[i] = dd;
        total += d2[i];
      }
      size_t pick = 0;
      if (total > 0.0) {
        double r = rr.uniform() * total, acc = 0.0;
        pick = N - 1;
        for (size_t i = 0; i < N; ++i) {
          acc += d2[i];
          if (acc >= r) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<size_t>(rr.uniform_int(0, static_cast<int64_t>(N) - 1));
      }
      for (size_t j = 0; j < d; ++j) cent[k * d + j] = E.at2(pick, j);
    }

    std::vector<uint32_t> assign(N, 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < max_iter; ++it) {
      bool changed = false;
      double inertia = 0.0;
      for (size_t i = 0; i < N; ++i) {
        double bd = std::numeric_limits<double>::infinity();
        uint32_t bk = 0;
        for (int k = 0; k < K; ++k) {
          double dd = detail::sqdist_rows(E.data() + i * d, cent.data() + k * d, d);
          if (dd < bd) {
            bd = dd;
            bk = static_cast<uint32_t>(k);
          }
        }
        if (assign[i] != bk) {
          assign[i] = bk;
          changed = true;
        }
        inertia += bd;
      }
      if (inertia > prev_inertia * (1.0 + 1e-9) + 1e-12)
        throw numeric_error("kmeans: inertia increased across Lloyd iterations");
      prev_inertia = inertia;
      if (!changed && it > 0) break;

      std::vector<double> sums(static_cast<size_t>(K) * d, 0.0);
      std::vector<size_t> counts(K, 0);
      for (size_t i = 0; i < N; ++i) {
        counts[assign[i]]++;
        const float* row = E.data() + i * d;
        double* s = sums.data() + assign[i] * d;
        for (size_t j = 0; j < d; ++j) s[j] += row[j];
      }
      for (int k = 0; k < K; ++k) {
        if (counts[k] > 0) {
          for (size_t j = 0; j < d; ++j) cent[k * d + j] = sums[k * d + j] / counts[k];
        } else {
          // farthest point from its current centroid (first index on ties)
          size_t far = 0;
          double fd = -1.0;
          for (size_t i = 0; i < N; ++i) {
            double dd = detail::sqdist_rows(E.data() + i * d, cent.data() + assign[i] * d, d);
            if (dd > fd) {
              fd = dd;
              far = i;
            }
          }
          for (size_t j = 0; j < d; ++j) cent[k * d + j] = E.at2(far, j);
        }
      }
    }

    // final inertia under the final centroids
    double inertia = 0.0;
    for (size_t i = 0; i < N; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      uint32_t bk = 0;
      for (int k = 0; k < K; ++k) {
        double dd = detail::sqdist_rows(E.data() + i * d, cent.data() + k * d, d);
        if (dd < bd) {
          bd = dd;
          bk = static_cast<uint32_t>(k);
        }
      }
      assign[i] = bk;
      inertia += bd;
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignments = assign;
      best.iterations = it;
      best.centroids = Tensorf({static_cast<uint32_t>(K), static_cast<uint32_t>(d)});
      for (size_t i = 0; i < cent.size(); ++i) best.centroids[i] = static_cast<float>(cent[i]);
    }
  }
  return best;
}

// Cluster means from assignments (the centroids that make W + B = T exact).
inline Tensord cluster_means(const Tensorf& E, const std::vector<uint32_t>& assignments, int K) {
  const size_t N = E.dim(0), d = E.dim(1);
  Tensord mu({static_cast<uint32_t>(K), static_cast<uint32_t>(d)});
  std::vector<size_t> counts(K, 0);
  for (size_t i = 0; i < N; ++i) {
    if (assignments[i] >= static_cast<uint32_t>(K))
      throw param_error("cluster_means: assignment out of range");
    counts[assignments[i]]++;
    for (size_t j = 0; j < d; ++j) mu.at2(assignments[i], j) += E.at2(i, j);
  }
  for (int k = 0; k < K; ++k)
    if (counts[k] > 0)
      for (size_t j = 0; j < d; ++j) mu.at2(k, j) /= static_cast<double>(counts[k]);
  return mu;
}

// W = sum_k sum_{i in C_k} (e_i - mu_k)(e_i - mu_k)^T
// B = sum_k |C_k| (mu_k - e_bar)(mu_k - e_bar)^T
inline std::pair<Tensord, Tensord> scatter_matrices(const Tensorf& E,
                                                    const std::vector<uint32_t>& assignments,
                                                    const Tensord& centroids) {
  if (E.rank() != 2 || centroids.rank() != 2 || centroids.dim(1) != E.dim(1))
    throw shape_error("scatter_matrices: dimension mismatch");
  if (assignments.size() != E.dim(0)) throw shape_error("scatter_matrices: assignment length");
  const size_t N = E.dim(0), d = E.dim(1), K = centroids.dim(0);
  Tensord W({static_cast<uint32_t>(d), static_cast<uint32_t>(d)});
  Tensord B({static_cast<uint32_t>(d), static_cast<uint32_t>(d)});
  std::vector<double> gmean(d, 0.0);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < d; ++j) gmean[j] += E.at2(i, j);
  for (size_t j = 0; j < d; ++j) gmean[j] /= static_cast<double>(N);

  std::vector<double> diff(d);
  for (size_t i = 0; i < N; ++i) {
    uint32_t k = assignments[i];
    if (k >= K) throw param_error("scatter_matrices: assignment out of range");
    for (size_t j = 0; j < d; ++j) diff[j] = static_cast<double>(E.at2(i, j)) - centroids.at2(k, j);
    for (size_t a = 0; a < d; ++a)
      for (size_t b = a; b < d; ++b) W.at2(a, b) += diff[a] * diff[b];
  }
  std::vector<size_t> counts(K, 0);
  for (size_t i = 0; i < N; ++i) counts[assignments[i]]++;
  for (size_t k = 0; k < K; ++k) {
    if (counts[k] == 0) continue;
    for (size_t j = 0; j < d; ++j) diff[j] = centroids.at2(k, j) - gmean[j];
    for (size_t a = 0; a < d; ++a)
      for (size_t b = a; b < d; ++b) B.at2(a, b) += counts[k] * diff[a] * diff[b];
  }
  for (size_t a = 0; a < d; ++a)
    for (size_t b = 0; b < a; ++b) {
      W.at2(a, b) = W.at2(b, a);
      B.at2(a, b) = B.at2(b, a);
    }
  return {std::move(W), std::move(B)};
}

// SS = N (logdet T - logdet W), T = W + B, with the jittered log-det.
inline double scott_score_from_assignments(const Tensorf& E,
                                           const std::vector<uint32_t>& assignments, int K,
                                           double jitter = 1e-6) {
  const size_t N = E.dim(0), d = E.dim(1);
  Tensord mu = cluster_means(E, assignments, K);
  auto [W, B] = scatter_matrices(E, assignments, mu);
  Tensord T({static_cast<uint32_t>(d), static_cast<uint32_t>(d)});
  for (size_t i = 0; i < T.numel(); ++i) T[i] = W[i] + B[i];
  double ldT = cholesky_logdet(T, jitter);
  double ldW = cholesky_logdet(W, jitter);
  return static_cast<double>(N) * (ldT - ldW);
}

inline double scott_score(const Tensorf& E, int K, Rng& rng, int restarts = 10,
                          int max_iter = 300, double jitter = 1e-6) {
  if (static_cast<size_t>(K) >= E.dim(0)) throw param_error("scott_score: need N > K");
  KMeansResult km = kmeans(E, K, restarts, max_iter, rng);
  return scott_score_from_assignments(E, km.assignments, K, jitter);
}

// PCA to d dims then row-wise l2 normalization; zero rows stay zero.
inline Tensorf align_embeddings(const Tensorf& E, int d) {
  if (E.rank() != 2) throw shape_error("align_embeddings: E must be N x D");
  const size_t N = E.dim(0), D = E.dim(1);
  if (d < 1 || static_cast<size_t>(d) > std::min(N - 1, D))
    throw param_error("align_embeddings: d out of range");
  PcaResult pca = pca_fit_transform(E.cast<double>(), d);
  Tensorf out({static_cast<uint32_t>(N), static_cast<uint32_t>(d)});
  for (size_t i = 0; i < N; ++i) {
    double nrm = 0.0;
    for (int j = 0; j < d; ++j) nrm += pca.projected.at2(i, j) * pca.projected.at2(i, j);
    nrm = std::sqrt(nrm);
    for (int j = 0; j < d; ++j)
      out.at2(i, j) = nrm > 0.0 ? static_cast<float>(pca.projected.at2(i, j) / nrm) : 0.0f;
  }
  return out;
}

// Mean of the ceil(rho * n) largest smoothed values in a layer's row.
inline double layer_score_top_rho(const std::vector<double>& row, double rho) {
  if (row.empty()) throw param_error("layer_score_top_rho: empty row");
  if (!(rho > 0.0) || rho > 1.0) throw param_error("layer_score_top_rho: rho out of (0, 1]");
  size_t take = static_cast<size_t>(std::ceil(rho * static_cast<double>(row.size())));
  std::vector<double> sorted = row;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double s = 0.0;
  for (size_t i = 0; i < take; ++i) s += sorted[i];
  return s / static_cast<double>(take);
}

struct ScoreGrid {
  std::vector<Tap> layers;     // encoder-to-decoder tap order
  std::vector<int> timesteps;  // evaluated timesteps, ascending
  Tensord raw;                 // layers x timesteps
  Tensord smoothed;
  bool aligned = false;
  int window = 5;
  int kmeans_restarts = 10;  // best-of-restarts per grid cell
};

}  // namespace diec
