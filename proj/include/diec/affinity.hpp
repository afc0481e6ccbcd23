#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Row-normalized k-NN affinity. Built once from flattened raw inputs with a
// local Gaussian bandwidth, then refined by the closed-form entropy-smoothed
// update as assignments evolve. Neighbor sets never change after build.
struct AffinityGraph {
  int k = 0;
  std::vector<std::vector<uint32_t>> nbr;  // N rows, k neighbor indices
  std::vector<std::vector<double>> w;      // matching weights, each row sums to 1
};

inline AffinityGraph build_affinity(const Tensorf& X, int k) {
  if (X.rank() != 2) throw shape_error("build_affinity: X must be N x D");
  const size_t N = X.dim(0), D = X.dim(1);
  if (k < 1 || static_cast<size_t>(k) >= N)
    throw param_error("build_affinity: need 1 <= k < N");
  AffinityGraph g;
  g.k = k;
  g.nbr.assign(N, {});
  g.w.assign(N, {});
  std::vector<std::pair<double, uint32_t>> dist(N);
  for (size_t i = 0; i < N; ++i) {
    for (size_t j = 0; j < N; ++j) {
      double d2 = 0.0;
      const float *a = X.data() + i * D, *b = X.data() + j * D;
      for (size_t t = 0; t < D; ++t) {
        double x = static_cast<double>(a[t]) - b[t];
        d2 += x * x;
      }
      dist[j] = {d2, static_cast<uint32_t>(j)};
    }
    dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double sigma = 0.0;
    for (int t = 0; t < k; ++t) sigma += dist[t].first;
    sigma /= static_cast<double>(k);
    g.nbr[i].resize(k);
    g.w[i].resize(k);
    double sum = 0.0;
    for (int t = 0; t < k; ++t) {
      g.nbr[i][t] = dist[t].second;
      double wt = sigma > 0.0 ? std::exp(-dist[t].first / sigma) : 1.0;
      g.w[i][t] = wt;
      sum += wt;
    }
    for (int t = 0; t < k; ++t) g.w[i][t] /= sum;
  }
  return g;
}

// L_Gr = sum_i sum_{j in NB_i} s_ij ||q_i - q_j||^2
// L_En = sum_i sum_{j in NB_i} s_ij log s_ij  (0 log 0 := 0)
inline std::pair<double, double> graph_losses(const Tensorf& Q, const AffinityGraph& S) {
  if (Q.rank() != 2 || Q.dim(0) != S.nbr.size()) throw shape_error("graph_losses: Q/S mismatch");
  const size_t N = Q.dim(0), K = Q.dim(1);
  double lgr = 0.0, len = 0.0;
  for (size_t i = 0; i < N; ++i)
    for (size_t t = 0; t < S.nbr[i].size(); ++t) {
      uint32_t j = S.nbr[i][t];
      double s = S.w[i][t];
      double d2 = 0.0;
      for (size_t c = 0; c < K; ++c) {
        double d = static_cast<double>(Q.at2(i, c)) - Q.at2(j, c);
        d2 += d * d;
      }
      lgr += s * d2;
      if (s > 0.0) len += s * std::log(s);
    }
  return {lgr, len};
}

inline double affinity_objective(const Tensorf& Q, const AffinityGraph& S, double beta_gr,
                                 double gamma_en) {
  auto [lgr, len] = graph_losses(Q, S);
  return beta_gr * lgr + gamma_en * len;
}

// Row-wise closed-form minimizer of beta sum_j s_ij d_ij + gamma sum_j s_ij
// log s_ij over the simplex: s_ij proportional to exp(-beta d_ij / gamma),
// computed with max-subtraction. Neighbor sets unchanged.
inline void update_affinity(AffinityGraph& S, const Tensorf& Q, double beta_gr,
                            double gamma_en) {
  if (!(gamma_en > 0.0)) throw param_error("update_affinity: gamma_en must be positive");
  if (beta_gr < 0.0) throw param_error("update_affinity: beta_gr must be non-negative");
  const size_t N = S.nbr.size(), K = Q.dim(1);
  if (Q.dim(0) != N) throw shape_error("update_affinity: Q/S mismatch");
  std::vector<double> logit;
  for (size_t i = 0; i < N; ++i) {
    const size_t k = S.nbr[i].size();
    logit.assign(k, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t t = 0; t < k; ++t) {
      uint32_t j = S.nbr[i][t];
      double d2 = 0.0;
      for (size_t c = 0; c < K; ++c) {
        double d = static_cast<double>(Q.at2(i, c)) - Q.at2(j, c);
        d2 += d * d;
      }
      logit[t] = -beta_gr * d2 / gamma_en;
      mx = std::max(mx, logit[t]);
    }
    double sum = 0.0;
    for (size_t t = 0; t < k; ++t) {
      logit[t] = std::exp(logit[t] - mx);
      sum += logit[t];
    }
    for (size_t t = 0; t < k; ++t) S.w[i][t] = logit[t] / sum;
  }
}

}  // namespace diec
