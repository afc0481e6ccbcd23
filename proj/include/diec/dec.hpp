#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Student-t soft assignment: q_ik = (1 + ||z_i - mu_k||^2 / alpha)^(-(alpha+1)/2),
// row-normalized.
inline Tensorf soft_assign(const Tensorf& Z, const Tensorf& mu, double alpha = 1.0) {
  if (alpha <= 0.0) throw param_error("soft_assign: alpha must be positive");
  if (Z.rank() != 2 || mu.rank() != 2 || Z.dim(1) != mu.dim(1))
    throw shape_error("soft_assign: dimension mismatch");
  const size_t N = Z.dim(0), K = mu.dim(0), d = Z.dim(1);
  if (K < 1) throw param_error("soft_assign: need K >= 1");
  Tensorf Q({static_cast<uint32_t>(N), static_cast<uint32_t>(K)});
  const double expo = -(alpha + 1.0) / 2.0;
  for (size_t i = 0; i < N; ++i) {
    double s = 0.0;
    std::vector<double> row(K);
    for (size_t k = 0; k < K; ++k) {
      double d2 = 0.0;
      for (size_t j = 0; j < d; ++j) {
        double x = static_cast<double>(Z.at2(i, j)) - mu.at2(k, j);
        d2 += x * x;
      }
      row[k] = std::pow(1.0 + d2 / alpha, expo);
      s += row[k];
    }
    for (size_t k = 0; k < K; ++k) Q.at2(i, k) = static_cast<float>(row[k] / s);
  }
  return Q;
}

// p_ik = (q_ik^2 / f_k) / sum_k' (q_ik'^2 / f_k'), f_k = sum_i q_ik.
inline Tensorf target_distribution(const Tensorf& Q) {
  if (Q.rank() != 2) throw shape_error("target_distribution: Q must be N x K");
  const size_t N = Q.dim(0), K = Q.dim(1);
  std::vector<double> f(K, 0.0);
  for (size_t i = 0; i < N; ++i)
    for (size_t k = 0; k < K; ++k) f[k] += Q.at2(i, k);
  for (size_t k = 0; k < K; ++k)
    if (f[k] <= 0.0)
      throw degenerate_cluster_error("target_distribution: cluster has zero soft mass",
                                     static_cast<int>(k));
  Tensorf P(Q.shape());
  for (size_t i = 0; i < N; ++i) {
    double s = 0.0;
    std::vector<double> row(K);
    for (size_t k = 0; k < K; ++k) {
      double q = Q.at2(i, k);
      row[k] = q * q / f[k];
      s += row[k];
    }
    for (size_t k = 0; k < K; ++k) P.at2(i, k) = static_cast<float>(row[k] / s);
  }
  return P;
}

// KL(P || Q) = sum_i sum_k p log(p / q), q clipped below at 1e-12.
inline double kl_loss(const Tensorf& P, const Tensorf& Q) {
  if (P.shape() != Q.shape()) throw shape_error("kl_loss: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < P.numel(); ++i) {
    double p = P[i];
    if (p <= 0.0) continue;
    double q = std::max(static_cast<double>(Q[i]), 1e-12);
    s += p * std::log(p / q);
  }
  return s;
}

inline std::vector<uint32_t> hard_labels(const Tensorf& Q) {
  const size_t N = Q.dim(0), K = Q.dim(1);
  std::vector<uint32_t> h(N, 0);
  for (size_t i = 0; i < N; ++i) {
    float best = Q.at2(i, 0);
    for (size_t k = 1; k < K; ++k)
      if (Q.at2(i, k) > best) {
        best = Q.at2(i, k);
        h[i] = static_cast<uint32_t>(k);
      }
  }
  return h;
}

struct ClusterState {
  Tensorf centroids;  // K x d
  Tensorf Q;          // N x K
  Tensorf P;          // N x K
  std::vector<uint32_t> hard;
  double student_alpha = 1.0;
};

}  // namespace diec
