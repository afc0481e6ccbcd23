#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

// log det(A + jitter * mean(diag(A)) * I) via Cholesky, accumulated with
// Kahan summation. A must be square and symmetric; only the lower triangle
// is read. Throws singularity_error when the factorization breaks down.
inline double cholesky_logdet(const Tensord& A, double jitter = 1e-6) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) throw shape_error("cholesky_logdet: non-square input");
  const size_t n = A.dim(0);
  double diag_mean = 0.0;
  for (size_t i = 0; i < n; ++i) diag_mean += A.at2(i, i);
  diag_mean /= static_cast<double>(n);
  const double tau = jitter * diag_mean;

  std::vector<double> L(n * n, 0.0);
  for (size_t j = 0; j < n; ++j) {
    for (size_t i = j; i < n; ++i) {
      double s = A.at2(i, j) + (i == j ? tau : 0.0);
      for (size_t k = 0; k < j; ++k) s -= L[i * n + k] * L[j * n + k];
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s))
          throw singularity_error("cholesky_logdet: non-positive pivot at " + std::to_string(j));
        L[j * n + j] = std::sqrt(s);
      } else {
        L[i * n + j] = s / L[j * n + j];
      }
    }
  }
  double acc = 0.0, c = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double y = std::log(L[i * n + i]) - c;
    double t = acc + y;
    c = (t - acc) - y;
    acc = t;
  }
  return 2.0 * acc;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// Returns eigenvalues in descending order with matching eigenvector columns.
struct EighResult {
  std::vector<double> values;
  Tensord vectors;  // n x n, column j pairs with values[j]
};

inline EighResult jacobi_eigh(const Tensord& A_in, int max_sweeps = 64) {
  if (A_in.rank() != 2 || A_in.dim(0) != A_in.dim(1)) throw shape_error("jacobi_eigh: non-square");
  const size_t n = A_in.dim(0);
  std::vector<double> a(A_in.vec());
  std::vector<double> v(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-28 * static_cast<double>(n * n)) break;

    for (size_t p = 0; p + 1 < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (apq == 0.0) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double cth = 1.0 / std::sqrt(t * t + 1.0);
        double sth = t * cth;
        for (size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = cth * akp - sth * akq;
          a[k * n + q] = sth * akp + cth * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = cth * apk - sth * aqk;
          a[q * n + k] = sth * apk + cth * aqk;
        }
        for (size_t k = 0; k < n; ++k) {
          double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = cth * vkp - sth * vkq;
          v[k * n + q] = sth * vkp + cth * vkq;
        }
      }
    }
  }

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t x, size_t y) { return a[x * n + x] > a[y * n + y]; });

  EighResult r;
  r.values.resize(n);
  r.vectors = Tensord({static_cast<uint32_t>(n), static_cast<uint32_t>(n)});
  for (size_t j = 0; j < n; ++j) {
    r.values[j] = a[order[j] * n + order[j]];
    for (size_t i = 0; i < n; ++i) r.vectors.at2(i, j) = v[i * n + order[j]];
  }
  return r;
}

struct PcaResult {
  Tensord basis;                   // D x d, orthonormal columns
  Tensord mean;                    // D
  Tensord projected;               // N x d
  std::vector<double> eigenvalues; // top d covariance eigenvalues
};

namespace detail {

// Sign convention: the largest-magnitude component of each basis column is
// positive (first index on ties).
inline void fix_column_sign(Tensord& basis, size_t col) {
  size_t D = basis.dim(0);
  size_t best = 0;
  double best_abs = -1.0;
  for (size_t i = 0; i < D; ++i) {
    double m = std::abs(basis.at2(i, col));
    if (m > best_abs) {
      best_abs = m;
      best = i;
    }
  }
  if (basis.at2(best, col) < 0.0)
    for (size_t i = 0; i < D; ++i) basis.at2(i, col) = -basis.at2(i, col);
}

// Deterministic fill-in for directions with (numerically) zero variance:
// canonical unit vectors orthogonalized against the columns already placed.
inline void fill_degenerate_column(Tensord& basis, size_t col) {
  size_t D = basis.dim(0);
  for (size_t cand = 0; cand < D; ++cand) {
    std::vector<double> u(D, 0.0);
    u[cand] = 1.0;
    for (size_t j = 0; j < col; ++j) {
      double dot = 0.0;
      for (size_t i = 0; i < D; ++i) dot += u[i] * basis.at2(i, j);
      for (size_t i = 0; i < D; ++i) u[i] -= dot * basis.at2(i, j);
    }
    double nrm = 0.0;
    for (double x : u) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm > 1e-8) {
      for (size_t i = 0; i < D; ++i) basis.at2(i, col) = u[i] / nrm;
      return;
    }
  }
  throw numeric_error("pca: cannot complete orthonormal basis");
}

}  // namespace detail

// PCA by eigendecomposition of the D x D covariance, or of the N x N Gram
// matrix when N < D. Projections are of the centered data onto the top-d
// principal directions.
inline PcaResult pca_fit_transform(const Tensord& X, int d) {
  if (X.rank() != 2) throw shape_error("pca: X must be a matrix");
  const size_t N = X.dim(0), D = X.dim(1);
  if (N < 2) throw param_error("pca: need at least two rows");
  if (d < 1 || static_cast<size_t>(d) > std::min(N - 1, D))
    throw param_error("pca: d out of range");

  PcaResult r;
  r.mean = Tensord({static_cast<uint32_t>(D)});
  for (size_t j = 0; j < D; ++j) {
    double s = 0.0;
    for (size_t i = 0; i < N; ++i) s += X.at2(i, j);
    r.mean[j] = s / static_cast<double>(N);
  }
  Tensord Xc({static_cast<uint32_t>(N), static_cast<uint32_t>(D)});
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < D; ++j) Xc.at2(i, j) = X.at2(i, j) - r.mean[j];

  const double denom = static_cast<double>(N - 1);
  r.basis = Tensord({static_cast<uint32_t>(D), static_cast<uint32_t>(d)});
  r.eigenvalues.assign(d, 0.0);

  if (D <= N) {
    Tensord C({static_cast<uint32_t>(D), static_cast<uint32_t>(D)});
    for (size_t a = 0; a < D; ++a)
      for (size_t b = a; b < D; ++b) {
        double s = 0.0;
        for (size_t i = 0; i < N; ++i) s += Xc.at2(i, a) * Xc.at2(i, b);
        C.at2(a, b) = C.at2(b, a) = s / denom;
      }
    EighResult e = jacobi_eigh(C);
    for (int j = 0; j < d; ++j) {
      r.eigenvalues[j] = std::max(0.0, e.values[j]);
      for (size_t i = 0; i < D; ++i) r.basis.at2(i, j) = e.vectors.at2(i, j);
    }
  } else {
    Tensord G({static_cast<uint32_t>(N), static_cast<uint32_t>(N)});
    for (size_t a = 0; a < N; ++a)
      for (size_t b = a; b < N; ++b) {
        double s = 0.0;
        for (size_t k = 0; k < D; ++k) s += Xc.at2(a, k) * Xc.at2(b, k);
        G.at2(a, b) = G.at2(b, a) = s / denom;
      }
    EighResult e = jacobi_eigh(G);
    for (int j = 0; j < d; ++j) {
      double lam = std::max(0.0, e.values[j]);
      r.eigenvalues[j] = lam;
      // v = Xc^T u / ||Xc^T u||
      std::vector<double> v(D, 0.0);
      for (size_t k = 0; k < D; ++k) {
        double s = 0.0;
        for (size_t i = 0; i < N; ++i) s += Xc.at2(i, k) * e.vectors.at2(i, j);
        v[k] = s;
      }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-12) {
        for (size_t i = 0; i < D; ++i) r.basis.at2(i, j) = v[i] / nrm;
      } else {
        detail::fill_degenerate_column(r.basis, j);
      }
    }
  }
  for (int j = 0; j < d; ++j) detail::fix_column_sign(r.basis, j);

  r.projected = Tensord({static_cast<uint32_t>(N), static_cast<uint32_t>(d)});
  for (size_t i = 0; i < N; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < D; ++k) s += Xc.at2(i, k) * r.basis.at2(k, j);
      r.projected.at2(i, j) = s;
    }
  return r;
}

// Project new rows with a fitted basis (used by the idempotence property).
inline Tensord pca_project(const Tensord& X, const Tensord& mean, const Tensord& basis) {
  const size_t N = X.dim(0), D = X.dim(1), d = basis.dim(1);
  if (basis.dim(0) != D) throw shape_error("pca_project: basis/input mismatch");
  Tensord out({static_cast<uint32_t>(N), static_cast<uint32_t>(d)});
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < D; ++k) s += (X.at2(i, k) - mean[k]) * basis.at2(k, j);
      out.at2(i, j) = s;
    }
  return out;
}

// Centered moving average with shrinking windows at the boundaries. The
// window is w consecutive positions of the evaluated sequence, matching how
// scores over a strided timestep set are smoothed.
inline std::vector<double> moving_average_centered(const std::vector<double>& series, int w) {
  if (series.empty()) throw param_error("moving_average_centered: empty series");
  if (w < 1 || w % 2 == 0) throw param_error("moving_average_centered: window must be odd and >= 1");
  const int n = static_cast<int>(series.size());
  const int h = w / 2;
  std::vector<double> out(series.size());
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - h), hi = std::min(n - 1, i + h);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += series[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace diec
