#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "diec/errors.hpp"

namespace diec {

struct ContingencyTable {
  size_t kt = 0, kp = 0, n = 0;
  std::vector<int64_t> counts;  // kt x kp
  std::vector<int64_t> row_marg, col_marg;
  int64_t& at(size_t i, size_t j) { return counts[i * kp + j]; }
  int64_t at(size_t i, size_t j) const { return counts[i * kp + j]; }
};

inline ContingencyTable contingency(const std::vector<uint32_t>& y_true,
                                    const std::vector<uint32_t>& y_pred) {
  if (y_true.size() != y_pred.size()) throw shape_error("contingency: length mismatch");
  if (y_true.empty()) throw param_error("contingency: empty labels");
  ContingencyTable t;
  uint32_t mt = 0, mp = 0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    mt = std::max(mt, y_true[i]);
    mp = std::max(mp, y_pred[i]);
  }
  t.kt = mt + 1;
  t.kp = mp + 1;
  t.n = y_true.size();
  t.counts.assign(t.kt * t.kp, 0);
  for (size_t i = 0; i < y_true.size(); ++i) t.counts[y_true[i] * t.kp + y_pred[i]]++;
  t.row_marg.assign(t.kt, 0);
  t.col_marg.assign(t.kp, 0);
  for (size_t i = 0; i < t.kt; ++i)
    for (size_t j = 0; j < t.kp; ++j) {
      t.row_marg[i] += t.at(i, j);
      t.col_marg[j] += t.at(i, j);
    }
  return t;
}

namespace detail {

// Assignment problem on a square cost matrix (minimization), potentials
// method, O(n^3). Returns col_of_row.
inline std::vector<int> hungarian_min(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = INF;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

}  // namespace detail

// Clustering accuracy under the best one-to-one cluster/class matching,
// solved on the zero-padded square negated contingency table.
inline double hungarian_acc(const std::vector<uint32_t>& y_true,
                            const std::vector<uint32_t>& y_pred) {
  ContingencyTable t = contingency(y_true, y_pred);
  const size_t n = std::max(t.kt, t.kp);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < t.kt; ++i)
    for (size_t j = 0; j < t.kp; ++j) cost[i][j] = -static_cast<double>(t.at(i, j));
  std::vector<int> match = detail::hungarian_min(cost);
  int64_t hit = 0;
  for (size_t i = 0; i < t.kt; ++i)
    if (match[i] >= 0 && static_cast<size_t>(match[i]) < t.kp)
      hit += t.at(i, static_cast<size_t>(match[i]));
  return static_cast<double>(hit) / static_cast<double>(t.n);
}

// Geometric-mean normalized mutual information. Both sides single-cluster
// means the partitions are identical: 1.0. One-sided degenerate: 0.0.
inline double nmi(const std::vector<uint32_t>& y_true, const std::vector<uint32_t>& y_pred) {
  ContingencyTable t = contingency(y_true, y_pred);
  const double N = static_cast<double>(t.n);
  double ht = 0.0, hp = 0.0, mi = 0.0;
  for (size_t i = 0; i < t.kt; ++i)
    if (t.row_marg[i] > 0) {
      double p = t.row_marg[i] / N;
      ht -= p * std::log(p);
    }
  for (size_t j = 0; j < t.kp; ++j)
    if (t.col_marg[j] > 0) {
      double p = t.col_marg[j] / N;
      hp -= p * std::log(p);
    }
  for (size_t i = 0; i < t.kt; ++i)
    for (size_t j = 0; j < t.kp; ++j)
      if (t.at(i, j) > 0) {
        double pij = t.at(i, j) / N;
        mi += pij * std::log(pij * N * N / (static_cast<double>(t.row_marg[i]) * t.col_marg[j]));
      }
  if (ht <= 0.0 && hp <= 0.0) return 1.0;
  if (ht <= 0.0 || hp <= 0.0) return 0.0;
  return mi / std::sqrt(ht * hp);
}

namespace detail {

inline bool identical_partitions(const ContingencyTable& t) {
  for (size_t i = 0; i < t.kt; ++i) {
    int nz = 0;
    for (size_t j = 0; j < t.kp; ++j)
      if (t.at(i, j) > 0) ++nz;
    if (t.row_marg[i] > 0 && nz != 1) return false;
  }
  for (size_t j = 0; j < t.kp; ++j) {
    int nz = 0;
    for (size_t i = 0; i < t.kt; ++i)
      if (t.at(i, j) > 0) ++nz;
    if (t.col_marg[j] > 0 && nz != 1) return false;
  }
  return true;
}

}  // namespace detail

// Adjusted Rand index by pair counting. When Max == Expected (both partitions
// trivial) the value is 1.0 for identical partitions and 0.0 otherwise.
inline double ari(const std::vector<uint32_t>& y_true, const std::vector<uint32_t>& y_pred) {
  ContingencyTable t = contingency(y_true, y_pred);
  auto c2 = [](int64_t x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); };
  double index = 0.0, ea = 0.0, eb = 0.0;
  for (size_t i = 0; i < t.kt; ++i)
    for (size_t j = 0; j < t.kp; ++j) index += c2(t.at(i, j));
  for (size_t i = 0; i < t.kt; ++i) ea += c2(t.row_marg[i]);
  for (size_t j = 0; j < t.kp; ++j) eb += c2(t.col_marg[j]);
  double pairs = c2(static_cast<int64_t>(t.n));
  double expected = pairs > 0.0 ? ea * eb / pairs : 0.0;
  double maxi = 0.5 * (ea + eb);
  if (std::abs(maxi - expected) < 1e-12)
    return detail::identical_partitions(t) ? 1.0 : 0.0;
  return (index - expected) / (maxi - expected);
}

}  // namespace diec
