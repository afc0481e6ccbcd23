#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Forward-process tables, 1-indexed by timestep; alpha_bar[0] = 1 by the
// empty-product convention.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> beta;       // beta[1..T]
  std::vector<double> alpha;      // alpha[1..T]
  std::vector<double> alpha_bar;  // alpha_bar[0..T]

  // Posterior variance beta_tilde_t; zero at t = 1 because alpha_bar[0] = 1.
  double beta_tilde(int t) const {
    return (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
  }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw param_error("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw param_error("build_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 0.0);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  for (int t = 1; t <= T; ++t)
    if (s.alpha_bar[t] >= s.alpha_bar[t - 1])
      throw numeric_error("build_schedule: alpha_bar not strictly decreasing");
  return s;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline Tensorf forward_noising(const Tensorf& x0, int t, const Tensorf& eps,
                               const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw shape_error("forward_noising: x0/eps shape mismatch");
  if (t < 1 || t > sched.T) throw param_error("forward_noising: t out of range");
  const float a = static_cast<float>(std::sqrt(sched.alpha_bar[t]));
  const float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[t]));
  Tensorf out(x0.shape());
  for (size_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

// Per-sample variant: row n of x0 is noised to its own timestep ts[n].
inline Tensorf forward_noising(const Tensorf& x0, const std::vector<int>& ts, const Tensorf& eps,
                               const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw shape_error("forward_noising: x0/eps shape mismatch");
  const size_t rows = x0.dim(0);
  if (ts.size() != rows) throw shape_error("forward_noising: one timestep per sample expected");
  const size_t stride = rows ? x0.numel() / rows : 0;
  Tensorf out(x0.shape());
  for (size_t n = 0; n < rows; ++n) {
    const int t = ts[n];
    if (t < 1 || t > sched.T) throw param_error("forward_noising: t out of range");
    const float a = static_cast<float>(std::sqrt(sched.alpha_bar[t]));
    const float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[t]));
    for (size_t i = n * stride; i < (n + 1) * stride; ++i) out[i] = a * x0[i] + b * eps[i];
  }
  return out;
}

// Sinusoidal timestep embedding, first half sin, second half cos.
inline std::vector<float> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw param_error("timestep_embedding: dim must be even >= 2");
  const int half = dim / 2;
  std::vector<float> e(dim);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / static_cast<double>(half - 1));
    e[i] = static_cast<float>(std::sin(t * freq));
    e[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return e;
}

}  // namespace diec
