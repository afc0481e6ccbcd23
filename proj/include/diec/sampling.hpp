#pragma once

#include <algorithm>
#include <cmath>

#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

// Ancestral sampling from x_T ~ N(0, I) down to x_0 with posterior variance
// beta_tilde (zero at t = 1). Output clamped to [-1, 1] at the end only.
template <typename T = float>
Tensorf sample(UNet<T>& net, const NoiseSchedule& sched, int n, Rng& rng) {
  const int C = net.arch.in_channels, H = net.arch.image_size, W = net.arch.image_size;
  Tensorf x({static_cast<uint32_t>(n), static_cast<uint32_t>(C), static_cast<uint32_t>(H),
             static_cast<uint32_t>(W)});
  rng.fill_normal(x);
  for (int t = sched.T; t >= 1; --t) {
    auto [eps_hat, acts] = denoise_predict(net, x.template cast<T>(), t, {});
    (void)acts;
    const double ia = 1.0 / std::sqrt(sched.alpha[t]);
    const double w = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
    const double sigma = t > 1 ? std::sqrt(sched.beta_tilde(t)) : 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
      double mu = ia * (static_cast<double>(x[i]) - w * static_cast<double>(eps_hat[i]));
      double z = sigma > 0.0 ? rng.normal() : 0.0;
      x[i] = static_cast<float>(mu + sigma * z);
    }
  }
  for (auto& v : x.vec()) v = std::clamp(v, -1.0f, 1.0f);
  return x;
}

}  // namespace diec
