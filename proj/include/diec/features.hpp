#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

enum class Pooling { GAP, FLATTEN };

struct FeatureBatch {
  Tensorf embeddings;  // N x d
  Tap layer = Tap::D1;
  int timestep = 0;
  int trials = 0;
  Pooling pooling = Pooling::GAP;
};

// Instrumentation: one unit = one sample pushed through the denoiser once.
inline uint64_t& forward_pass_counter() {
  static uint64_t c = 0;
  return c;
}

// Test hook: supplies the noise draw for (sample index, trial) instead of the
// seeded substream.
using NoiseFn = std::function<Tensorf(uint32_t sample_idx, int trial)>;

namespace detail {

inline Tensorf gather_rows4(const Tensorf& images, const std::vector<uint32_t>& idx) {
  if (images.rank() != 4) throw shape_error("gather_rows4: expects NCHW");
  const size_t CHW = images.numel() / images.dim(0);
  Tensorf out({static_cast<uint32_t>(idx.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= images.dim(0)) throw shape_error("gather_rows4: index out of range");
    std::copy(images.data() + idx[i] * CHW, images.data() + (idx[i] + 1) * CHW,
              out.data() + i * CHW);
  }
  return out;
}

inline Tensorf default_noise(const Rng& base, uint32_t si, int r, int t,
                             const std::vector<uint32_t>& img_shape) {
  Rng sub = base.substream({rng_tag("noise"), si, static_cast<uint64_t>(r),
                            static_cast<uint64_t>(t)});
  Tensorf eps(img_shape);
  sub.fill_normal(eps);
  return eps;
}

inline void pool_into(const Tensorf& act, Pooling pooling, size_t batch_off, Tensord& acc) {
  const size_t B = act.dim(0), C = act.dim(1), HW = act.dim(2) * act.dim(3);
  if (pooling == Pooling::GAP) {
    for (size_t n = 0; n < B; ++n)
      for (size_t c = 0; c < C; ++c) {
        const float* p = act.data() + (n * C + c) * HW;
        double s = 0.0;
        for (size_t i = 0; i < HW; ++i) s += p[i];
        acc.at2(batch_off + n, c) += s / static_cast<double>(HW);
      }
  } else {
    for (size_t n = 0; n < B; ++n) {
      const float* p = act.data() + n * C * HW;
      double* a = acc.data() + (batch_off + n) * acc.dim(1);
      for (size_t i = 0; i < C * HW; ++i) a[i] += p[i];
    }
  }
}

}  // namespace detail

// Pooled tap features for every tap site at timestep t, averaged over R
// independent noise trials. One forward pass per (sample, trial) captures all
// nine taps. Work is chunked to bound tape memory.
template <typename T = float>
std::array<Tensorf, kNumTaps> extract_all_taps(UNet<T>& net, const Tensorf& x0,
                                               const std::vector<uint32_t>& sample_idx, int t,
                                               int R, const NoiseSchedule& sched, const Rng& base,
                                               Pooling pooling = Pooling::GAP,
                                               const NoiseFn& noise_fn = nullptr,
                                               int until = kNumTaps - 1) {
  if (R < 1) throw param_error("extract_all_taps: R must be >= 1");
  if (until < 0 || until >= kNumTaps) throw param_error("extract_all_taps: bad tap index");
  if (x0.rank() != 4) throw shape_error("extract_all_taps: expects NCHW batch");
  if (sample_idx.size() != x0.dim(0)) throw shape_error("extract_all_taps: index count mismatch");
  const size_t N = x0.dim(0);
  const size_t C = x0.dim(1), H = x0.dim(2), W = x0.dim(3);
  auto shapes = tap_shapes(net.arch, static_cast<int>(H), static_cast<int>(W));

  std::array<Tensord, kNumTaps> acc;
  for (int l = 0; l <= until; ++l) {
    uint32_t d = pooling == Pooling::GAP
                     ? static_cast<uint32_t>(shapes[l].channels)
                     : static_cast<uint32_t>(shapes[l].channels * shapes[l].height *
                                             shapes[l].width);
    acc[l] = Tensord({static_cast<uint32_t>(N), d});
  }

  const size_t chunk = 64;
  for (size_t off = 0; off < N; off += chunk) {
    const size_t B = std::min(chunk, N - off);
    Tensorf xb({static_cast<uint32_t>(B), static_cast<uint32_t>(C), static_cast<uint32_t>(H),
                static_cast<uint32_t>(W)});
    for (int r = 0; r < R; ++r) {
      for (size_t n = 0; n < B; ++n) {
        Tensorf eps = noise_fn
                          ? noise_fn(sample_idx[off + n], r)
                          : detail::default_noise(base, sample_idx[off + n], r, t,
                                                  {static_cast<uint32_t>(C),
                                                   static_cast<uint32_t>(H),
                                                   static_cast<uint32_t>(W)});
        if (eps.numel() != C * H * W) throw shape_error("extract_all_taps: bad noise shape");
        const double a = std::sqrt(sched.alpha_bar[t]);
        const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
        const float* x0p = x0.data() + (off + n) * C * H * W;
        float* xbp = xb.data() + n * C * H * W;
        for (size_t i = 0; i < C * H * W; ++i)
          xbp[i] = static_cast<float>(a * x0p[i] + b * eps[i]);
      }
      if (t < 1 || t > sched.T) throw param_error("extract_all_taps: t out of range");
      Tape<T> tp(false);
      UNetVars pv = bind_unet(tp, net, false);
      Var x = tp.constant(xb.template cast<T>());
      UNetForward<T> f = unet_forward(tp, net, pv, x, t, until);
      forward_pass_counter() += B;
      for (int l = 0; l <= until; ++l) {
        Tensorf act = tp.val(f.taps[l]).template cast<float>();
        detail::pool_into(act, pooling, off, acc[l]);
      }
    }
  }

  std::array<Tensorf, kNumTaps> out;
  for (int l = 0; l <= until; ++l) {
    out[l] = Tensorf(acc[l].shape());
    for (size_t i = 0; i < acc[l].numel(); ++i)
      out[l][i] = static_cast<float>(acc[l][i] / static_cast<double>(R));
  }
  return out;
}

// Single-tap extraction, per the operation contract. Internally shares the
// all-taps pass; the per-(sample, trial, timestep) noise keying makes the
// result identical to a dedicated single-tap pass.
template <typename T = float>
FeatureBatch extract_features(UNet<T>& net, const Tensorf& x0,
                              const std::vector<uint32_t>& sample_idx, Tap l, int t, int R,
                              const NoiseSchedule& sched, const Rng& base,
                              Pooling pooling = Pooling::GAP, const NoiseFn& noise_fn = nullptr) {
  auto all = extract_all_taps(net, x0, sample_idx, t, R, sched, base, pooling, noise_fn,
                              static_cast<int>(l));
  FeatureBatch fb;
  fb.embeddings = std::move(all[static_cast<int>(l)]);
  fb.layer = l;
  fb.timestep = t;
  fb.trials = R;
  fb.pooling = pooling;
  return fb;
}

}  // namespace diec
