#pragma once

#include <cstdint>
#include <vector>

#include "diec/autodiff.hpp"
#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

// Adam with double-precision moments, stepped in fixed parameter order.
template <typename T = float>
class Adam {
 public:
  Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size()) throw shape_error("adam: param/grad count mismatch");
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t p = 0; p < params.size(); ++p) {
        m_[p].assign(params[p]->numel(), 0.0);
        v_[p].assign(params[p]->numel(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor<T>& w = *params[p];
      const Tensor<T>& g = *grads[p];
      if (g.numel() != w.numel()) throw shape_error("adam: grad shape mismatch");
      for (size_t i = 0; i < w.numel(); ++i) {
        double gi = g[i];
        m_[p][i] = b1_ * m_[p][i] + (1.0 - b1_) * gi;
        v_[p][i] = b2_ * v_[p][i] + (1.0 - b2_) * gi * gi;
        double mhat = m_[p][i] / bc1;
        double vhat = v_[p][i] / bc2;
        w[i] = static_cast<T>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// One random-timestep denoising loss evaluation: t_i ~ Uniform{1..T} and
// eps_i ~ N(0,I) drawn per sample, mean squared error per element. No
// gradients. Per-sample timesteps keep the estimator variance at the
// 1/sqrt(B) scale instead of inheriting the full spread of the loss over t.
template <typename T = float>
double denoise_loss_random_t(UNet<T>& net, const Tensorf& batch, const NoiseSchedule& sched,
                             Rng& rng) {
  std::vector<int> ts(batch.dim(0));
  for (int& t : ts) t = static_cast<int>(rng.uniform_int(1, sched.T));
  Tensorf eps(batch.shape());
  rng.fill_normal(eps);
  Tensorf xt = forward_noising(batch, ts, eps, sched);
  Tape<T> tp(false);
  UNetVars pv = bind_unet(tp, net, false);
  Var x = tp.constant(xt.template cast<T>());
  UNetForward<T> f = unet_forward(tp, net, pv, x, ts);
  Var loss = tp.mse(f.eps, eps.template cast<T>());
  return static_cast<double>(tp.val(loss)[0]);
}

// Fixed random-timestep probe: (t, eps) draws are keyed by probe index only,
// so the value is a deterministic function of the parameters. Used to track
// denoising stability across fine-tuning epochs.
template <typename T = float>
double probe_denoise_loss(UNet<T>& net, const Tensorf& images, const NoiseSchedule& sched,
                          const Rng& base, int probes = 8, int batch = 64) {
  const size_t N = images.dim(0), CHW = images.numel() / N;
  double total = 0.0;
  size_t count = 0;
  for (int p = 0; p < probes; ++p) {
    Rng pr = base.substream({rng_tag("probe"), static_cast<uint64_t>(p)});
    int t = static_cast<int>(pr.uniform_int(1, sched.T));
    size_t B = std::min<size_t>(batch, N);
    Tensorf xb({static_cast<uint32_t>(B), images.dim(1), images.dim(2), images.dim(3)});
    for (size_t n = 0; n < B; ++n) {
      size_t src = (static_cast<size_t>(p) * B + n) % N;
      std::copy(images.data() + src * CHW, images.data() + (src + 1) * CHW,
                xb.data() + n * CHW);
    }
    Tensorf eps(xb.shape());
    pr.fill_normal(eps);
    Tensorf xt = forward_noising(xb, t, eps, sched);
    Tape<T> tp(false);
    UNetVars pv = bind_unet(tp, net, false);
    UNetForward<T> f = unet_forward(tp, net, pv, tp.constant(xt.template cast<T>()), t);
    Var loss = tp.mse(f.eps, eps.template cast<T>());
    total += static_cast<double>(tp.val(loss)[0]) * B;
    count += B;
  }
  return total / static_cast<double>(count);
}

// Denoising pretraining. Returns the per-epoch mean loss log.
template <typename T = float>
std::vector<double> pretrain(UNet<T>& net, const Tensorf& images, const NoiseSchedule& sched,
                             int epochs, int batch_size, double lr, const Rng& base) {
  if (images.rank() != 4 || images.dim(0) == 0) throw param_error("pretrain: empty dataset");
  if (batch_size < 1) throw param_error("pretrain: batch size must be >= 1");
  const size_t N = images.dim(0), CHW = images.numel() / N;
  Adam<T> opt(lr);
  std::vector<Tensor<T>*> params = net.params();
  std::vector<double> log;
  for (int e = 0; e < epochs; ++e) {
    Rng er = base.substream({rng_tag("pretrain_epoch"), static_cast<uint64_t>(e)});
    std::vector<uint32_t> perm = er.permutation(static_cast<uint32_t>(N));
    double esum = 0.0;
    for (size_t off = 0; off < N; off += batch_size) {
      const size_t B = std::min<size_t>(batch_size, N - off);
      std::vector<int> ts(B);
      for (int& t : ts) t = static_cast<int>(er.uniform_int(1, sched.T));
      Tensorf xb({static_cast<uint32_t>(B), images.dim(1), images.dim(2), images.dim(3)});
      for (size_t n = 0; n < B; ++n)
        std::copy(images.data() + perm[off + n] * CHW, images.data() + (perm[off + n] + 1) * CHW,
                  xb.data() + n * CHW);
      Tensorf eps(xb.shape());
      er.fill_normal(eps);
      Tensorf xt = forward_noising(xb, ts, eps, sched);

      Tape<T> tp;
      UNetVars pv = bind_unet(tp, net, true);
      UNetForward<T> f = unet_forward(tp, net, pv, tp.constant(xt.template cast<T>()), ts);
      Var loss = tp.mse(f.eps, eps.template cast<T>());
      tp.backward(loss);
      std::vector<const Tensor<T>*> grads;
      grads.reserve(pv.v.size());
      for (Var v : pv.v) grads.push_back(&tp.grad(v));
      opt.step(params, grads);
      esum += static_cast<double>(tp.val(loss)[0]) * B;
    }
    log.push_back(esum / static_cast<double>(N));
  }
  return log;
}

}  // namespace diec
