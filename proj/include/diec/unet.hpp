#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diec/autodiff.hpp"
#include "diec/errors.hpp"
#include "diec/rng.hpp"
#include "diec/schedule.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Tap sites in encoder-to-decoder order; this ordering is also the
// tie-break rank (shallowest wins).
enum class Tap : int { D1 = 0, D2, D3, D4, BOTTLENECK, U4, U3, U2, U1 };
constexpr int kNumTaps = 9;

inline const char* tap_name(Tap t) {
  static const char* names[kNumTaps] = {"D1", "D2", "D3", "D4", "BOTTLENECK",
                                        "U4", "U3", "U2", "U1"};
  return names[static_cast<int>(t)];
}

inline Tap tap_from_name(const std::string& s) {
  for (int i = 0; i < kNumTaps; ++i)
    if (s == tap_name(static_cast<Tap>(i))) return static_cast<Tap>(i);
  throw param_error("unknown tap id: " + s);
}

struct ArchDescriptor {
  int in_channels = 1;
  int image_size = 16;
  std::array<int, 4> widths = {16, 32, 64, 64};
  int temb_dim = 64;
};

// Channel width at each tap under the symmetric skip pairing U_k <- D_k.
inline std::array<int, kNumTaps> tap_channels(const ArchDescriptor& a) {
  return {a.widths[0], a.widths[1], a.widths[2], a.widths[3], a.widths[3],
          a.widths[2], a.widths[1], a.widths[0], a.widths[0]};
}

struct TapShape {
  int channels, height, width;
};

// Shape table from pure arithmetic; the backbone test checks actual
// activations against this.
inline std::array<TapShape, kNumTaps> tap_shapes(const ArchDescriptor& a, int H, int W) {
  auto up = [](int v) { return (v - 1) / 2 + 1; };  // stride-2 conv output size
  int h1 = H, w1 = W;
  int h2 = up(h1), w2 = up(w1);
  int h3 = up(h2), w3 = up(w2);
  int h4 = up(h3), w4 = up(w3);
  auto c = tap_channels(a);
  return {TapShape{c[0], h1, w1}, TapShape{c[1], h2, w2}, TapShape{c[2], h3, w3},
          TapShape{c[3], h4, w4}, TapShape{c[4], h4, w4}, TapShape{c[5], h4, w4},
          TapShape{c[6], h3, w3}, TapShape{c[7], h2, w2}, TapShape{c[8], h1, w1}};
}

inline int groups_for(int channels) {
  int g = channels < 8 ? channels : 8;
  while (channels % g != 0) --g;
  return g;
}

// Tiny tapped denoiser. Four down blocks (D1 stride 1, D2-D4 stride 2),
// bottleneck, four up blocks each concatenating its mirror-level skip.
// Every block is conv3x3 -> GroupNorm -> FiLM(t) -> SiLU; the block output
// is the tap. The output head is a zero-initialized conv3x3.
template <typename T = float>
struct UNet {
  ArchDescriptor arch;

  struct Block {
    Tensor<T> cw, cb, fw, fb;
    int in_ch = 0, out_ch = 0, stride = 1;
  };
  std::array<Block, kNumTaps> blocks;
  Tensor<T> head_w, head_b;

  UNet() = default;

  UNet(const ArchDescriptor& a, Rng& rng) : arch(a) {
    const int ic = a.in_channels;
    const auto& w = a.widths;
    const int ins[kNumTaps] = {ic,           w[0], w[1], w[2], w[3],
                               w[3] + w[3], w[2] + w[2], w[1] + w[1], w[0] + w[0]};
    const int outs[kNumTaps] = {w[0], w[1], w[2], w[3], w[3], w[2], w[1], w[0], w[0]};
    const int strides[kNumTaps] = {1, 2, 2, 2, 1, 1, 1, 1, 1};
    for (int b = 0; b < kNumTaps; ++b) {
      Block& bl = blocks[b];
      bl.in_ch = ins[b];
      bl.out_ch = outs[b];
      bl.stride = strides[b];
      bl.cw = Tensor<T>({static_cast<uint32_t>(outs[b]), static_cast<uint32_t>(ins[b]), 3, 3});
      bl.cb = Tensor<T>({static_cast<uint32_t>(outs[b])});
      // FiLM weights start at zero so modulation is the identity at init.
      bl.fw = Tensor<T>({static_cast<uint32_t>(2 * outs[b]), static_cast<uint32_t>(a.temb_dim)});
      bl.fb = Tensor<T>({static_cast<uint32_t>(2 * outs[b])});
      Rng sub = rng.substream({rng_tag("unet_init"), static_cast<uint64_t>(b)});
      double std = std::sqrt(2.0 / (ins[b] * 9.0));
      for (size_t i = 0; i < bl.cw.numel(); ++i)
        bl.cw[i] = static_cast<T>(sub.normal() * std);
    }
    head_w = Tensor<T>({static_cast<uint32_t>(ic), static_cast<uint32_t>(w[0]), 3, 3});
    head_b = Tensor<T>({static_cast<uint32_t>(ic)});
  }

  // Fixed parameter order shared by checkpointing, binding, and the optimizer.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (int b = 0; b < kNumTaps; ++b) {
      std::string p = tap_name(static_cast<Tap>(b));
      fn(p + ".conv_w", blocks[b].cw);
      fn(p + ".conv_b", blocks[b].cb);
      fn(p + ".film_w", blocks[b].fw);
      fn(p + ".film_b", blocks[b].fb);
    }
    fn(std::string("head.conv_w"), head_w);
    fn(std::string("head.conv_b"), head_b);
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for_each_param([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::string> param_names() {
    std::vector<std::string> out;
    for_each_param([&](const std::string& n, Tensor<T>&) { out.push_back(n); });
    return out;
  }

  size_t param_count() {
    size_t n = 0;
    for_each_param([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

using UNetf = UNet<float>;

// Tape bindings for the 38 parameter tensors, in params() order.
struct UNetVars {
  std::vector<Var> v;
  Var cw(int b) const { return v[4 * b + 0]; }
  Var cb(int b) const { return v[4 * b + 1]; }
  Var fw(int b) const { return v[4 * b + 2]; }
  Var fb(int b) const { return v[4 * b + 3]; }
  Var hw() const { return v[4 * kNumTaps + 0]; }
  Var hb() const { return v[4 * kNumTaps + 1]; }
};

template <typename T>
UNetVars bind_unet(Tape<T>& tp, UNet<T>& net, bool trainable) {
  UNetVars pv;
  net.for_each_param(
      [&](const std::string&, Tensor<T>& t) { pv.v.push_back(tp.leaf(t, trainable)); });
  return pv;
}

template <typename T>
struct UNetForward {
  Var eps;                        // invalid when the pass stopped at a tap
  std::array<Var, kNumTaps> taps; // invalid past the stopping point
};

// Forward pass capturing taps; stops early after `until_tap` when >= 0.
// Timesteps vary per sample; the scalar overload below replicates one value.
template <typename T>
UNetForward<T> unet_forward(Tape<T>& tp, const UNet<T>& net, const UNetVars& pv, Var x,
                            const std::vector<int>& ts, int until_tap = -1) {
  const size_t N = tp.val(x).dim(0);
  if (ts.size() != N) throw shape_error("unet_forward: one timestep per sample expected");
  Tensor<T> temb({static_cast<uint32_t>(N), static_cast<uint32_t>(net.arch.temb_dim)});
  for (size_t n = 0; n < N; ++n) {
    std::vector<float> e = timestep_embedding(ts[n], net.arch.temb_dim);
    for (int i = 0; i < net.arch.temb_dim; ++i)
      temb.at2(n, i) = static_cast<T>(e[i]);
  }
  Var te = tp.constant(std::move(temb));

  UNetForward<T> out;
  auto block = [&](int b, Var in) {
    Var h = tp.conv2d(in, pv.cw(b), pv.cb(b), net.blocks[b].stride);
    h = tp.groupnorm(h, groups_for(net.blocks[b].out_ch));
    Var gb = tp.linear(te, pv.fw(b), pv.fb(b));
    h = tp.film(h, gb);
    h = tp.silu(h);
    out.taps[b] = h;
    return h;
  };

  Var a1 = block(0, x);
  if (until_tap == 0) return out;
  Var a2 = block(1, a1);
  if (until_tap == 1) return out;
  Var a3 = block(2, a2);
  if (until_tap == 2) return out;
  Var a4 = block(3, a3);
  if (until_tap == 3) return out;
  Var ab = block(4, a4);
  if (until_tap == 4) return out;

  Var b4 = block(5, tp.concat_channels(ab, a4));
  if (until_tap == 5) return out;
  Var up3 = tp.upsample2x_crop(b4, tp.val(a3).dim(2), tp.val(a3).dim(3));
  Var b3 = block(6, tp.concat_channels(up3, a3));
  if (until_tap == 6) return out;
  Var up2 = tp.upsample2x_crop(b3, tp.val(a2).dim(2), tp.val(a2).dim(3));
  Var b2 = block(7, tp.concat_channels(up2, a2));
  if (until_tap == 7) return out;
  Var up1 = tp.upsample2x_crop(b2, tp.val(a1).dim(2), tp.val(a1).dim(3));
  Var b1 = block(8, tp.concat_channels(up1, a1));
  if (until_tap == 8) return out;

  out.eps = tp.conv2d(b1, pv.hw(), pv.hb(), 1);
  return out;
}

template <typename T>
UNetForward<T> unet_forward(Tape<T>& tp, const UNet<T>& net, const UNetVars& pv, Var x, int t,
                            int until_tap = -1) {
  const size_t N = tp.val(x).dim(0);
  return unet_forward(tp, net, pv, x, std::vector<int>(N, t), until_tap);
}

// Inference helper: eps_hat plus requested tap activations, no gradients.
template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> denoise_predict(UNet<T>& net, const Tensor<T>& x_t,
                                                             int t,
                                                             const std::vector<Tap>& taps) {
  Tape<T> tp(false);
  UNetVars pv = bind_unet(tp, net, false);
  Var x = tp.constant(x_t);
  UNetForward<T> f = unet_forward(tp, net, pv, x, t);
  std::vector<Tensor<T>> acts;
  for (Tap tap : taps) acts.push_back(tp.val(f.taps[static_cast<int>(tap)]));
  return {tp.val(f.eps), std::move(acts)};
}

}  // namespace diec
