#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diec/autodiff.hpp"
#include "diec/rng.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Two-layer ReLU perceptron with matched input/output width, applied as a
// residual: z = e + g(e). The second layer starts at zero so z = e initially.
template <typename T = float>
struct ResidualHead {
  Tensor<T> w1, b1, w2, b2;
  int dim = 0;

  ResidualHead() = default;

  ResidualHead(int d, Rng& rng) : dim(d) {
    w1 = Tensor<T>({static_cast<uint32_t>(d), static_cast<uint32_t>(d)});
    b1 = Tensor<T>({static_cast<uint32_t>(d)});
    w2 = Tensor<T>({static_cast<uint32_t>(d), static_cast<uint32_t>(d)});
    b2 = Tensor<T>({static_cast<uint32_t>(d)});
    Rng sub = rng.substream(rng_tag("residual_init"));
    double std = std::sqrt(2.0 / d);
    for (size_t i = 0; i < w1.numel(); ++i) w1[i] = static_cast<T>(sub.normal() * std);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(std::string("head.w1"), w1);
    fn(std::string("head.b1"), b1);
    fn(std::string("head.w2"), w2);
    fn(std::string("head.b2"), b2);
  }

  std::vector<Tensor<T>*> params() { return {&w1, &b1, &w2, &b2}; }

  // Plain (no-tape) application.
  Tensor<T> apply(const Tensor<T>& e) const {
    if (e.rank() != 2 || e.dim(1) != static_cast<uint32_t>(dim))
      throw shape_error("residual head: input width mismatch");
    const size_t N = e.dim(0), D = dim;
    Tensor<T> z(e.shape());
    std::vector<double> h(D);
    for (size_t n = 0; n < N; ++n) {
      for (size_t o = 0; o < D; ++o) {
        double s = b1[o];
        for (size_t i = 0; i < D; ++i) s += static_cast<double>(w1.at2(o, i)) * e.at2(n, i);
        h[o] = s > 0.0 ? s : 0.0;
      }
      for (size_t o = 0; o < D; ++o) {
        double s = b2[o];
        for (size_t i = 0; i < D; ++i) s += static_cast<double>(w2.at2(o, i)) * h[i];
        z.at2(n, o) = static_cast<T>(static_cast<double>(e.at2(n, o)) + s);
      }
    }
    return z;
  }
};

struct HeadVars {
  Var w1, b1, w2, b2;
};

template <typename T>
HeadVars bind_head(Tape<T>& tp, ResidualHead<T>& head, bool trainable) {
  return {tp.leaf(head.w1, trainable), tp.leaf(head.b1, trainable),
          tp.leaf(head.w2, trainable), tp.leaf(head.b2, trainable)};
}

// Tape version: z = e + W2 relu(W1 e + b1) + b2.
template <typename T>
Var residual_embed(Tape<T>& tp, Var e, const HeadVars& hv) {
  Var h = tp.relu(tp.linear(e, hv.w1, hv.b1));
  return tp.add(e, tp.linear(h, hv.w2, hv.b2));
}

}  // namespace diec
