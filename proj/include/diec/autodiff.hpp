#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

// Reverse-mode tape. Nodes are appended in execution order; backward() runs
// the recorded closures in reverse. One tape per training step, then discard.
// Gradients live next to values and start zeroed, so closures only += into
// them. When grad recording is off the ops still compute values but record
// nothing (used for feature extraction and eval).

struct Var {
  uint32_t i = UINT32_MAX;
  bool valid() const { return i != UINT32_MAX; }
};

template <typename T = float>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_on_(grad_enabled) {}

  bool grad_enabled() const { return grad_on_; }

  const Tensor<T>& val(Var v) const { return nodes_[v.i].val; }
  Tensor<T>& val(Var v) { return nodes_[v.i].val; }
  const Tensor<T>& grad(Var v) const { return nodes_[v.i].grad; }
  bool requires_grad(Var v) const { return nodes_[v.i].rg; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor<T> value, bool needs_grad) {
    return push(std::move(value), grad_on_ && needs_grad);
  }
  Var constant(Tensor<T> value) { return push(std::move(value), false); }

  void backward(Var loss) {
    if (!grad_on_) throw param_error("backward: tape recorded without gradients");
    if (nodes_[loss.i].val.numel() != 1) throw shape_error("backward: loss must be scalar");
    if (nodes_[loss.i].rg) nodes_[loss.i].grad[0] = T(1);
    for (size_t s = closures_.size(); s-- > 0;) closures_[s]();
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const Tensor<T>&A = nodes_[a.i].val, &B = nodes_[b.i].val;
    if (A.shape() != B.shape()) throw shape_error("add: shape mismatch");
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] + B[i];
    Var y = push(std::move(out), nodes_[a.i].rg || nodes_[b.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, b, y] {
        const Tensor<T>& g = nodes_[y.i].grad;
        if (nodes_[a.i].rg)
          for (size_t i = 0; i < g.numel(); ++i) nodes_[a.i].grad[i] += g[i];
        if (nodes_[b.i].rg)
          for (size_t i = 0; i < g.numel(); ++i) nodes_[b.i].grad[i] += g[i];
      });
    return y;
  }

  Var scale(Var a, double c) {
    const Tensor<T>& A = nodes_[a.i].val;
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = static_cast<T>(A[i] * c);
    Var y = push(std::move(out), nodes_[a.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, y, c] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t i = 0; i < g.numel(); ++i) nodes_[a.i].grad[i] += static_cast<T>(g[i] * c);
      });
    return y;
  }

  Var mul(Var a, Var b) {
    const Tensor<T>&A = nodes_[a.i].val, &B = nodes_[b.i].val;
    if (A.shape() != B.shape()) throw shape_error("mul: shape mismatch");
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
    Var y = push(std::move(out), nodes_[a.i].rg || nodes_[b.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, b, y] {
        const Tensor<T>& g = nodes_[y.i].grad;
        if (nodes_[a.i].rg)
          for (size_t i = 0; i < g.numel(); ++i)
            nodes_[a.i].grad[i] += g[i] * nodes_[b.i].val[i];
        if (nodes_[b.i].rg)
          for (size_t i = 0; i < g.numel(); ++i)
            nodes_[b.i].grad[i] += g[i] * nodes_[a.i].val[i];
      });
    return y;
  }

  Var relu(Var a) {
    const Tensor<T>& A = nodes_[a.i].val;
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] > T(0) ? A[i] : T(0);
    Var y = push(std::move(out), nodes_[a.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, y] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t i = 0; i < g.numel(); ++i)
          if (nodes_[a.i].val[i] > T(0)) nodes_[a.i].grad[i] += g[i];
      });
    return y;
  }

  Var silu(Var a) {
    const Tensor<T>& A = nodes_[a.i].val;
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) {
      double x = A[i];
      out[i] = static_cast<T>(x / (1.0 + std::exp(-x)));
    }
    Var y = push(std::move(out), nodes_[a.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, y] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t i = 0; i < g.numel(); ++i) {
          double x = nodes_[a.i].val[i];
          double s = 1.0 / (1.0 + std::exp(-x));
          nodes_[a.i].grad[i] += static_cast<T>(g[i] * (s * (1.0 + x * (1.0 - s))));
        }
      });
    return y;
  }

  // ---- dense layers ----

  // x: [N, Din], W: [Dout, Din], b: [Dout] -> [N, Dout]
  Var linear(Var x, Var w, Var b) {
    const Tensor<T>&X = nodes_[x.i].val, &W = nodes_[w.i].val, &B = nodes_[b.i].val;
    if (X.rank() != 2 || W.rank() != 2 || B.rank() != 1 || X.dim(1) != W.dim(1) ||
        B.dim(0) != W.dim(0))
      throw shape_error("linear: shape mismatch");
    const size_t N = X.dim(0), Din = X.dim(1), Dout = W.dim(0);
    Tensor<T> out({static_cast<uint32_t>(N), static_cast<uint32_t>(Dout)});
    for (size_t n = 0; n < N; ++n)
      for (size_t o = 0; o < Dout; ++o) {
        T s = B[o];
        const T* xr = X.data() + n * Din;
        const T* wr = W.data() + o * Din;
        for (size_t i = 0; i < Din; ++i) s += xr[i] * wr[i];
        out.at2(n, o) = s;
      }
    Var y = push(std::move(out), nodes_[x.i].rg || nodes_[w.i].rg || nodes_[b.i].rg);
    if (nodes_[y.i].rg)
      record([this, x, w, b, y, N, Din, Dout] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>&X = nodes_[x.i].val, &W = nodes_[w.i].val;
        if (nodes_[x.i].rg)
          for (size_t n = 0; n < N; ++n)
            for (size_t o = 0; o < Dout; ++o) {
              T go = g.at2(n, o);
              T* xg = nodes_[x.i].grad.data() + n * Din;
              const T* wr = W.data() + o * Din;
              for (size_t i = 0; i < Din; ++i) xg[i] += go * wr[i];
            }
        if (nodes_[w.i].rg)
          for (size_t n = 0; n < N; ++n)
            for (size_t o = 0; o < Dout; ++o) {
              T go = g.at2(n, o);
              T* wg = nodes_[w.i].grad.data() + o * Din;
              const T* xr = X.data() + n * Din;
              for (size_t i = 0; i < Din; ++i) wg[i] += go * xr[i];
            }
        if (nodes_[b.i].rg)
          for (size_t n = 0; n < N; ++n)
            for (size_t o = 0; o < Dout; ++o) nodes_[b.i].grad[o] += g.at2(n, o);
      });
    return y;
  }

  // 3x3 convolution, padding 1, stride 1 or 2. x: [N,C,H,W], w: [O,C,3,3], b: [O].
  Var conv2d(Var x, Var w, Var b, int stride) {
    const Tensor<T>&X = nodes_[x.i].val, &W = nodes_[w.i].val, &B = nodes_[b.i].val;
    if (X.rank() != 4 || W.rank() != 4 || W.dim(2) != 3 || W.dim(3) != 3)
      throw shape_error("conv2d: expects NCHW input and Ox C x3x3 kernel");
    if (X.dim(1) != W.dim(1) || B.dim(0) != W.dim(0)) throw shape_error("conv2d: channel mismatch");
    if (stride != 1 && stride != 2) throw param_error("conv2d: stride must be 1 or 2");
    const size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3), O = W.dim(0);
    const size_t Ho = (H - 1) / stride + 1, Wo = (Wd - 1) / stride + 1;
    Tensor<T> out({static_cast<uint32_t>(N), static_cast<uint32_t>(O),
                   static_cast<uint32_t>(Ho), static_cast<uint32_t>(Wo)});
    for (size_t n = 0; n < N; ++n)
      for (size_t o = 0; o < O; ++o) {
        T* op = out.data() + ((n * O + o) * Ho) * Wo;
        for (size_t i = 0; i < Ho * Wo; ++i) op[i] = B[o];
        for (size_t c = 0; c < C; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              T wv = W[((o * C + c) * 3 + ky) * 3 + kx];
              const T* ip = X.data() + ((n * C + c) * H) * Wd;
              for (size_t oy = 0; oy < Ho; ++oy) {
                long iy = static_cast<long>(oy) * stride + ky - 1;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                const T* irow = ip + iy * Wd;
                T* orow = op + oy * Wo;
                for (size_t ox = 0; ox < Wo; ++ox) {
                  long ix = static_cast<long>(ox) * stride + kx - 1;
                  if (ix < 0 || ix >= static_cast<long>(Wd)) continue;
                  orow[ox] += wv * irow[ix];
                }
              }
            }
      }
    Var y = push(std::move(out), nodes_[x.i].rg || nodes_[w.i].rg || nodes_[b.i].rg);
    if (nodes_[y.i].rg)
      record([this, x, w, b, y, N, C, H, Wd, O, Ho, Wo, stride] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>&X = nodes_[x.i].val, &W = nodes_[w.i].val;
        for (size_t n = 0; n < N; ++n)
          for (size_t o = 0; o < O; ++o) {
            const T* gp = g.data() + ((n * O + o) * Ho) * Wo;
            if (nodes_[b.i].rg) {
              T s = T(0);
              for (size_t i = 0; i < Ho * Wo; ++i) s += gp[i];
              nodes_[b.i].grad[o] += s;
            }
            for (size_t c = 0; c < C; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  size_t widx = ((o * C + c) * 3 + ky) * 3 + kx;
                  T wv = W[widx];
                  T wg = T(0);
                  const T* ip = X.data() + ((n * C + c) * H) * Wd;
                  T* ig = nodes_[x.i].rg ? nodes_[x.i].grad.data() + ((n * C + c) * H) * Wd
                                         : nullptr;
                  for (size_t oy = 0; oy < Ho; ++oy) {
                    long iy = static_cast<long>(oy) * stride + ky - 1;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    const T* grow = gp + oy * Wo;
                    for (size_t ox = 0; ox < Wo; ++ox) {
                      long ix = static_cast<long>(ox) * stride + kx - 1;
                      if (ix < 0 || ix >= static_cast<long>(Wd)) continue;
                      wg += grow[ox] * ip[iy * Wd + ix];
                      if (ig) ig[iy * Wd + ix] += grow[ox] * wv;
                    }
                  }
                  if (nodes_[w.i].rg) nodes_[w.i].grad[widx] += wg;
                }
          }
      });
    return y;
  }

  // Group normalization without affine terms (FiLM supplies the modulation).
  Var groupnorm(Var x, int groups, double eps = 1e-5) {
    const Tensor<T>& X = nodes_[x.i].val;
    if (X.rank() != 4) throw shape_error("groupnorm: expects NCHW");
    const size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    if (groups < 1 || C % static_cast<size_t>(groups) != 0)
      throw param_error("groupnorm: groups must divide channels");
    const size_t G = groups, cg = C / G, M = cg * H * Wd;
    Tensor<T> out(X.shape());
    // Keep the per-group statistics for backward.
    auto mu = std::make_shared<std::vector<double>>(N * G);
    auto istd = std::make_shared<std::vector<double>>(N * G);
    for (size_t n = 0; n < N; ++n)
      for (size_t gi = 0; gi < G; ++gi) {
        const T* base = X.data() + (n * C + gi * cg) * H * Wd;
        double s = 0.0;
        for (size_t i = 0; i < M; ++i) s += base[i];
        double m = s / static_cast<double>(M);
        double v = 0.0;
        for (size_t i = 0; i < M; ++i) {
          double d = base[i] - m;
          v += d * d;
        }
        v /= static_cast<double>(M);
        double is = 1.0 / std::sqrt(v + eps);
        (*mu)[n * G + gi] = m;
        (*istd)[n * G + gi] = is;
        T* ob = out.data() + (n * C + gi * cg) * H * Wd;
        for (size_t i = 0; i < M; ++i) ob[i] = static_cast<T>((base[i] - m) * is);
      }
    Var y = push(std::move(out), nodes_[x.i].rg);
    if (nodes_[y.i].rg)
      record([this, x, y, N, C, G, cg, H, Wd, M, mu, istd] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>& Y = nodes_[y.i].val;
        for (size_t n = 0; n < N; ++n)
          for (size_t gi = 0; gi < G; ++gi) {
            const T* gb = g.data() + (n * C + gi * cg) * H * Wd;
            const T* yb = Y.data() + (n * C + gi * cg) * H * Wd;
            T* xg = nodes_[x.i].grad.data() + (n * C + gi * cg) * H * Wd;
            double sg = 0.0, sgy = 0.0;
            for (size_t i = 0; i < M; ++i) {
              sg += gb[i];
              sgy += static_cast<double>(gb[i]) * yb[i];
            }
            double mg = sg / static_cast<double>(M);
            double mgy = sgy / static_cast<double>(M);
            double is = (*istd)[n * G + gi];
            for (size_t i = 0; i < M; ++i)
              xg[i] += static_cast<T>(is * (gb[i] - mg - yb[i] * mgy));
          }
      });
    return y;
  }

  // FiLM modulation: y = h * (1 + gamma) + beta, gamma/beta per (sample,
  // channel) packed as gb[:, 0:C] = gamma, gb[:, C:2C] = beta.
  Var film(Var h, Var gb) {
    const Tensor<T>&Hh = nodes_[h.i].val, &Gb = nodes_[gb.i].val;
    if (Hh.rank() != 4 || Gb.rank() != 2) throw shape_error("film: expects NCHW and [N,2C]");
    const size_t N = Hh.dim(0), C = Hh.dim(1), HW = Hh.dim(2) * Hh.dim(3);
    if (Gb.dim(0) != N || Gb.dim(1) != 2 * C) throw shape_error("film: modulation shape mismatch");
    Tensor<T> out(Hh.shape());
    for (size_t n = 0; n < N; ++n)
      for (size_t c = 0; c < C; ++c) {
        T ga = Gb.at2(n, c), be = Gb.at2(n, C + c);
        const T* hp = Hh.data() + (n * C + c) * HW;
        T* op = out.data() + (n * C + c) * HW;
        for (size_t i = 0; i < HW; ++i) op[i] = hp[i] * (T(1) + ga) + be;
      }
    Var y = push(std::move(out), nodes_[h.i].rg || nodes_[gb.i].rg);
    if (nodes_[y.i].rg)
      record([this, h, gb, y, N, C, HW] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>&Hh = nodes_[h.i].val, &Gb = nodes_[gb.i].val;
        for (size_t n = 0; n < N; ++n)
          for (size_t c = 0; c < C; ++c) {
            const T* gp = g.data() + (n * C + c) * HW;
            if (nodes_[h.i].rg) {
              T ga = Gb.at2(n, c);
              T* hg = nodes_[h.i].grad.data() + (n * C + c) * HW;
              for (size_t i = 0; i < HW; ++i) hg[i] += gp[i] * (T(1) + ga);
            }
            if (nodes_[gb.i].rg) {
              const T* hp = Hh.data() + (n * C + c) * HW;
              T sg = T(0), sgh = T(0);
              for (size_t i = 0; i < HW; ++i) {
                sg += gp[i];
                sgh += gp[i] * hp[i];
              }
              nodes_[gb.i].grad.at2(n, c) += sgh;
              nodes_[gb.i].grad.at2(n, C + c) += sg;
            }
          }
      });
    return y;
  }

  // Nearest-neighbor 2x upsample cropped (top-left) to the target size.
  Var upsample2x_crop(Var x, uint32_t Ht, uint32_t Wt) {
    const Tensor<T>& X = nodes_[x.i].val;
    if (X.rank() != 4) throw shape_error("upsample2x_crop: expects NCHW");
    const size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    if (Ht > 2 * H || Wt > 2 * Wd) throw shape_error("upsample2x_crop: target exceeds 2x");
    Tensor<T> out({static_cast<uint32_t>(N), static_cast<uint32_t>(C), Ht, Wt});
    for (size_t n = 0; n < N; ++n)
      for (size_t c = 0; c < C; ++c) {
        const T* ip = X.data() + (n * C + c) * H * Wd;
        T* op = out.data() + (n * C + c) * Ht * Wt;
        for (size_t yy = 0; yy < Ht; ++yy)
          for (size_t xx = 0; xx < Wt; ++xx) op[yy * Wt + xx] = ip[(yy / 2) * Wd + (xx / 2)];
      }
    Var y = push(std::move(out), nodes_[x.i].rg);
    if (nodes_[y.i].rg)
      record([this, x, y, N, C, H, Wd, Ht, Wt] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t n = 0; n < N; ++n)
          for (size_t c = 0; c < C; ++c) {
            T* ig = nodes_[x.i].grad.data() + (n * C + c) * H * Wd;
            const T* gp = g.data() + (n * C + c) * Ht * Wt;
            for (size_t yy = 0; yy < Ht; ++yy)
              for (size_t xx = 0; xx < Wt; ++xx) ig[(yy / 2) * Wd + (xx / 2)] += gp[yy * Wt + xx];
          }
      });
    return y;
  }

  Var concat_channels(Var a, Var b) {
    const Tensor<T>&A = nodes_[a.i].val, &B = nodes_[b.i].val;
    if (A.rank() != 4 || B.rank() != 4 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2) ||
        A.dim(3) != B.dim(3))
      throw shape_error("concat_channels: incompatible shapes");
    const size_t N = A.dim(0), Ca = A.dim(1), Cb = B.dim(1), HW = A.dim(2) * A.dim(3);
    Tensor<T> out({static_cast<uint32_t>(N), static_cast<uint32_t>(Ca + Cb), A.dim(2), A.dim(3)});
    for (size_t n = 0; n < N; ++n) {
      std::copy(A.data() + n * Ca * HW, A.data() + (n + 1) * Ca * HW,
                out.data() + n * (Ca + Cb) * HW);
      std::copy(B.data() + n * Cb * HW, B.data() + (n + 1) * Cb * HW,
                out.data() + (n * (Ca + Cb) + Ca) * HW);
    }
    Var y = push(std::move(out), nodes_[a.i].rg || nodes_[b.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, b, y, N, Ca, Cb, HW] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t n = 0; n < N; ++n) {
          if (nodes_[a.i].rg) {
            T* ag = nodes_[a.i].grad.data() + n * Ca * HW;
            const T* gp = g.data() + n * (Ca + Cb) * HW;
            for (size_t i = 0; i < Ca * HW; ++i) ag[i] += gp[i];
          }
          if (nodes_[b.i].rg) {
            T* bg = nodes_[b.i].grad.data() + n * Cb * HW;
            const T* gp = g.data() + (n * (Ca + Cb) + Ca) * HW;
            for (size_t i = 0; i < Cb * HW; ++i) bg[i] += gp[i];
          }
        }
      });
    return y;
  }

  // Global average pool over spatial dims: [N,C,H,W] -> [N,C].
  Var avgpool_spatial(Var x) {
    const Tensor<T>& X = nodes_[x.i].val;
    if (X.rank() != 4) throw shape_error("avgpool_spatial: expects NCHW");
    const size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    Tensor<T> out({X.dim(0), X.dim(1)});
    for (size_t n = 0; n < N; ++n)
      for (size_t c = 0; c < C; ++c) {
        const T* p = X.data() + (n * C + c) * HW;
        double s = 0.0;
        for (size_t i = 0; i < HW; ++i) s += p[i];
        out.at2(n, c) = static_cast<T>(s / static_cast<double>(HW));
      }
    Var y = push(std::move(out), nodes_[x.i].rg);
    if (nodes_[y.i].rg)
      record([this, x, y, N, C, HW] {
        const Tensor<T>& g = nodes_[y.i].grad;
        for (size_t n = 0; n < N; ++n)
          for (size_t c = 0; c < C; ++c) {
            T gv = static_cast<T>(g.at2(n, c) / static_cast<double>(HW));
            T* xg = nodes_[x.i].grad.data() + (n * C + c) * HW;
            for (size_t i = 0; i < HW; ++i) xg[i] += gv;
          }
      });
    return y;
  }

  // ---- losses ----

  // Mean squared error against a constant target, averaged over all elements.
  Var mse(Var pred, const Tensor<T>& target) {
    const Tensor<T>& P = nodes_[pred.i].val;
    if (P.shape() != target.shape()) throw shape_error("mse: shape mismatch");
    const size_t M = P.numel();
    double s = 0.0;
    for (size_t i = 0; i < M; ++i) {
      double d = static_cast<double>(P[i]) - target[i];
      s += d * d;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(s / static_cast<double>(M));
    Var tgt = constant(target);
    Var y = push(std::move(out), nodes_[pred.i].rg);
    if (nodes_[y.i].rg)
      record([this, pred, tgt, y, M] {
        T g = nodes_[y.i].grad[0];
        const Tensor<T>&P = nodes_[pred.i].val, &Tt = nodes_[tgt.i].val;
        double c = 2.0 / static_cast<double>(M);
        for (size_t i = 0; i < M; ++i)
          nodes_[pred.i].grad[i] += static_cast<T>(g * c * (static_cast<double>(P[i]) - Tt[i]));
      });
    return y;
  }

  // Pairwise squared distances: z [N,D], mu [K,D] -> [N,K].
  Var sqdist(Var z, Var mu) {
    const Tensor<T>&Z = nodes_[z.i].val, &Mu = nodes_[mu.i].val;
    if (Z.rank() != 2 || Mu.rank() != 2 || Z.dim(1) != Mu.dim(1))
      throw shape_error("sqdist: dimension mismatch");
    const size_t N = Z.dim(0), K = Mu.dim(0), D = Z.dim(1);
    Tensor<T> out({Z.dim(0), Mu.dim(0)});
    for (size_t n = 0; n < N; ++n)
      for (size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (size_t d = 0; d < D; ++d) {
          double diff = static_cast<double>(Z.at2(n, d)) - Mu.at2(k, d);
          s += diff * diff;
        }
        out.at2(n, k) = static_cast<T>(s);
      }
    Var y = push(std::move(out), nodes_[z.i].rg || nodes_[mu.i].rg);
    if (nodes_[y.i].rg)
      record([this, z, mu, y, N, K, D] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>&Z = nodes_[z.i].val, &Mu = nodes_[mu.i].val;
        for (size_t n = 0; n < N; ++n)
          for (size_t k = 0; k < K; ++k) {
            T gv = g.at2(n, k);
            if (gv == T(0)) continue;
            for (size_t d = 0; d < D; ++d) {
              T diff = Z.at2(n, d) - Mu.at2(k, d);
              if (nodes_[z.i].rg) nodes_[z.i].grad.at2(n, d) += gv * T(2) * diff;
              if (nodes_[mu.i].rg) nodes_[mu.i].grad.at2(k, d) -= gv * T(2) * diff;
            }
          }
      });
    return y;
  }

  // Student-t soft assignment from squared distances:
  // q_ik = (1 + d_ik/alpha)^(-(alpha+1)/2), row-normalized.
  Var student_q(Var d, double alpha) {
    if (alpha <= 0.0) throw param_error("student_q: alpha must be positive");
    const Tensor<T>& D = nodes_[d.i].val;
    if (D.rank() != 2) throw shape_error("student_q: expects [N,K]");
    const size_t N = D.dim(0), K = D.dim(1);
    const double expo = -(alpha + 1.0) / 2.0;
    Tensor<T> out(D.shape());
    auto rowsum = std::make_shared<std::vector<double>>(N);
    for (size_t n = 0; n < N; ++n) {
      double s = 0.0;
      for (size_t k = 0; k < K; ++k) {
        double u = std::pow(1.0 + static_cast<double>(D.at2(n, k)) / alpha, expo);
        out.at2(n, k) = static_cast<T>(u);
        s += u;
      }
      (*rowsum)[n] = s;
      for (size_t k = 0; k < K; ++k) out.at2(n, k) = static_cast<T>(out.at2(n, k) / s);
    }
    Var y = push(std::move(out), nodes_[d.i].rg);
    if (nodes_[y.i].rg)
      record([this, d, y, N, K, alpha, expo, rowsum] {
        const Tensor<T>& g = nodes_[y.i].grad;
        const Tensor<T>&Q = nodes_[y.i].val, &D = nodes_[d.i].val;
        for (size_t n = 0; n < N; ++n) {
          double dot = 0.0;
          for (size_t k = 0; k < K; ++k) dot += static_cast<double>(g.at2(n, k)) * Q.at2(n, k);
          for (size_t k = 0; k < K; ++k) {
            // dL/du_k = (g_k - sum_j g_j q_j) / S ; du/dd = u * expo / (alpha + d)
            double u = static_cast<double>(Q.at2(n, k)) * (*rowsum)[n];
            double dLdu = (static_cast<double>(g.at2(n, k)) - dot) / (*rowsum)[n];
            double dudd = u * expo / (alpha + static_cast<double>(D.at2(n, k)));
            nodes_[d.i].grad.at2(n, k) += static_cast<T>(dLdu * dudd);
          }
        }
      });
    return y;
  }

  // KL(P || Q) with constant P, q clipped below at 1e-12: sum_i sum_k p log(p/q).
  Var kl_const_p(const Tensor<T>& P, Var q) {
    const Tensor<T>& Q = nodes_[q.i].val;
    if (P.shape() != Q.shape()) throw shape_error("kl_const_p: shape mismatch");
    const double clip = 1e-12;
    double s = 0.0;
    for (size_t i = 0; i < P.numel(); ++i) {
      double p = P[i];
      if (p <= 0.0) continue;
      double qv = std::max(static_cast<double>(Q[i]), clip);
      s += p * std::log(p / qv);
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(s);
    Var pc = constant(P);
    Var y = push(std::move(out), nodes_[q.i].rg);
    if (nodes_[y.i].rg)
      record([this, pc, q, y, clip] {
        T g = nodes_[y.i].grad[0];
        const Tensor<T>&P = nodes_[pc.i].val, &Q = nodes_[q.i].val;
        for (size_t i = 0; i < P.numel(); ++i) {
          double qv = static_cast<double>(Q[i]);
          if (P[i] <= 0.0 || qv <= clip) continue;
          nodes_[q.i].grad[i] += static_cast<T>(-g * P[i] / qv);
        }
      });
    return y;
  }

  // Graph smoothness against constant neighbor rows:
  // L = sum_p s[p] * || q[row[p], :] - qn[p, :] ||^2.
  Var graph_quad(Var q, const std::vector<uint32_t>& rows, const std::vector<T>& s,
                 const Tensor<T>& qn) {
    const Tensor<T>& Q = nodes_[q.i].val;
    if (Q.rank() != 2 || qn.rank() != 2 || qn.dim(1) != Q.dim(1))
      throw shape_error("graph_quad: shape mismatch");
    if (rows.size() != s.size() || rows.size() != qn.dim(0))
      throw shape_error("graph_quad: pair count mismatch");
    const size_t Pn = rows.size(), K = Q.dim(1);
    double acc = 0.0;
    for (size_t p = 0; p < Pn; ++p) {
      const T* qr = Q.data() + rows[p] * K;
      const T* nr = qn.data() + p * K;
      double d2 = 0.0;
      for (size_t k = 0; k < K; ++k) {
        double d = static_cast<double>(qr[k]) - nr[k];
        d2 += d * d;
      }
      acc += static_cast<double>(s[p]) * d2;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc);
    Var nc = constant(qn);
    Var y = push(std::move(out), nodes_[q.i].rg);
    if (nodes_[y.i].rg) {
      auto rows_c = std::make_shared<std::vector<uint32_t>>(rows);
      auto s_c = std::make_shared<std::vector<T>>(s);
      record([this, q, nc, y, rows_c, s_c, K] {
        T g = nodes_[y.i].grad[0];
        const Tensor<T>&Q = nodes_[q.i].val, &Qn = nodes_[nc.i].val;
        for (size_t p = 0; p < rows_c->size(); ++p) {
          const T* qr = Q.data() + (*rows_c)[p] * K;
          const T* nr = Qn.data() + p * K;
          T* qg = nodes_[q.i].grad.data() + (*rows_c)[p] * K;
          T sw = (*s_c)[p];
          for (size_t k = 0; k < K; ++k) qg[k] += g * sw * T(2) * (qr[k] - nr[k]);
        }
      });
    }
    return y;
  }

  Var sum(Var a) {
    const Tensor<T>& A = nodes_[a.i].val;
    double s = 0.0;
    for (size_t i = 0; i < A.numel(); ++i) s += A[i];
    Tensor<T> out({1});
    out[0] = static_cast<T>(s);
    Var y = push(std::move(out), nodes_[a.i].rg);
    if (nodes_[y.i].rg)
      record([this, a, y] {
        T g = nodes_[y.i].grad[0];
        for (size_t i = 0; i < nodes_[a.i].grad.numel(); ++i) nodes_[a.i].grad[i] += g;
      });
    return y;
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool rg = false;
  };

  Var push(Tensor<T> v, bool rg) {
    Node n;
    n.rg = rg;
    if (rg) n.grad = Tensor<T>(v.shape());
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return Var{static_cast<uint32_t>(nodes_.size() - 1)};
  }

  void record(std::function<void()> fn) {
    if (grad_on_) closures_.push_back(std::move(fn));
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> closures_;
  bool grad_on_;
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

}  // namespace diec
