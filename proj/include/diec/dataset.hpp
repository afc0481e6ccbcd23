#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "diec/errors.hpp"
#include "diec/rng.hpp"
#include "diec/tensor.hpp"

namespace diec {

enum class DatasetKind { SHAPES, GAUSSIAN_DIGITS, IDX_PAIR };

inline const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::SHAPES: return "synthetic-shapes";
    case DatasetKind::GAUSSIAN_DIGITS: return "synthetic-gaussian-digits";
    case DatasetKind::IDX_PAIR: return "idx-pair";
  }
  throw param_error("dataset_kind_name: bad kind");
}

inline DatasetKind dataset_kind_from_name(const std::string& s) {
  if (s == "synthetic-shapes") return DatasetKind::SHAPES;
  if (s == "synthetic-gaussian-digits") return DatasetKind::GAUSSIAN_DIGITS;
  if (s == "idx-pair") return DatasetKind::IDX_PAIR;
  throw param_error("unknown dataset kind: " + s);
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SHAPES;
  int image_size = 16;
  int classes = 4;
  int per_class = 128;
  uint64_t seed = 1;
  double noise = 0.35;                  // pixel noise amplitude, signed units
  double shape_jitter = 0.0;            // per-sample size/brightness variation
  std::string normalization = "signed"; // [-1, 1]
  std::string idx_images, idx_labels;   // only for idx-pair

  void validate() const {
    if (kind == DatasetKind::IDX_PAIR) {
      if (idx_images.empty() || idx_labels.empty())
        throw param_error("dataset: idx-pair needs image and label paths");
    } else {
      if (image_size < 8) throw param_error("dataset: image size must be >= 8");
      if (classes < 1 || classes > 8) throw param_error("dataset: classes must be in [1, 8]");
      if (per_class < 0) throw param_error("dataset: samples per class must be >= 0");
      if (noise < 0.0) throw param_error("dataset: noise amplitude must be >= 0");
      if (shape_jitter < 0.0 || shape_jitter > 0.5)
        throw param_error("dataset: shape jitter must be in [0, 0.5]");
    }
    if (normalization != "signed")
      throw param_error("dataset: unsupported normalization: " + normalization);
  }
};

struct Dataset {
  Tensorf images;  // N x 1 x S x S in [-1, 1]
  std::vector<uint32_t> labels;
};

namespace detail {

// Discrete placement grid shared by both synthetic kinds: with zero pixel
// noise, images of one class coincide up to these offsets.
inline int placement_range(int S) { return std::max(1, S / 8); }

inline void render_shape(float* img, int S, int cls, int dy, int dx, double scale = 1.0) {
  const int type = cls % 4;
  const double grow = 1.0 + 0.45 * (cls / 4);
  const double cy = S / 2.0 - 0.5 + dy, cx = S / 2.0 - 0.5 + dx;
  const double u = S / 16.0 * scale;  // scale relative to the 16x16 default
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double ry = y - cy, rx = x - cx;
      bool on = false;
      if (type == 0) {  // horizontal bar
        on = std::abs(ry) <= 1.0 * u * grow && std::abs(rx) <= 5.0 * u * grow;
      } else if (type == 1) {  // vertical bar
        on = std::abs(rx) <= 1.0 * u * grow && std::abs(ry) <= 5.0 * u * grow;
      } else {
        double r = std::sqrt(ry * ry + rx * rx);
        if (type == 2) on = r <= 3.5 * u * grow;                       // blob
        else on = r >= 2.2 * u * grow && r <= 4.2 * u * grow;          // ring
      }
      if (on) img[y * S + x] = 1.0f;
    }
}

inline void render_digit(float* img, int S, int cls, int dy, int dx, double scale = 1.0) {
  // Dice-face anchor layouts, one per class.
  static const std::vector<std::vector<std::pair<double, double>>> faces = {
      {{0.5, 0.5}},
      {{0.3, 0.3}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.5, 0.5}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.3, 0.7}, {0.7, 0.3}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.3, 0.7}, {0.5, 0.5}, {0.7, 0.3}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.3, 0.7}, {0.5, 0.3}, {0.5, 0.7}, {0.7, 0.3}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.3, 0.7}, {0.5, 0.3}, {0.5, 0.5}, {0.5, 0.7}, {0.7, 0.3}, {0.7, 0.7}},
      {{0.3, 0.3}, {0.3, 0.5}, {0.3, 0.7}, {0.5, 0.3}, {0.5, 0.7}, {0.7, 0.3}, {0.7, 0.5},
       {0.7, 0.7}},
  };
  const auto& anchors = faces[cls % faces.size()];
  const double sigma = S / 10.0;
  for (const auto& [ay, ax] : anchors) {
    const double cy = ay * (S - 1) + dy, cx = ax * (S - 1) + dx;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        double v = img[y * S + x] + std::exp(-d2 / (2.0 * sigma * sigma));
        img[y * S + x] = static_cast<float>(std::min(1.0, v));
      }
  }
}

}  // namespace detail

inline Dataset generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind == DatasetKind::IDX_PAIR)
    throw param_error("generate_synthetic: idx-pair is loaded, not generated");
  const int S = spec.image_size;
  const size_t N = static_cast<size_t>(spec.classes) * spec.per_class;
  Dataset ds;
  ds.images = Tensorf({static_cast<uint32_t>(N), 1, static_cast<uint32_t>(S),
                       static_cast<uint32_t>(S)});
  ds.labels.resize(N);
  if (N == 0) return ds;

  Rng rng(spec.seed);
  const int pr = detail::placement_range(S);
  std::vector<float> canvas(static_cast<size_t>(S) * S);
  size_t row = 0;
  for (int c = 0; c < spec.classes; ++c)
    for (int i = 0; i < spec.per_class; ++i, ++row) {
      std::fill(canvas.begin(), canvas.end(), 0.0f);
      int dy = static_cast<int>(rng.uniform_int(-pr, pr));
      int dx = static_cast<int>(rng.uniform_int(-pr, pr));
      if (spec.kind == DatasetKind::SHAPES)
        detail::render_shape(canvas.data(), S, c, dy, dx);
      else
        detail::render_digit(canvas.data(), S, c, dy, dx);
      float* dst = ds.images.data() + row * canvas.size();
      for (size_t p = 0; p < canvas.size(); ++p) {
        double v = 2.0 * canvas[p] - 1.0;  // [0,1] -> signed
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        dst[p] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
      ds.labels[row] = static_cast<uint32_t>(c);
    }

  // Deterministic shuffle so class blocks do not line up with batches.
  std::vector<uint32_t> perm = rng.substream(rng_tag("shuffle")).permutation(
      static_cast<uint32_t>(N));
  Dataset out;
  out.images = Tensorf(ds.images.shape());
  out.labels.resize(N);
  const size_t px = canvas.size();
  for (size_t i = 0; i < N; ++i) {
    std::copy(ds.images.data() + perm[i] * px, ds.images.data() + (perm[i] + 1) * px,
              out.images.data() + i * px);
    out.labels[i] = ds.labels[perm[i]];
  }
  return out;
}

// ---- IDX ingestion (big-endian, the classic MNIST container) ----

namespace detail {

inline uint32_t get_u32_be(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::string ib = detail::read_file(images_path);
  std::string lb = detail::read_file(labels_path);
  const auto* ip = reinterpret_cast<const unsigned char*>(ib.data());
  const auto* lp = reinterpret_cast<const unsigned char*>(lb.data());

  if (ib.size() < 16) throw data_error("idx: image file truncated header");
  if (detail::get_u32_be(ip) != 0x00000803u) throw data_error("idx: bad image magic");
  const size_t n = detail::get_u32_be(ip + 4);
  const size_t rows = detail::get_u32_be(ip + 8);
  const size_t cols = detail::get_u32_be(ip + 12);
  if (ib.size() != 16 + n * rows * cols) throw data_error("idx: image payload size mismatch");

  if (lb.size() < 8) throw data_error("idx: label file truncated header");
  if (detail::get_u32_be(lp) != 0x00000801u) throw data_error("idx: bad label magic");
  const size_t ln = detail::get_u32_be(lp + 4);
  if (lb.size() != 8 + ln) throw data_error("idx: label payload size mismatch");
  if (ln != n) throw data_error("idx: image/label count mismatch");

  Dataset ds;
  ds.images = Tensorf({static_cast<uint32_t>(n), 1, static_cast<uint32_t>(rows),
                       static_cast<uint32_t>(cols)});
  ds.labels.resize(n);
  for (size_t i = 0; i < n * rows * cols; ++i)
    ds.images[i] = static_cast<float>(ip[16 + i] / 255.0 * 2.0 - 1.0);
  for (size_t i = 0; i < n; ++i) ds.labels[i] = lp[8 + i];
  return ds;
}

// Center-pad (with background -1) or center-crop each image to S x S.
inline Tensorf resize_center(const Tensorf& images, int S) {
  if (images.rank() != 4) throw shape_error("resize_center: expects NCHW");
  const size_t N = images.dim(0), C = images.dim(1);
  const int H = static_cast<int>(images.dim(2)), W = static_cast<int>(images.dim(3));
  if (H == S && W == S) return images;
  Tensorf out({static_cast<uint32_t>(N), static_cast<uint32_t>(C), static_cast<uint32_t>(S),
               static_cast<uint32_t>(S)},
              -1.0f);
  const int oy = (S - H) / 2, ox = (S - W) / 2;
  for (size_t n = 0; n < N; ++n)
    for (size_t c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        int ty = y + oy;
        if (ty < 0 || ty >= S) continue;
        for (int x = 0; x < W; ++x) {
          int tx = x + ox;
          if (tx < 0 || tx >= S) continue;
          out.data()[((n * C + c) * S + ty) * S + tx] =
              images.data()[((n * C + c) * H + y) * W + x];
        }
      }
  return out;
}

inline std::vector<size_t> label_histogram(const std::vector<uint32_t>& labels, int K) {
  std::vector<size_t> h(K, 0);
  for (uint32_t l : labels) {
    if (l >= static_cast<uint32_t>(K)) throw data_error("label_histogram: label out of range");
    ++h[l];
  }
  return h;
}

}  // namespace diec
