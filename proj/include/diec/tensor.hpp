#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "diec/errors.hpp"

namespace diec {

// Dense row-major tensor. The pipeline carries float tensors; double
// instantiations back the gradient-check tests and the scatter/log-det math.
template <typename T = float>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<uint32_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Tensor(std::vector<uint32_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw shape_error("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<uint32_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<uint32_t> shape, T v) { return Tensor(std::move(shape), v); }

  const std::vector<uint32_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  uint32_t dim(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at2(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  const T& at2(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

  // NCHW indexing for rank-4 tensors.
  T& at4(size_t n, size_t c, size_t y, size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at4(size_t n, size_t c, size_t y, size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  Tensor reshaped(std::vector<uint32_t> shape) const {
    if (numel_of(shape) != numel()) throw shape_error("reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  static size_t numel_of(const std::vector<uint32_t>& shape) {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
  }

 private:
  std::vector<uint32_t> shape_;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

namespace detail {

inline void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32_le(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

}  // namespace detail

// DTF1 wire format: "DTF1", u8 rank, rank x u32 little-endian dims,
// then f32 little-endian payload.
inline std::string dtf1_encode(const Tensorf& t) {
  if (t.rank() > 255) throw shape_error("DTF1 rank exceeds u8");
  std::string out;
  out.reserve(5 + 4 * t.rank() + 4 * t.numel());
  out.append("DTF1");
  out.push_back(static_cast<char>(t.rank()));
  for (uint32_t d : t.shape()) detail::put_u32_le(out, d);
  static_assert(sizeof(float) == 4);
  for (float v : t.vec()) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32_le(out, bits);
  }
  return out;
}

inline Tensorf dtf1_decode(const std::string& buf, size_t* consumed = nullptr) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  size_t n = buf.size();
  if (n < 5 || std::memcmp(p, "DTF1", 4) != 0) throw data_error("DTF1: bad magic");
  size_t rank = p[4];
  size_t off = 5;
  if (n < off + 4 * rank) throw data_error("DTF1: truncated header");
  std::vector<uint32_t> shape(rank);
  for (size_t i = 0; i < rank; ++i, off += 4) shape[i] = detail::get_u32_le(p + off);
  size_t count = Tensorf::numel_of(shape);
  if (n < off + 4 * count) throw data_error("DTF1: truncated payload");
  std::vector<float> data(count);
  for (size_t i = 0; i < count; ++i, off += 4) {
    uint32_t bits = detail::get_u32_le(p + off);
    std::memcpy(&data[i], &bits, 4);
  }
  if (consumed) *consumed = off;
  return Tensorf(std::move(shape), std::move(data));
}

inline void dtf1_save(const Tensorf& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for write: " + path);
  std::string buf = dtf1_encode(t);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Tensorf dtf1_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return dtf1_decode(buf);
}

// Stable float formatting shared by every CSV artifact (byte-determinism).
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string tensor_to_csv(const Tensorf& t) {
  std::string out;
  if (t.rank() == 1) {
    for (uint32_t i = 0; i < t.dim(0); ++i) {
      out += format_g17(t[i]);
      out += '\n';
    }
  } else if (t.rank() == 2) {
    for (uint32_t r = 0; r < t.dim(0); ++r) {
      for (uint32_t c = 0; c < t.dim(1); ++c) {
        if (c) out += ',';
        out += format_g17(t.at2(r, c));
      }
      out += '\n';
    }
  } else {
    throw shape_error("CSV emitter supports rank 1 and 2 only");
  }
  return out;
}

}  // namespace diec
