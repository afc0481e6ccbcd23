#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "diec/errors.hpp"
#include "diec/residual.hpp"
#include "diec/tensor.hpp"
#include "diec/unet.hpp"

namespace diec {

// DCK1 container: "DCK1", u32 version, u32 meta length, canonical JSON
// metadata, u32 record count, records of (u16 name length, name, DTF1 blob).
// All integers little-endian. Record order is preserved, so a write->read->
// write cycle is byte-identical.
struct Checkpoint {
  std::string meta;  // opaque canonical JSON
  std::vector<std::pair<std::string, Tensorf>> records;

  const Tensorf* find(const std::string& name) const {
    for (const auto& [n, t] : records)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32_le_s(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16_le_s(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline uint32_t take_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string checkpoint_encode(const Checkpoint& ck) {
  std::string out;
  out.append("DCK1");
  detail::put_u32_le_s(out, 1u);
  if (ck.meta.size() > 0xffffffffull) throw data_error("checkpoint: metadata too large");
  detail::put_u32_le_s(out, static_cast<uint32_t>(ck.meta.size()));
  out.append(ck.meta);
  detail::put_u32_le_s(out, static_cast<uint32_t>(ck.records.size()));
  for (const auto& [name, t] : ck.records) {
    if (name.size() > 0xffffull) throw data_error("checkpoint: record name too long");
    detail::put_u16_le_s(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    out.append(dtf1_encode(t));
  }
  return out;
}

inline Checkpoint checkpoint_decode(const std::string& buf) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const size_t n = buf.size();
  if (n < 12 || std::memcmp(p, "DCK1", 4) != 0) throw data_error("checkpoint: bad magic");
  const uint32_t version = detail::take_u32_le(p + 4);
  if (version != 1) throw data_error("checkpoint: unsupported version");
  size_t off = 8;
  const uint32_t meta_len = detail::take_u32_le(p + off);
  off += 4;
  if (n < off + meta_len + 4) throw data_error("checkpoint: truncated metadata");
  Checkpoint ck;
  ck.meta.assign(buf, off, meta_len);
  off += meta_len;
  const uint32_t count = detail::take_u32_le(p + off);
  off += 4;
  for (uint32_t r = 0; r < count; ++r) {
    if (n < off + 2) throw data_error("checkpoint: truncated record header");
    const uint16_t name_len = static_cast<uint16_t>(p[off]) |
                              (static_cast<uint16_t>(p[off + 1]) << 8);
    off += 2;
    if (n < off + name_len) throw data_error("checkpoint: truncated record name");
    std::string name(buf, off, name_len);
    off += name_len;
    size_t consumed = 0;
    Tensorf t = dtf1_decode(buf.substr(off), &consumed);
    off += consumed;
    ck.records.emplace_back(std::move(name), std::move(t));
  }
  if (off != n) throw data_error("checkpoint: trailing bytes");
  return ck;
}

inline void checkpoint_save(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for write: " + path);
  std::string buf = checkpoint_encode(ck);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw data_error("checkpoint: write failed: " + path);
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return checkpoint_decode(buf);
}

// ---- model <-> record helpers ----

template <typename T>
void checkpoint_add_model(Checkpoint& ck, UNet<T>& net) {
  net.for_each_param([&](const std::string& name, Tensor<T>& t) {
    ck.records.emplace_back(name, t.template cast<float>());
  });
}

template <typename T>
void checkpoint_add_head(Checkpoint& ck, ResidualHead<T>& head) {
  head.for_each_param([&](const std::string& name, Tensor<T>& t) {
    ck.records.emplace_back(name, t.template cast<float>());
  });
}

template <typename T>
void checkpoint_load_model(const Checkpoint& ck, UNet<T>& net) {
  net.for_each_param([&](const std::string& name, Tensor<T>& t) {
    const Tensorf* rec = ck.find(name);
    if (!rec) throw data_error("checkpoint: missing record " + name);
    if (rec->shape() != t.shape()) throw shape_error("checkpoint: shape mismatch for " + name);
    t = rec->template cast<T>();
  });
}

template <typename T>
void checkpoint_load_head(const Checkpoint& ck, ResidualHead<T>& head) {
  head.for_each_param([&](const std::string& name, Tensor<T>& t) {
    const Tensorf* rec = ck.find(name);
    if (!rec) throw data_error("checkpoint: missing record " + name);
    if (rec->shape() != t.shape()) throw shape_error("checkpoint: shape mismatch for " + name);
    t = rec->template cast<T>();
  });
}

}  // namespace diec
