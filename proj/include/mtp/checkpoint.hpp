#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mtp/model.hpp"

// Unified checkpoint container. Byte layout (all integers little-endian
// uint32, floats little-endian IEEE-754 binary32):
//
//   magic   "MTPC"
//   version u32 (currently 1)
//   meta    u32 length + UTF-8 config echo (flat key=value text, incl. seed)
//   vocab   u32 count, then count strings (u32 length + bytes)
//   tensors u32 count, then per tensor:
//             name  u32 length + bytes (hierarchical, e.g. "ts.layer0.w_real")
//             rank  u32, dims u32 x rank
//             data  f32 x numel, row-major
namespace mtp::checkpoint {

constexpr char kMagic[4] = {'M', 'T', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  const std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace detail

struct Checkpoint {
  std::string meta;  // config echo
  std::vector<std::string> vocab_tokens;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline void save(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  detail::write_u32(out, kVersion);
  detail::write_string(out, ckpt.meta);
  detail::write_u32(out, static_cast<std::uint32_t>(ckpt.vocab_tokens.size()));
  for (const auto& tok : ckpt.vocab_tokens) detail::write_string(out, tok);
  detail::write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::write_string(out, name);
    detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.numel(); ++i) detail::write_f32(out, static_cast<float>(t[i]));
  }
  if (!out) throw std::runtime_error("checkpoint: write failure on " + path);
}

inline Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = detail::read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.meta = detail::read_string(in);
  const auto vocab_count = detail::read_u32(in);
  for (std::uint32_t i = 0; i < vocab_count; ++i) ckpt.vocab_tokens.push_back(detail::read_string(in));
  const auto tensor_count = detail::read_u32(in);
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = detail::read_string(in);
    const auto rank = detail::read_u32(in);
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(detail::read_u32(in)));
    Tensor t(shape);
    for (std::size_t j = 0; j < t.numel(); ++j) t[j] = static_cast<double>(detail::read_f32(in));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

inline Checkpoint from_model(const model::Model& mdl, std::string meta,
                             std::vector<std::string> vocab_tokens,
                             const std::vector<std::pair<std::string, Tensor>>& extra = {}) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  ckpt.vocab_tokens = std::move(vocab_tokens);
  for (const auto& e : mdl.params.entries) ckpt.tensors.emplace_back(e.name, e.value);
  for (const auto& kv : extra) ckpt.tensors.push_back(kv);
  return ckpt;
}

// Overwrites matching parameters by hierarchical name.
inline void restore_params(model::Model& mdl, const Checkpoint& ckpt) {
  for (auto& e : mdl.params.entries) {
    bool found = false;
    for (const auto& [name, t] : ckpt.tensors) {
      if (name != e.name) continue;
      require(t.shape() == e.value.shape(),
              "checkpoint: shape mismatch for " + name + " (" + t.shape_str() + " vs " +
                  e.value.shape_str() + ")");
      e.value = t;
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("checkpoint: missing tensor " + e.name);
  }
}

}  // namespace mtp::checkpoint
