#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "flsmap/param_store.hpp"

namespace flsmap {

// Checkpoint layout: 8-byte magic, u32 version, length-prefixed config text,
// u32 block count, then per block: length-prefixed name, u32 rows, u32 cols,
// rows*cols float32 little-endian values (column-major).
inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'S', 'M', 'A', 'P', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<char*>(&v), 4);
}
inline uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const ParamStore<S>& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 8);
  detail::put_u32(f, kCheckpointVersion);
  detail::put_u32(f, uint32_t(config_text.size()));
  f.write(config_text.data(), std::streamsize(config_text.size()));
  detail::put_u32(f, uint32_t(store.blocks().size()));
  std::vector<float> buf;
  for (const auto& b : store.blocks()) {
    detail::put_u32(f, uint32_t(b.name.size()));
    f.write(b.name.data(), std::streamsize(b.name.size()));
    detail::put_u32(f, uint32_t(b.value->rows()));
    detail::put_u32(f, uint32_t(b.value->cols()));
    buf.resize(size_t(b.value->size()));
    for (Eigen::Index i = 0; i < b.value->size(); ++i)
      buf[size_t(i)] = float(b.value->data()[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

/// Read just the embedded config text.
inline std::string load_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint32_t version = detail::get_u32(f);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  const uint32_t len = detail::get_u32(f);
  std::string text(len, '\0');
  f.read(text.data(), len);
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return text;
}

/// Fill an already-built store (matching block names and shapes) with values.
template <typename S>
void load_checkpoint_params(const std::string& path, ParamStore<S>& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  f.seekg(8 + 4);
  const uint32_t cfg_len = detail::get_u32(f);
  f.seekg(cfg_len, std::ios::cur);
  const uint32_t n_blocks = detail::get_u32(f);
  std::vector<float> buf;
  for (uint32_t i = 0; i < n_blocks; ++i) {
    const uint32_t name_len = detail::get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rows = detail::get_u32(f);
    const uint32_t cols = detail::get_u32(f);
    buf.resize(size_t(rows) * cols);
    f.read(reinterpret_cast<char*>(buf.data()),
           std::streamsize(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    bool matched = false;
    for (auto& b : store.blocks()) {
      if (b.name != name) continue;
      if (uint32_t(b.value->rows()) != rows || uint32_t(b.value->cols()) != cols)
        throw std::runtime_error("checkpoint block shape mismatch: " + name);
      for (Eigen::Index k = 0; k < b.value->size(); ++k)
        b.value->data()[k] = S(buf[size_t(k)]);
      matched = true;
      break;
    }
    if (!matched)
      throw std::runtime_error("checkpoint block not present in model: " + name);
  }
}

}  // namespace flsmap
