#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2d/core/nn.hpp"
#include "t2d/core/sha256.hpp"
#include "t2d/core/tensor.hpp"

namespace t2d {

// Checkpoint layout: 8-byte magic, u64-LE header length, JSON header, then
// float32-LE tensor payloads in header order.
inline constexpr char kCheckpointMagic[9] = "T2DCKPT1";

struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

namespace detail {

inline void write_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& os, const float* p, int64_t n) {
  static_assert(sizeof(float) == 4);
  // Little-endian host assumed; asserted at configure time for this target.
  os.write(reinterpret_cast<const char*>(p), n * 4);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, Tensor>& tensors,
                            nlohmann::json extra = {}) {
  nlohmann::json header = std::move(extra);
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for write: " + path);
  os.write(kCheckpointMagic, 8);
  const std::string hs = header.dump();
  detail::write_u64_le(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : tensors) detail::write_f32_le(os, t.data(), t.numel());
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint64_t hlen = detail::read_u64_le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  Checkpoint ck;
  ck.header = nlohmann::json::parse(hs);
  for (const auto& e : ck.header.at("tensors")) {
    const std::string name = e.at("name");
    const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), t.numel() * 4);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

// Copies checkpoint tensors into live parameters; every name must match.
inline void apply_checkpoint(const Checkpoint& ck, nn::ParamMap& params,
                             const std::string& prefix = "") {
  for (auto& [name, v] : params) {
    auto it = ck.tensors.find(prefix + name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint missing tensor: " + prefix + name);
    if (!(it->second.shape() == v.val().shape()))
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                               it->second.shape_str() + " vs " + v.val().shape_str());
    v.val() = it->second;
  }
}

inline std::map<std::string, Tensor> snapshot_params(const nn::ParamMap& params) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params) out.emplace(name, v.val());
  return out;
}

inline std::string params_hash(const nn::ParamMap& params) {
  Sha256 h;
  for (const auto& [name, v] : params) {
    h.update(name);
    h.update(v.val().data(), static_cast<size_t>(v.val().numel()) * sizeof(float));
  }
  return h.hex_digest();
}

}  // namespace t2d
