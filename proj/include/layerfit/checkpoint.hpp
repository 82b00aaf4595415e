#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "layerfit/error.hpp"
#include "layerfit/nn.hpp"

namespace layerfit {

// Flat binary checkpoint: magic "LFT1", version u32, then one record per
// tensor sorted by id: id length u32, id bytes, rank u32, dims u32 each,
// f64 data. All integers and doubles little-endian.

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  buf.append(b, 4);
}

inline void put_f64(std::string& buf, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf.append(b, 8);
}

struct ByteReader {
  const unsigned char* p;
  size_t n;
  size_t off = 0;

  void need(size_t k, const std::string& what) {
    if (off + k > n)
      throw CheckpointError("truncated checkpoint while reading " + what);
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = static_cast<uint32_t>(p[off]) |
                 (static_cast<uint32_t>(p[off + 1]) << 8) |
                 (static_cast<uint32_t>(p[off + 2]) << 16) |
                 (static_cast<uint32_t>(p[off + 3]) << 24);
    off += 4;
    return v;
  }
  double f64(const std::string& what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(size_t k, const std::string& what) {
    need(k, what);
    std::string s(reinterpret_cast<const char*>(p + off), k);
    off += k;
    return s;
  }
  bool done() const { return off == n; }
};

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::map<std::string, Tensor>& tensors) {
  std::string buf;
  buf.append("LFT1", 4);
  detail::put_u32(buf, kCheckpointVersion);
  for (const auto& [id, t] : tensors) {  // std::map iterates sorted by id
    detail::put_u32(buf, static_cast<uint32_t>(id.size()));
    buf.append(id);
    detail::put_u32(buf, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::put_u32(buf, static_cast<uint32_t>(d));
    for (double v : t.data()) detail::put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const ParamStore& params) {
  save_checkpoint(path, params.entries());
}

inline std::map<std::string, Tensor> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  detail::ByteReader rd{reinterpret_cast<const unsigned char*>(raw.data()),
                        raw.size()};
  if (rd.bytes(4, "magic") != "LFT1")
    throw CheckpointError("bad checkpoint magic in " + path.string());
  uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  std::map<std::string, Tensor> out;
  while (!rd.done()) {
    uint32_t idlen = rd.u32("id length");
    std::string id = rd.bytes(idlen, "id");
    uint32_t rank = rd.u32("rank of " + id);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i)
      shape[i] = static_cast<int>(rd.u32("dims of " + id));
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) data[i] = rd.f64("data of " + id);
    if (out.count(id)) throw CheckpointError("duplicate tensor id: " + id);
    out.emplace(id, Tensor::from(std::move(shape), std::move(data)));
  }
  return out;
}

// Copies checkpoint values into an already-constructed parameter set.
inline void restore_params(ParamStore& params,
                           const std::map<std::string, Tensor>& loaded) {
  for (const auto& [id, p] : params.entries()) {
    auto it = loaded.find(id);
    if (it == loaded.end())
      throw CheckpointError("checkpoint is missing parameter '" + id + "'");
    if (it->second.shape() != p.shape())
      throw CheckpointError("checkpoint shape mismatch for '" + id + "': " +
                            shape_str(it->second.shape()) + " vs " +
                            shape_str(p.shape()));
    Tensor dst = p;
    std::copy(it->second.data().begin(), it->second.data().end(),
              dst.data().begin());
  }
}

// FNV-1a over the file bytes; recorded in run manifests.
inline std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open file for hashing: " + path.string());
  uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace layerfit
