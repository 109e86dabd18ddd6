#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "splitnn/model.hpp"

namespace splitnn {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parameter snapshot: "SPL1" magic, u16 format version, u32 blob count,
// then per blob a u32 byte length and raw little-endian f64 values.
// Blobs appear in layer order, weights before bias.
inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'L', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<const Tensor*>& blobs) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u16(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const Tensor* t : blobs) {
    detail::put_u32(out, static_cast<std::uint32_t>(t->size() * 8));
    for (double v : t->data) detail::put_f64(out, v);
  }
  return out;
}

inline std::vector<std::vector<double>> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a parameter checkpoint (bad magic)");
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint16_t version = static_cast<std::uint16_t>(p[4] | (p[5] << 8));
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<std::uint32_t>(p[6 + i]) << (8 * i);
  std::size_t pos = 10;
  std::vector<std::vector<double>> blobs;
  blobs.reserve(count);
  for (std::uint32_t bi = 0; bi < count; ++bi) {
    if (pos + 4 > bytes.size()) throw CheckpointError("truncated checkpoint (blob header)");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    if (len % 8 != 0 || pos + len > bytes.size())
      throw CheckpointError("truncated checkpoint (blob " + std::to_string(bi) + ")");
    std::vector<double> blob(len / 8);
    for (std::size_t i = 0; i < blob.size(); ++i) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[pos + 8 * i + k]) << (8 * k);
      double v;
      std::memcpy(&v, &bits, 8);
      blob[i] = v;
    }
    pos += len;
    blobs.push_back(std::move(blob));
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint blobs");
  return blobs;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::vector<const Tensor*> blobs;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.params[i].present()) {
      blobs.push_back(&m.params[i].w);
      blobs.push_back(&m.params[i].b);
    }
  std::string bytes = encode_checkpoint(blobs);
  // write-then-rename so a crash mid-epoch never leaves a torn file
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

// Binds checkpoint blobs to a part. A checkpoint holding more blobs than the
// part may be a full-model snapshot; the part's layers lead the layer order,
// so a prefix match loads the client slice out of a full checkpoint.
inline void load_checkpoint_into(const std::string& path, Model& m, bool allow_prefix) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::vector<std::vector<double>> blobs = decode_checkpoint(bytes);

  std::vector<Tensor*> slots;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.params[i].present()) {
      slots.push_back(&m.params[i].w);
      names.push_back(std::string(layer_kind_name(m.layers[i].kind)) + " weights " +
                      shape_str(m.params[i].w.shape));
      slots.push_back(&m.params[i].b);
      names.push_back(std::string(layer_kind_name(m.layers[i].kind)) + " bias " +
                      shape_str(m.params[i].b.shape));
    }
  if (blobs.size() != slots.size() && !(allow_prefix && blobs.size() > slots.size()))
    throw CheckpointError("checkpoint holds " + std::to_string(blobs.size()) + " blobs, model expects " +
                          std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (blobs[i].size() != slots[i]->size())
      throw CheckpointError("blob " + std::to_string(i) + " has " + std::to_string(blobs[i].size()) +
                            " values, expected " + names[i]);
    slots[i]->data = blobs[i];
  }
}

}  // namespace splitnn
