#pragma once

// Binary weight file, little-endian throughout:
//
//   "SGPW"  u32 version  u32 provenance_len  provenance bytes  u32 n_layers
//   per layer:
//     u8 kind  u8 plastic  u16 reserved(0)
//     u32 in_h in_w in_c  u32 out_h out_w out_c  u32 kernel
//     u32 rows  u32 cols  i32 scale_exp  u64 rng_seed  u64 draws
//     u64 payload_len  i8 payload[payload_len]  u32 crc32(payload)
//   u32 crc32(all preceding bytes)

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/network.hpp"
#include "sgp/weights.hpp"

namespace sgp {

inline constexpr char kWeightMagic[4] = {'S', 'G', 'P', 'W'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightFileLayer {
  LayerKind kind = LayerKind::dense;
  bool plastic = false;
  Shape3 in, out;
  std::size_t kernel = 0;
  QuantizedWeightStore store;
};

struct WeightFile {
  std::uint32_t version = kWeightFormatVersion;
  std::string provenance;
  std::vector<WeightFileLayer> layers;
};

namespace detail {

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  std::uint64_t u64() { return get(8); }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw ChecksumError("weight file truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weight_file(const WeightFile& wf) {
  detail::ByteWriter w;
  w.bytes(kWeightMagic, 4);
  w.u32(wf.version);
  w.u32(static_cast<std::uint32_t>(wf.provenance.size()));
  w.bytes(wf.provenance.data(), wf.provenance.size());
  w.u32(static_cast<std::uint32_t>(wf.layers.size()));
  for (const WeightFileLayer& l : wf.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u8(l.plastic ? 1 : 0);
    w.u16(0);
    for (std::size_t d : {l.in.height, l.in.width, l.in.channels, l.out.height, l.out.width, l.out.channels, l.kernel})
      w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(l.store.rows));
    w.u32(static_cast<std::uint32_t>(l.store.cols));
    w.i32(l.store.scale_exp);
    w.u64(l.store.rng_seed);
    w.u64(l.store.draws);
    w.u64(l.store.weights.size());
    const auto* payload = reinterpret_cast<const std::uint8_t*>(l.store.weights.data());
    w.bytes(payload, l.store.weights.size());
    w.u32(detail::crc32_of(payload, l.store.weights.size()));
  }
  auto& buf = w.buffer();
  w.u32(detail::crc32_of(buf.data(), buf.size()));
  return std::move(buf);
}

inline WeightFile decode_weight_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    if (bytes.size() < 4) throw ChecksumError("weight file truncated");
    throw DataError("not a weight file (bad magic)");
  }
  if (bytes.size() < 12) throw ChecksumError("weight file truncated");
  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  detail::ByteReader trailer(bytes.data() + bytes.size() - 4, 4);
  if (trailer.u32() != detail::crc32_of(bytes.data(), bytes.size() - 4))
    throw ChecksumError("weight file checksum mismatch");

  r.take(4);
  WeightFile wf;
  wf.version = r.u32();
  if (wf.version != kWeightFormatVersion)
    throw DataError("unsupported weight file version " + std::to_string(wf.version));
  const std::uint32_t plen = r.u32();
  const auto* prov = r.take(plen);
  wf.provenance.assign(reinterpret_cast<const char*>(prov), plen);
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    WeightFileLayer l;
    l.kind = static_cast<LayerKind>(r.u8());
    l.plastic = r.u8() != 0;
    r.u16();
    l.in = Shape3{r.u32(), r.u32(), r.u32()};
    l.out = Shape3{r.u32(), r.u32(), r.u32()};
    l.kernel = r.u32();
    l.store.rows = r.u32();
    l.store.cols = r.u32();
    l.store.scale_exp = r.i32();
    l.store.rng_seed = r.u64();
    l.store.draws = r.u64();
    const std::uint64_t n = r.u64();
    if (n != static_cast<std::uint64_t>(l.store.rows) * l.store.cols)
      throw DataError("weight payload length does not match declared dims");
    const auto* payload = r.take(n);
    if (r.u32() != detail::crc32_of(payload, n)) throw ChecksumError("weight payload checksum mismatch");
    l.store.weights.assign(reinterpret_cast<const std::int8_t*>(payload),
                           reinterpret_cast<const std::int8_t*>(payload) + n);
    wf.layers.push_back(std::move(l));
  }
  if (r.pos() != bytes.size() - 4) throw DataError("trailing bytes in weight file");
  return wf;
}

inline WeightFile weight_file_of(const Network& net) {
  WeightFile wf;
  wf.provenance = net.provenance;
  for (std::size_t l = 0; l < net.topology.layers.size(); ++l) {
    const LayerSpec& s = net.topology.layers[l];
    wf.layers.push_back(WeightFileLayer{s.kind, s.plastic, s.in, s.out, s.kernel, net.weights[l]});
  }
  return wf;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_weights(const Network& net, const std::filesystem::path& path) {
  write_bytes(path, encode_weight_file(weight_file_of(net)));
}

/// Replaces the network's weights (all layers) with those from `path`.
inline void load_weights(Network& net, const std::filesystem::path& path) {
  WeightFile wf = decode_weight_file(read_bytes(path));
  const auto& layers = net.topology.layers;
  if (wf.layers.size() != layers.size()) throw ShapeError("weight file layer count does not match topology");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const WeightFileLayer& f = wf.layers[l];
    const LayerSpec& s = layers[l];
    if (f.kind != s.kind || !(f.in == s.in) || !(f.out == s.out) || f.kernel != s.kernel ||
        f.store.rows != s.weight_rows() || f.store.cols != s.weight_cols())
      throw ShapeError("weight file layer " + std::to_string(l) + " does not match topology");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) net.weights[l] = std::move(wf.layers[l].store);
  net.provenance = std::move(wf.provenance);
  net.refresh_effective();
}

}  // namespace sgp
