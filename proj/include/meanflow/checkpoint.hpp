#pragma once

// Binary checkpoint, little-endian throughout:
//   "MFCK" | u32 version | u32 config length | config UTF-8 |
//   live table | ema table
// table := u32 count, then per tensor:
//   u16 name length | name UTF-8 | u8 rank | u32 extent x rank | f64 x numel

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "meanflow/network.hpp"
#include "meanflow/tensor.hpp"

namespace meanflow {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  NetworkParams params;

  bool operator==(const Checkpoint& o) const {
    return config_text == o.config_text && params.live == o.params.live && params.ema == o.params.ema;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

inline void write_table(ByteWriter& w, const ParamTable& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, value] : table) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw CheckpointError("checkpoint: name too long");
    if (value.rank() > std::numeric_limits<std::uint8_t>::max()) throw CheckpointError("checkpoint: rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(value.rank()));
    for (std::size_t e : value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double x : value.data()) w.f64(x);
  }
}

inline ParamTable read_table(ByteReader& r) {
  ParamTable table(r.u32());
  for (auto& [name, value] : table) {
    name = r.raw(r.u16());
    Shape shape(r.u8());
    for (auto& e : shape) e = r.u32();
    std::vector<double> data(shape_numel(shape));
    for (double& x : data) x = r.f64();
    value = Tensor(std::move(shape), std::move(data));
  }
  return table;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
  w.raw(ck.config_text);
  detail::write_table(w, ck.params.live);
  detail::write_table(w, ck.params.ema);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin()))
    throw CheckpointError("checkpoint: bad magic (not an MFCK file)");
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_text = r.raw(r.u32());
  ck.params.live = detail::read_table(r);
  ck.params.ema = detail::read_table(r);
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint '" + tmp + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace meanflow
