#pragma once

// Binary tensor container shared by datasets and checkpoints. All integers
// and floats are little-endian.
//
//   "CM2N"                      magic
//   u32                         format version
//   u32 n, n x u32              modality order
//   u32                         completed stage count
//   u64                         config hash
//   u32 len, len bytes          canonical config text (UTF-8)
//   u32                         tensor count
//   per tensor:
//     u32 len, len bytes        name (UTF-8)
//     u32 rank, rank x u64      dims
//     prod(dims) x f64          values, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cm2net/io.hpp"
#include "cm2net/tensor.hpp"

namespace cm2 {

inline constexpr std::string_view kContainerMagic = "CM2N";
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerMeta {
  std::vector<std::uint32_t> modality_order;
  std::uint32_t completed_stages = 0;
  std::uint64_t config_hash = 0;
  std::string config_text;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Container {
  ContainerMeta meta;
  std::vector<NamedTensor> tensors;

  const Tensor& get(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw FormatError("container has no tensor named '" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { out_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : in_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(u32())); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("container truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Container& c) {
  detail::ByteWriter w;
  w.raw(kContainerMagic);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(c.meta.modality_order.size()));
  for (std::uint32_t m : c.meta.modality_order) w.u32(m);
  w.u32(c.meta.completed_stages);
  w.u64(c.meta.config_hash);
  w.str(c.meta.config_text);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.u64(d);
    for (double v : t.value.data()) w.f64(v);
  }
  return w.take();
}

inline Container decode_container(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != kContainerMagic) throw FormatError("bad magic: not a CM2N container");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  Container c;
  const std::uint32_t n_order = r.u32();
  if (n_order > r.remaining() / 4) throw FormatError("modality order length exceeds file size");
  for (std::uint32_t i = 0; i < n_order; ++i) c.meta.modality_order.push_back(r.u32());
  c.meta.completed_stages = r.u32();
  c.meta.config_hash = r.u64();
  c.meta.config_text = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 16) throw FormatError("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t d = r.u64();
      if (d == 0 || d > r.remaining() / 8 || n > r.remaining() / 8 / d) {
        throw FormatError("tensor '" + t.name + "' dims exceed file size");
      }
      n *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = r.f64();
    t.value = Tensor(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after container");
  return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, encode_container(c));
}

inline Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace cm2
