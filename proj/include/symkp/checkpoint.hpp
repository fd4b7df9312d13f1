#pragma once

// Checkpoint layout (all integers and floats little-endian):
//
//   "CSKP"  u8 version
//   u8 mode, u32 n_nodes, u32 n_basis, u32 knn_k, f64 leaky_slope
//   4 × (u32 count, count × u32)  cluster/aggregate/offset/pose widths
//   u32 section count
//   per section: u16 name length, name bytes, u8 ndim, ndim × u64 dims,
//                prod(dims) × f64 values (row-major)
//
// Sections appear in CategoryParams::tensors() order.

#include "symkp/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace symkp {

inline constexpr char checkpoint_magic[4] = {'C', 'S', 'K', 'P'};
inline constexpr std::uint8_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>)
      bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
    else
      bits = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : bytes_(std::move(b)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>)
      return std::bit_cast<double>(bits);
    else
      return static_cast<T>(bits);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const CategoryParams& p) {
  detail::ByteWriter w;
  w.raw(checkpoint_magic, 4);
  w.put<std::uint8_t>(checkpoint_version);
  const auto& c = p.config;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.mode));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_nodes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.n_basis));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.knn_k));
  w.put<double>(c.leaky_slope);
  for (const auto* widths : {&c.cluster_widths, &c.aggregate_widths, &c.offset_widths, &c.pose_widths}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(widths->size()));
    for (auto v : *widths) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  const auto names = p.names();
  const auto tensors = p.tensors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(names[i].size()));
    w.raw(names[i].data(), names[i].size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tensors[i]->shape.size()));
    for (auto d : tensors[i]->shape) w.put<std::uint64_t>(d);
    for (double v : tensors[i]->values) w.put<double>(v);
  }
  return w.bytes();
}

inline CategoryParams deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4) != std::string(checkpoint_magic, 4)) throw Error("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint8_t>();
  if (version != checkpoint_version) throw Error("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 2) throw Error("checkpoint: invalid symmetry mode");
  c.mode = static_cast<SymmetryMode>(mode);
  c.n_nodes = r.get<std::uint32_t>();
  c.n_basis = r.get<std::uint32_t>();
  c.knn_k = r.get<std::uint32_t>();
  c.leaky_slope = r.get<double>();
  for (auto* widths : {&c.cluster_widths, &c.aggregate_widths, &c.offset_widths, &c.pose_widths}) {
    widths->resize(r.get<std::uint32_t>());
    for (auto& v : *widths) v = r.get<std::uint32_t>();
  }
  c.validate();
  // Rebuild the expected layout, then fill it from the sections.
  CategoryParams p = init_category_params(c, 0);
  const auto names = p.names();
  auto tensors = p.tensors();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size()) throw Error("checkpoint: expected " + std::to_string(tensors.size()) + " sections, found " + std::to_string(count));
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = r.str(r.get<std::uint16_t>());
    if (name != names[i]) throw Error("checkpoint: unexpected section '" + name + "', expected '" + names[i] + "'");
    diff::Shape shape(r.get<std::uint8_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != tensors[i]->shape)
      throw Error("checkpoint: section '" + name + "' has shape " + diff::shape_str(shape) + ", expected " +
                  diff::shape_str(tensors[i]->shape));
    for (double& v : tensors[i]->values) v = r.get<double>();
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return p;
}

inline void save_checkpoint(const CategoryParams& p, const std::string& path) {
  const auto bytes = serialize_checkpoint(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

inline CategoryParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

}  // namespace symkp
