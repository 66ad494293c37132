#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/mat.hpp"
#include "socl/ten/tape.hpp"

// Checkpoint file layout (all integers and reals little-endian):
//
//   "SOCLCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 n_meta            then n_meta x { u32 len, key bytes, u32 len, value bytes }
//   u32 n_arrays          then n_arrays x {
//                           u32 len, name bytes,
//                           u32 ndim (always 2), u64 rows, u64 cols,
//                           f64 values[rows * cols] row-major }

namespace socl::ten {

inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'C', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Ordered table of named arrays plus string metadata.
class ArrayTable {
 public:
  void put(std::string name, Mat m) {
    for (auto& [n, v] : arrays_) {
      if (n == name) {
        v = std::move(m);
        return;
      }
    }
    arrays_.emplace_back(std::move(name), std::move(m));
  }
  void put(const Param& p) { put(p.name, p.value); }

  bool contains(const std::string& name) const {
    for (const auto& [n, v] : arrays_)
      if (n == name) return true;
    return false;
  }

  const Mat& get(const std::string& name) const {
    for (const auto& [n, v] : arrays_)
      if (n == name) return v;
    throw FormatError("checkpoint: missing array '" + name + "'");
  }

  // Copies a stored array into a parameter, checking the shape.
  void load_into(Param& p) const {
    const Mat& m = get(p.name);
    if (m.shape() != p.value.shape()) {
      throw ShapeError("checkpoint: '" + p.name + "' stored " + m.shape().str() + ", expected " +
                       p.value.shape().str());
    }
    p.value = m;
  }

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }
  const std::vector<std::pair<std::string, Mat>>& arrays() const { return arrays_; }

  std::string serialize() const {
    std::string out(kCheckpointMagic, 8);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_.size()));
    for (const auto& [k, v] : meta_) {
      put_str(out, k);
      put_str(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& [name, m] : arrays_) {
      put_str(out, name);
      put_u32(out, 2);
      put_u64(out, m.rows());
      put_u64(out, m.cols());
      for (double v : m.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
  }

  static ArrayTable deserialize(const std::string& bytes) {
    Reader r{bytes};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
      throw FormatError("checkpoint: bad magic");
    }
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    ArrayTable t;
    const std::uint32_t n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      std::string k = r.str();
      t.meta_[k] = r.str();
    }
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      if (r.u32() != 2) throw FormatError("checkpoint: only 2-D arrays supported ('" + name + "')");
      const std::uint64_t rows = r.u64();
      const std::uint64_t cols = r.u64();
      if (cols != 0 && rows > (bytes.size() - r.pos) / 8 / cols) throw FormatError("checkpoint: truncated array '" + name + "'");
      Mat m(rows, cols);
      for (double& v : m.values()) v = std::bit_cast<double>(r.u64());
      t.arrays_.emplace_back(std::move(name), std::move(m));
    }
    if (r.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
    return t;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot write " + path.string());
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  static ArrayTable load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

 private:
  static void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  static void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  }

  struct Reader {
    const std::string& b;
    std::size_t pos = 0;
    std::uint64_t uint(int n) {
      if (pos + static_cast<std::size_t>(n) > b.size()) throw FormatError("checkpoint: truncated");
      std::uint64_t v = 0;
      for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
      pos += static_cast<std::size_t>(n);
      return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    std::string str() {
      const std::uint32_t n = u32();
      if (pos + n > b.size()) throw FormatError("checkpoint: truncated string");
      std::string s = b.substr(pos, n);
      pos += n;
      return s;
    }
  };

  std::vector<std::pair<std::string, Mat>> arrays_;
  std::map<std::string, std::string> meta_;
};

}  // namespace socl::ten
