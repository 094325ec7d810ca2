#pragma once

// Binary container for named matrices plus string metadata. Used for
// checkpoints and for pretrained backbone weights.
//
// Layout (little-endian):
//   "ADAGCD\x01\x00"
//   u64 meta_count, then per entry: u64 len, key bytes, u64 len, value bytes
//   u64 tensor_count, then per entry: u64 len, name bytes, u64 rows, u64 cols, f64[rows·cols]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adagcd/error.hpp"
#include "adagcd/matrix.hpp"

namespace adagcd {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

struct TensorArchive {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }
};

namespace detail {

inline constexpr char archive_magic[8] = {'A', 'D', 'A', 'G', 'C', 'D', '\x01', '\x00'};

inline void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError("archive: truncated");
  return v;
}

inline std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ULL << 32)) throw IoError("archive: implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("archive: truncated");
  return s;
}

}  // namespace detail

inline void write_archive(const TensorArchive& ar, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(detail::archive_magic, 8);
    detail::put_u64(out, ar.metadata.size());
    for (const auto& [k, v] : ar.metadata) {
      detail::put_string(out, k);
      detail::put_string(out, v);
    }
    detail::put_u64(out, ar.tensors.size());
    for (const auto& [name, m] : ar.tensors) {
      detail::put_string(out, name);
      detail::put_u64(out, m.rows());
      detail::put_u64(out, m.cols());
      out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.size() * 8));
    }
    if (!out) throw IoError("write failed for " + tmp);
  }
  // Rename last so an interrupted write never clobbers a valid file.
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move " + tmp + " to " + path);
}

inline TensorArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::archive_magic, 8) != 0)
    throw IoError(path + ": not an adagcd archive");
  TensorArchive ar;
  const std::uint64_t n_meta = detail::get_u64(in);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_string(in);
    ar.metadata[k] = detail::get_string(in);
  }
  const std::uint64_t n_tensors = detail::get_u64(in);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = detail::get_string(in);
    const std::uint64_t r = detail::get_u64(in), c = detail::get_u64(in);
    if (r * c > (1ULL << 34)) throw IoError("archive: implausible tensor size for " + name);
    Matrix m(r, c);
    if (m.size() && !in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.size() * 8)))
      throw IoError("archive: truncated tensor " + name);
    ar.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ar;
}

}  // namespace adagcd
