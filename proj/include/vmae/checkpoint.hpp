#pragma once

// Single-file checkpoint archive:
//   8 bytes  "VMAECKPT"
//   u32      format version (little endian)
//   u64      header length
//   header   JSON: {"meta": {...}, "arrays": [{"name", "rows", "cols"}, ...]}
//   payload  each array's doubles, row-major, little endian, in header order
// Writing the same content twice gives the same bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "vmae/autograd.hpp"
#include "vmae/error.hpp"

namespace vmae {

inline constexpr char kCheckpointMagic[8] = {'V', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Mat<double>> arrays;  // name order is the file order
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorCode::kCheckpointFormat, "truncated " + what);
  return v;
}

}  // namespace detail

inline void write_archive(const Archive& a, std::ostream& out) {
  nlohmann::json header;
  header["meta"] = a.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : a.arrays) header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, m] : a.arrays) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
}

inline Archive read_archive(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::kCheckpointFormat, "not a checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = detail::get<std::uint64_t>(in, "header length");
  if (len > (1ULL << 32)) throw Error(ErrorCode::kCheckpointFormat, "implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error(ErrorCode::kCheckpointFormat, "truncated header");
  Archive a;
  try {
    const auto header = nlohmann::json::parse(text);
    a.meta = header.at("meta");
    for (const auto& e : header.at("arrays")) {
      const auto rows = e.at("rows").get<Eigen::Index>(), cols = e.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw Error(ErrorCode::kCheckpointFormat, "negative array shape");
      Mat<double> m(rows, cols);
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
        throw Error(ErrorCode::kCheckpointFormat, "truncated array " + e.at("name").get<std::string>());
      }
      a.arrays.emplace(e.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("bad checkpoint header: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::kCheckpointFormat, "trailing bytes");
  return a;
}

/// Writes to a sibling temporary file, then renames over `path`, so an
/// interrupted save never leaves a partial archive behind.
inline void save_archive(const Archive& a, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kFileUnreadable, "cannot write " + tmp.string());
    write_archive(a, out);
    out.flush();
    if (!out) throw Error(ErrorCode::kFileUnreadable, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileUnreadable, "cannot read checkpoint " + path.string());
  return read_archive(in);
}

}  // namespace vmae
