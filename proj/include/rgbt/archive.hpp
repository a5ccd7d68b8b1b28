// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor archive used for checkpoints.
//
//   "RGBTARC1"  magic
//   u32         element size in bytes (4 or 8)
//   u64 + bytes header text (key = value lines)
//   u64         tensor count
//   per tensor: u64 + bytes name, u32 rank, i32 dims[rank], raw elements
//
// Integers are little-endian; elements are the host's IEEE-754 bytes, so a
// save/load cycle is bitwise exact.

#ifndef RGBT_ARCHIVE_HPP_
#define RGBT_ARCHIVE_HPP_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rgbt/error.hpp"
#include "rgbt/tensor.hpp"

namespace rgbt {

template <typename T>
struct Archive {
  std::string header;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline constexpr char kArchiveMagic[8] = {'R', 'G', 'B', 'T', 'A', 'R', 'C', '1'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path + ": truncated archive");
  return v;
}

inline std::string take_string(std::istream& is, const std::string& path) {
  const auto n = take<std::uint64_t>(is, path);
  if (n > (1ull << 32)) throw CheckpointError(path + ": corrupt string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(path + ": truncated archive");
  return s;
}

}  // namespace detail

/// Writes to `path` through a temporary file and a rename, so a crash never
/// leaves a half-written archive under the final name.
template <typename T>
void write_archive(const std::filesystem::path& path, const std::string& header,
                   const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(detail::kArchiveMagic, sizeof detail::kArchiveMagic);
    detail::put<std::uint32_t>(os, sizeof(T));
    detail::put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::put<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      detail::put<std::uint64_t>(os, name.size());
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
      for (int d : t->shape()) detail::put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Archive<T> read_archive(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + p);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kArchiveMagic, 8) != 0)
    throw CheckpointError(p + ": not an rgbt archive");
  const auto elem = detail::take<std::uint32_t>(is, p);
  if (elem != sizeof(T))
    throw CheckpointError(p + ": stored element size " + std::to_string(elem) + " does not match " +
                          std::to_string(sizeof(T)));
  Archive<T> a;
  a.header = detail::take_string(is, p);
  const auto count = detail::take<std::uint64_t>(is, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::take_string(is, p);
    const auto rank = detail::take<std::uint32_t>(is, p);
    if (rank > 8) throw CheckpointError(p + ": corrupt rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = detail::take<std::int32_t>(is, p);
      if (d < 0) throw CheckpointError(p + ": negative dimension for " + name);
    }
    Tensor<T> t(shape);
    if (t.size() && !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T))))
      throw CheckpointError(p + ": truncated data for " + name);
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace rgbt

#endif  // RGBT_ARCHIVE_HPP_
