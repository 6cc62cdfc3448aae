// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "ovc/error.hpp"
#include "ovc/tensor.hpp"

// OVCT layout (all little-endian):
//   "OVCT" | u32 rank | rank x u32 extents | row-major f32 payload
namespace ovc {

inline constexpr std::array<char, 4> kOvctMagic{'O', 'V', 'C', 'T'};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Serializes a tensor. Values are narrowed to f32; values outside the f32
/// range are rejected.
inline std::vector<std::uint8_t> encode_ovct(const Tensor& t) {
  std::vector<std::uint8_t> out(kOvctMagic.begin(), kOvctMagic.end());
  out.reserve(8 + 4 * t.rank() + 4 * t.numel());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("OVCT: extent exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) {
    if (std::abs(v) > static_cast<double>(std::numeric_limits<float>::max())) {
      throw FormatError("OVCT: value outside f32 range");
    }
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline Tensor decode_ovct(std::span<const std::uint8_t> in) {
  if (in.size() < 8 || !std::equal(kOvctMagic.begin(), kOvctMagic.end(), in.begin())) {
    throw FormatError("OVCT: magic mismatch");
  }
  const std::uint32_t rank = detail::get_u32(in, 4);
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (in.size() < header) throw FormatError("OVCT: truncated header");
  Shape dims(rank);
  for (std::uint32_t i = 0; i < rank; ++i) dims[i] = detail::get_u32(in, 8 + 4 * i);
  const std::size_t n = shape_numel(dims);
  if (in.size() < header + 4 * n) {
    throw FormatError("OVCT: truncated payload (" + std::to_string((in.size() - header) / 4) + " of " +
                      std::to_string(n) + " values)");
  }
  if (in.size() > header + 4 * n) throw FormatError("OVCT: trailing bytes after payload");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(detail::get_u32(in, header + 4 * i));
    if (!std::isfinite(f)) throw FormatError("OVCT: non-finite value in payload");
    data[i] = f;
  }
  return Tensor(std::move(dims), std::move(data));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline void save_ovct(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode_ovct(t)); }

inline Tensor load_ovct(const std::filesystem::path& path) {
  try {
    return decode_ovct(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace ovc
