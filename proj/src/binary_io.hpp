// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte buffers shared by the weight and cache file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "chunkkv/common.hpp"

namespace chunkkv::detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U value) {
    static_assert(std::is_arithmetic_v<U>);
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
      put(std::bit_cast<Bits>(value));
    } else {
      using Unsigned = std::make_unsigned_t<U>;
      auto bits = static_cast<Unsigned>(value);
      for (size_t i = 0; i < sizeof(U); ++i) {
        bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
      }
    }
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const { return bytes_; }
  size_t size() const { return bytes_.size(); }

  void write_to(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw FormatError("write failed: " + path.string());
  }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes));
  }

  template <typename U>
  U get() {
    static_assert(std::is_arithmetic_v<U>);
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
      return std::bit_cast<U>(get<Bits>());
    } else {
      require(sizeof(U));
      using Unsigned = std::make_unsigned_t<U>;
      Unsigned bits = 0;
      for (size_t i = 0; i < sizeof(U); ++i) {
        bits |= static_cast<Unsigned>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof(U);
      return static_cast<U>(bits);
    }
  }

  std::string get_bytes(size_t n) {
    require(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  size_t position() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void require(size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated file");
  }

  std::vector<char> bytes_;
  size_t pos_ = 0;
};

}  // namespace chunkkv::detail
