// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace chunkkv {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Element precision of a computation. The numeric tag is part of both file
// formats.
enum class Precision : uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "only float and double are supported");
  return std::is_same_v<T, float> ? Precision::kFloat32 : Precision::kFloat64;
}

Precision parse_precision(std::string_view name);
std::string_view to_string(Precision p);

// Invalid configuration: bad dimensions, unknown names, inconsistent options.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid data handed to an operation: out-of-range positions or indices,
// shape mismatches, malformed masks.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable or malformed file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// 64-bit FNV-1a, used for content hashes, model fingerprints and file checksums.
class Fnv1a64 {
 public:
  void update(const void* data, size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 1099511628211ULL;
    }
  }
  template <typename V>
  void update_value(const V& v) {
    update(&v, sizeof(V));
  }
  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = 14695981039346656037ULL;
};

}  // namespace chunkkv
