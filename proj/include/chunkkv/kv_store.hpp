// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "chunkkv/model.hpp"
#include "chunkkv/positional.hpp"

namespace chunkkv {

enum class Provenance : uint8_t { kPrefilledLocal = 0, kRecomputedGlobal = 1, kFullPrefill = 2 };

std::string to_string(Provenance p);

// Cached keys/values of one chunk. Keys are stored rotated at
// prefill_positions.
template <typename T>
struct ChunkKV {
  uint64_t chunk_id = 0;
  uint64_t model_fingerprint = 0;
  std::vector<int32_t> token_ids;
  std::vector<LayerKV<T>> layers;
  std::vector<int64_t> prefill_positions;
  Provenance provenance = Provenance::kPrefilledLocal;

  int length() const { return static_cast<int>(token_ids.size()); }
  bool operator==(const ChunkKV&) const;
};

// Forward pass over the chunk alone at positions 0..len-1 with a causal mask.
template <typename T>
ChunkKV<T> prefill_chunk(const Weights<T>& weights, const ChunkSpec& chunk);

// Keys/values of `tokens` at consecutive positions starting at `first_position`
// under a single causal pass; used for full-context references.
template <typename T>
ChunkKV<T> prefill_sequence(const Weights<T>& weights, uint64_t chunk_id, std::span<const int32_t> tokens,
                            int64_t first_position, Provenance provenance);

uint64_t content_hash(std::span<const int32_t> tokens);

// ---------------------------------------------------------------------------
// Cache files
//
//   magic "IFKC" | version u32 | model fingerprint u64 | chunk_id u64 |
//   chunk length u32 | n_layers u32 | n_heads u32 | d_head u32 |
//   provenance u8 | precision u8 | first prefill position i64 |
//   token ids u32 x length |
//   per layer: keys then values, f32 little-endian, row-major |
//   FNV-1a 64 checksum of every preceding byte
//
// Tensors are always written as f32; the precision tag records the compute
// precision. Prefill positions are consecutive, so only the first is stored.

inline constexpr uint32_t kCacheFileVersion = 1;

struct CacheFileHeader {
  uint32_t version = 0;
  uint64_t model_fingerprint = 0;
  uint64_t chunk_id = 0;
  uint32_t length = 0;
  uint32_t n_layers = 0;
  uint32_t n_heads = 0;
  uint32_t d_head = 0;
  Provenance provenance = Provenance::kPrefilledLocal;
  Precision precision = Precision::kFloat32;
  int64_t first_position = 0;
};

template <typename T>
void save_cache(const ChunkKV<T>& cache, const ModelConfig& config, const std::filesystem::path& path);

// Throws VersionError, ChecksumError or FormatError (truncation, bad magic).
template <typename T>
ChunkKV<T> load_cache(const std::filesystem::path& path);

CacheFileHeader read_cache_header(const std::filesystem::path& path);

// Directory of cache files keyed by (model fingerprint, chunk content hash).
// Safe to share across threads; files are written once and never modified.
template <typename T>
class CacheRegistry {
 public:
  explicit CacheRegistry(std::filesystem::path dir);

  std::filesystem::path path_for(uint64_t model_fingerprint, std::span<const int32_t> tokens) const;

  // Loads the chunk's cache if present, otherwise prefills and stores it.
  // Concurrent calls for the same chunk_id prefill at most once.
  ChunkKV<T> get_or_prefill(const Weights<T>& weights, uint64_t model_fingerprint, const ChunkSpec& chunk);

 private:
  std::mutex& lock_for(uint64_t chunk_id);

  std::filesystem::path dir_;
  std::mutex table_mutex_;
  std::map<uint64_t, std::unique_ptr<std::mutex>> chunk_locks_;
};

// ---------------------------------------------------------------------------
// Assembled cache

struct TokenOrigin {
  uint64_t chunk_id = 0;
  int local_index = 0;
  bool operator==(const TokenOrigin&) const = default;
};

// Chunks concatenated in order, optionally followed by prompt rows. Row i of
// every layer is context token i for i < context_length.
template <typename T>
struct AssembledCache {
  uint64_t model_fingerprint = 0;
  std::vector<uint64_t> chunk_ids;
  std::vector<int> chunk_lengths;
  std::vector<LayerKV<T>> layers;
  std::vector<int32_t> token_ids;
  std::vector<TokenOrigin> origin;  // context rows only
  std::vector<Provenance> provenance;  // every row
  std::vector<int64_t> key_positions;  // rotation baked into each key row
  int context_length = 0;
  int prompt_length = 0;

  // Global context index of (chunk position in order, local index).
  int global_index(size_t chunk_slot, int local_index) const;
};

// Throws InputError when chunks come from different models or shapes.
template <typename T>
AssembledCache<T> assemble(std::span<const ChunkKV<T>> chunks, const ChunkKV<T>* prompt_kv = nullptr);

// Replaces rows `indices` (context indices, no duplicates) of every layer with
// `rows`, whose keys are rotated at `positions`. Other rows stay bit-identical.
template <typename T>
AssembledCache<T> replace_entries(const AssembledCache<T>& cache, std::span<const int> indices,
                                  std::span<const LayerKV<T>> rows, std::span<const int64_t> positions);

// Context rows of every layer with keys re-rotated to `target_positions`.
template <typename T>
std::vector<LayerKV<T>> context_kv_at(const AssembledCache<T>& cache, const ModelConfig& config,
                                      std::span<const int64_t> target_positions);

// Frobenius distance between the context rows of two caches, keys compared
// after rotating both to `positions`.
template <typename T>
double cache_distance(const AssembledCache<T>& a, const AssembledCache<T>& b, std::span<const int64_t> positions,
                      const ModelConfig& config);

}  // namespace chunkkv
