// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chunkkv {

// One context chunk. Its tokens are prefilled at local positions
// 0..local_length()-1 regardless of where the chunk sits in the context.
struct ChunkSpec {
  uint64_t chunk_id = 0;
  std::vector<int32_t> token_ids;
  int declared_order_index = 0;

  int local_length() const { return static_cast<int>(token_ids.size()); }
};

// RoPE layouts for chunked context followed by a prompt.
//   kGlobal               chunks and prompt at their indices in the full sequence
//   kHeadLocalHeadPrompt  every chunk from 0, prompt right after the longest chunk
//   kHeadLocalTailPrompt  every chunk from 0, prompt at its global index
//   kTailLocalTailPrompt  prompt at its global index, chunks packed right before it
enum class GeometryMode { kGlobal, kHeadLocalHeadPrompt, kHeadLocalTailPrompt, kTailLocalTailPrompt };

// Accepts GLOBAL, HL-HP, HL-TP, TL-TP (case-insensitive, '_' or '-').
GeometryMode parse_geometry(std::string_view name);
std::string to_string(GeometryMode mode);
inline constexpr GeometryMode kAllGeometries[] = {
    GeometryMode::kGlobal, GeometryMode::kHeadLocalHeadPrompt, GeometryMode::kHeadLocalTailPrompt,
    GeometryMode::kTailLocalTailPrompt};

struct GeometryConfig {
  GeometryMode mode = GeometryMode::kGlobal;
  int prompt_length = 0;
  std::vector<int> chunk_lengths;
  // Prompt offset used by TL-TP: the prompt's index in the original input.
  // Defaults to the total context length.
  std::optional<int64_t> prompt_offset;
  int64_t max_position = INT64_MAX;
};

struct PositionAssignment {
  std::vector<std::vector<int64_t>> context_positions;  // per chunk
  std::vector<int64_t> prompt_positions;

  // Context positions concatenated in chunk order.
  std::vector<int64_t> flat_context() const;
  std::vector<int64_t> chunk_starts() const;
};

// Throws ConfigError when any position would reach max_position or become
// negative, and InputError when chunk lengths disagree with config.
PositionAssignment assign_positions(const GeometryConfig& config);
PositionAssignment assign_positions(const GeometryConfig& config, std::span<const ChunkSpec> chunks);

// [cos(theta_0 p), sin(theta_0 p), ..., cos(theta_{d/2-1} p), sin(theta_{d/2-1} p)]:
// the reference direction (1, 0) of every pair rotated to position p.
std::vector<double> rope_position_vector(int64_t position, int d, double base);

// Cosine similarity of two position vectors.
double rope_cosine(int64_t a, int64_t b, int d, double base);

struct RopeSimilarity {
  double mom = 0.0;  // mean over prompt positions of the best match
  double max = 0.0;  // best match over all pairs
};

// Throws InputError if either set is empty.
RopeSimilarity rope_similarity_stats(std::span<const int64_t> prompt_positions,
                                     std::span<const int64_t> selected_positions, int d, double base);

}  // namespace chunkkv
