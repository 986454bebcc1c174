// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chunkkv/kv_store.hpp"
#include "chunkkv/model.hpp"
#include "chunkkv/positional.hpp"

namespace chunkkv {

enum class Strategy { kAttentionNorm, kCacheBlend, kEpic, kRandom };

// attention-norm | cacheblend | epic | random
Strategy parse_strategy(std::string_view name);
std::string to_string(Strategy s);

// Either an absolute token count or a fraction of the context.
struct Budget {
  enum class Kind { kCount, kRatio };

  Kind kind = Kind::kRatio;
  int count = 0;
  double ratio = 0.0;

  static Budget top_k(int k);
  static Budget of_ratio(double r);

  // ceil(ratio * n) for ratios; throws ConfigError when the result is outside
  // [0, n] or the ratio outside [0, 1].
  int resolve(int n) const;
  std::string describe() const;
};

// floor(0.6 * n_layers), at most n_layers - 1.
int default_norm_layer(int n_layers);

enum class HeadAggregation { kMeanOverHeads };

struct SelectionConfig {
  Strategy strategy = Strategy::kAttentionNorm;
  Budget budget;
  std::optional<int> norm_layer;
  GeometryMode geometry = GeometryMode::kGlobal;
  std::optional<int64_t> prompt_offset;  // TL-TP only
  uint64_t seed = 0;
  int cacheblend_layers = 1;
  HeadAggregation head_aggregation = HeadAggregation::kMeanOverHeads;
};

struct SelectionResult {
  std::vector<double> scores;  // one per context token; empty for epic/random
  std::vector<int> selected;  // ascending
  Strategy strategy = Strategy::kAttentionNorm;
  GeometryMode geometry = GeometryMode::kGlobal;
};

// Mean over heads, then column sums over the first `context_length` columns.
template <typename T>
std::vector<double> context_column_mass(std::span<const Matrix<T>> per_head, int context_length);

// Attention mass each context token receives from the prompt at norm_layer.
// The context KV is re-rotated to positions.flat_context() and the prompt runs
// at positions.prompt_positions.
template <typename T>
std::vector<double> score_attention_norm(const Weights<T>& weights, const AssembledCache<T>& cache,
                                         std::span<const int32_t> prompt, const PositionAssignment& positions,
                                         int norm_layer);

// Indices of the k largest scores, ties to the lower index, returned ascending.
std::vector<int> select_topk(std::span<const double> scores, int k);

// Summed L2 deviation of every token's hidden state after each of the first
// early_layers layers: chunk-local runs versus one run over the concatenation.
template <typename T>
std::vector<double> score_cacheblend(const Weights<T>& weights, std::span<const ChunkSpec> chunks, int early_layers);

// The first ceil(ratio * |C_i|) tokens of every chunk.
std::vector<int> select_epic(std::span<const int> chunk_lengths, double ratio);

std::vector<int> select_random(int n, int k, uint64_t seed);

// Runs the configured strategy on an assembled cache. `chunks` supplies the
// token content for cacheblend and must match the cache order.
template <typename T>
SelectionResult select_tokens(const Weights<T>& weights, const AssembledCache<T>& cache,
                              std::span<const ChunkSpec> chunks, std::span<const int32_t> prompt,
                              const SelectionConfig& config);

}  // namespace chunkkv
