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
#include "chunkkv/selection.hpp"

namespace chunkkv {

enum class ChunkScoreAggregator { kSum, kMean, kMax };

ChunkScoreAggregator parse_chunk_score(std::string_view name);
std::string to_string(ChunkScoreAggregator a);

struct ReorderConfig {
  Budget budget;  // total recomputation budget over the whole context
  ChunkScoreAggregator aggregator = ChunkScoreAggregator::kSum;
  std::optional<int> norm_layer;
  // Set by callers whose chunks form one continuous document; reordering
  // such input is refused.
  bool sequential_input = false;
};

struct ReorderPlan {
  std::vector<uint64_t> original_order;
  std::vector<int> permutation;  // new slot -> index into the original order
  std::vector<double> chunk_importance;  // per original index
  std::vector<SelectionResult> first_pass;  // per original index, local indices
  SelectionResult second_pass;  // indices into the permuted context

  std::vector<uint64_t> new_order() const;
};

// First-pass score of every chunk on its own: context at local positions,
// prompt at the total context length, keeping each chunk's top ceil(k/K)
// tokens. Throws InputError on an empty chunk list or empty chunk.
template <typename T>
std::vector<double> score_chunks(const Weights<T>& weights, std::span<const ChunkKV<T>> chunks,
                                 std::span<const int32_t> prompt, const ReorderConfig& config,
                                 std::vector<SelectionResult>* first_pass = nullptr);

// Ascending stable order of importance: the most important chunk comes last,
// next to the prompt; ties keep their input order.
std::vector<int> reorder_permutation(std::span<const double> importance);

template <typename T>
struct ReorderOutcome {
  ReorderPlan plan;
  AssembledCache<T> cache;  // chunks in the new order
  SelectionResult selection;  // same as plan.second_pass
};

// Scores, permutes, reassembles and reselects under GLOBAL positions.
// Throws ConfigError when config.sequential_input is set.
template <typename T>
ReorderOutcome<T> reorder_and_reselect(const Weights<T>& weights, std::span<const ChunkKV<T>> chunks,
                                       std::span<const int32_t> prompt, const ReorderConfig& config);

}  // namespace chunkkv
