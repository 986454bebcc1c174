// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "chunkkv/kv_store.hpp"
#include "chunkkv/model.hpp"

namespace chunkkv {

// Selected context tokens recomputed at their global positions. Token j sees
// every context key with a lower global index (stale or already recomputed)
// and itself.
struct RecomputePlan {
  std::vector<uint64_t> chunk_order;
  int context_length = 0;
  std::vector<int> selected;  // ascending
  std::vector<int> kept;  // complement of selected, ascending
  std::vector<int64_t> positions;  // global position of every context token
  // Per selected token: allowed keys in [kept rows..., selected rows...].
  std::vector<std::vector<int32_t>> allowed;
};

// Throws InputError on out-of-range or duplicate indices.
RecomputePlan make_plan(std::span<const uint64_t> chunk_order, int context_length, std::span<const int> selected);

template <typename T>
RecomputePlan make_plan(const AssembledCache<T>& cache, std::span<const int> selected) {
  return make_plan(cache.chunk_ids, cache.context_length, selected);
}

// Runs the selected tokens from their embeddings through every layer in one
// pass with an index-based causal mask over the re-rotated cache, then writes
// their keys/values back. Throws InputError when the plan was made for a
// different chunk order.
template <typename T>
AssembledCache<T> recompute_selected(const Weights<T>& weights, const AssembledCache<T>& cache,
                                     const RecomputePlan& plan);

struct OverheadReport {
  int selected = 0;
  int context_length = 0;
  double ideal_flops = 0.0;
  double seconds_per_flop = 0.0;  // calibrated on a dense causal forward
  double predicted_seconds = 0.0;
  double measured_seconds = 0.0;  // median over repetitions
  double overhead_factor = 1.0;
  bool degenerate = false;  // nothing selected
};

// Throws ConfigError when repetitions < 3.
template <typename T>
OverheadReport measure_overhead(const Weights<T>& weights, const AssembledCache<T>& cache, const RecomputePlan& plan,
                                int repetitions);

}  // namespace chunkkv
