// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chunkkv/kv_store.hpp"
#include "chunkkv/model.hpp"
#include "chunkkv/positional.hpp"

namespace chunkkv {

// Dense per-layer FLOP counts. q_rows query rows go through the projections
// and MLP; `pairs` query-key pairs go through QK^T and AV.
double projection_flops(double q_rows, double d_model);
double mlp_flops(double q_rows, double d_model, double d_ff);
double attention_flops(double pairs, double d_model);
double causal_pairs(double n);

// Dense-equivalent cost of recomputing k tokens that each attend to n keys,
// over every layer.
double recompute_flops(double k, double n, int n_layers, double d_model, double d_ff);

// Cost of one causal prefill of n tokens over every layer.
double prefill_flops(double n, int n_layers, double d_model, double d_ff);

enum class SpStrategy { kSinglePrefill, kRingAttention, kOurs };

// single | ring | ours
SpStrategy parse_sp_strategy(std::string_view name);
std::string to_string(SpStrategy s);
inline constexpr SpStrategy kAllSpStrategies[] = {SpStrategy::kSinglePrefill, SpStrategy::kRingAttention,
                                                  SpStrategy::kOurs};

// Defaults describe a 32-layer, 4096-wide model in 16-bit precision on four
// devices. seconds_per_flop sets the single-device scale; seconds_per_byte
// is fitted to the ring schedule's transfer overhead.
struct CostModelParams {
  double seconds_per_flop = 3.9e-15;
  double seconds_per_byte = 3.3e-11;
  double link_latency = 5e-6;  // per hop, per layer
  int device_count = 4;
  int n_layers = 32;
  int d_model = 4096;
  int d_ff = 14336;
  double recompute_ratio = 0.15;
  double bytes_per_element = 2.0;
  int prompt_length = 64;
  // Share of selected tokens whose states must cross a device boundary.
  double locality_fraction = 0.5;

  // Throws ConfigError on non-positive rates or device_count < 1.
  void validate() const;

  // Reads `key = value` lines ('#' starts a comment) over the defaults.
  static CostModelParams load(const std::filesystem::path& path);
  static CostModelParams parse(std::string_view text);
};

struct FlopBreakdown {
  double projection = 0.0;
  double attention = 0.0;
  double mlp = 0.0;
  double recompute = 0.0;

  double total() const { return projection + attention + mlp + recompute; }
};

struct StrategyEstimate {
  SpStrategy strategy = SpStrategy::kSinglePrefill;
  double ttft_seconds = 0.0;
  double compute_seconds = 0.0;
  double comm_seconds = 0.0;
  double comm_bytes = 0.0;
  FlopBreakdown flops;  // critical-path flops of one device
};

StrategyEstimate estimate(const CostModelParams& params, int64_t seq_len, SpStrategy strategy);

// Throws InputError when seq_len < device_count.
double estimate_ttft(const CostModelParams& params, int64_t seq_len, SpStrategy strategy);

struct SimReport {
  int64_t seq_len = 0;
  CostModelParams params;
  std::vector<StrategyEstimate> estimates;  // single, ring, ours
  std::vector<double> speedups;  // relative to single prefill

  const StrategyEstimate& at(SpStrategy s) const;
  double speedup(SpStrategy s) const;
  // One line per strategy: name ttft_s speedup comm_bytes.
  std::string to_text() const;
};

SimReport simulate(const CostModelParams& params, int64_t seq_len);

template <typename T>
struct ParallelPrefillResult {
  std::vector<ChunkKV<T>> caches;  // in input order
  double wall_seconds = 0.0;
};

// Prefills chunks on a pool of `workers` threads. Results do not depend on the
// worker count or scheduling.
template <typename T>
ParallelPrefillResult<T> run_parallel_prefill(const Weights<T>& weights, std::span<const ChunkSpec> chunks,
                                              int workers);

}  // namespace chunkkv
