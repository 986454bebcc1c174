// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/recompute.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "chunkkv/seqpar.hpp"

namespace chunkkv {

RecomputePlan make_plan(std::span<const uint64_t> chunk_order, int context_length, std::span<const int> selected) {
  if (context_length < 0) throw InputError("negative context length");
  RecomputePlan plan;
  plan.chunk_order.assign(chunk_order.begin(), chunk_order.end());
  plan.context_length = context_length;
  plan.selected.assign(selected.begin(), selected.end());
  std::sort(plan.selected.begin(), plan.selected.end());
  if (std::adjacent_find(plan.selected.begin(), plan.selected.end()) != plan.selected.end()) {
    throw InputError("duplicate index in selection");
  }
  if (!plan.selected.empty() && (plan.selected.front() < 0 || plan.selected.back() >= context_length)) {
    throw InputError("selection index outside the context");
  }
  plan.positions.resize(static_cast<size_t>(context_length));
  std::iota(plan.positions.begin(), plan.positions.end(), 0);

  std::vector<char> is_selected(static_cast<size_t>(context_length), 0);
  for (int i : plan.selected) is_selected[static_cast<size_t>(i)] = 1;
  for (int i = 0; i < context_length; ++i) {
    if (!is_selected[static_cast<size_t>(i)]) plan.kept.push_back(i);
  }

  const auto n_kept = static_cast<int32_t>(plan.kept.size());
  plan.allowed.resize(plan.selected.size());
  size_t kept_before = 0;
  for (size_t j = 0; j < plan.selected.size(); ++j) {
    while (kept_before < plan.kept.size() && plan.kept[kept_before] < plan.selected[j]) ++kept_before;
    auto& row = plan.allowed[j];
    row.resize(kept_before + j + 1);
    std::iota(row.begin(), row.begin() + static_cast<ptrdiff_t>(kept_before), 0);
    std::iota(row.begin() + static_cast<ptrdiff_t>(kept_before), row.end(), n_kept);
  }
  return plan;
}

template <typename T>
AssembledCache<T> recompute_selected(const Weights<T>& weights, const AssembledCache<T>& cache,
                                     const RecomputePlan& plan) {
  if (plan.chunk_order != cache.chunk_ids || plan.context_length != cache.context_length) {
    throw InputError("recompute plan was made for a different chunk order");
  }
  if (plan.selected.empty()) return cache;

  const auto aligned = context_kv_at(cache, weights.config, plan.positions);
  std::vector<LayerKV<T>> prefix;
  prefix.reserve(aligned.size());
  const auto n_kept = static_cast<Eigen::Index>(plan.kept.size());
  for (const auto& l : aligned) {
    LayerKV<T> kv{Matrix<T>(n_kept, l.keys.cols()), Matrix<T>(n_kept, l.values.cols())};
    for (Eigen::Index r = 0; r < n_kept; ++r) {
      kv.keys.row(r) = l.keys.row(plan.kept[static_cast<size_t>(r)]);
      kv.values.row(r) = l.values.row(plan.kept[static_cast<size_t>(r)]);
    }
    prefix.push_back(std::move(kv));
  }

  ForwardRequest<T> req;
  std::vector<int64_t> sel_positions;
  for (int i : plan.selected) {
    req.token_ids.push_back(cache.token_ids[static_cast<size_t>(i)]);
    sel_positions.push_back(plan.positions[static_cast<size_t>(i)]);
  }
  req.positions = sel_positions;
  req.mask = AttentionMask::explicit_rows(plan.allowed);
  req.injected_kv = prefix;
  req.num_layers = weights.config.n_layers;
  const auto result = forward(weights, req);
  return replace_entries(cache, std::span<const int>(plan.selected), std::span<const LayerKV<T>>(result.kv),
                         std::span<const int64_t>(sel_positions));
}

template <typename T>
OverheadReport measure_overhead(const Weights<T>& weights, const AssembledCache<T>& cache, const RecomputePlan& plan,
                                int repetitions) {
  if (repetitions < 3) throw ConfigError("measure_overhead needs at least 3 repetitions");
  const auto& c = weights.config;
  OverheadReport report;
  report.selected = static_cast<int>(plan.selected.size());
  report.context_length = plan.context_length;
  report.ideal_flops = recompute_flops(report.selected, plan.context_length, c.n_layers, c.d_model(), c.d_ff);
  if (report.selected == 0) {
    report.degenerate = true;
    return report;
  }
  using clock = std::chrono::steady_clock;
  auto median_of = [&](auto&& fn) {
    std::vector<double> t;
    for (int r = 0; r < repetitions; ++r) {
      const auto start = clock::now();
      fn();
      t.push_back(std::chrono::duration<double>(clock::now() - start).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<ptrdiff_t>(t.size() / 2), t.end());
    return t[t.size() / 2];
  };

  ForwardRequest<T> dense;
  dense.token_ids = std::vector<int32_t>(cache.token_ids.begin(), cache.token_ids.begin() + plan.context_length);
  dense.positions = plan.positions;
  dense.num_layers = c.n_layers;
  const double dense_seconds = median_of([&] { (void)forward(weights, dense); });
  report.seconds_per_flop = dense_seconds / prefill_flops(plan.context_length, c.n_layers, c.d_model(), c.d_ff);
  report.measured_seconds = median_of([&] { (void)recompute_selected(weights, cache, plan); });
  report.predicted_seconds = report.ideal_flops * report.seconds_per_flop;
  report.overhead_factor = report.measured_seconds / report.predicted_seconds;
  return report;
}

#define CHUNKKV_INSTANTIATE(T)                                                                                    \
  template AssembledCache<T> recompute_selected<T>(const Weights<T>&, const AssembledCache<T>&,                   \
                                                   const RecomputePlan&);                                         \
  template OverheadReport measure_overhead<T>(const Weights<T>&, const AssembledCache<T>&, const RecomputePlan&, \
                                              int);

CHUNKKV_INSTANTIATE(float)
CHUNKKV_INSTANTIATE(double)

#undef CHUNKKV_INSTANTIATE

}  // namespace chunkkv
