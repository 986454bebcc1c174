// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/reorder.hpp"

#include <algorithm>
#include <numeric>

namespace chunkkv {

ChunkScoreAggregator parse_chunk_score(std::string_view name) {
  if (name == "sum") return ChunkScoreAggregator::kSum;
  if (name == "mean") return ChunkScoreAggregator::kMean;
  if (name == "max") return ChunkScoreAggregator::kMax;
  throw ConfigError("unknown chunk score aggregator: " + std::string(name));
}

std::string to_string(ChunkScoreAggregator a) {
  switch (a) {
    case ChunkScoreAggregator::kSum:
      return "sum";
    case ChunkScoreAggregator::kMean:
      return "mean";
    case ChunkScoreAggregator::kMax:
      return "max";
  }
  return "?";
}

std::vector<uint64_t> ReorderPlan::new_order() const {
  std::vector<uint64_t> out;
  for (int i : permutation) out.push_back(original_order[static_cast<size_t>(i)]);
  return out;
}

template <typename T>
std::vector<double> score_chunks(const Weights<T>& weights, std::span<const ChunkKV<T>> chunks,
                                 std::span<const int32_t> prompt, const ReorderConfig& config,
                                 std::vector<SelectionResult>* first_pass) {
  if (chunks.empty()) throw InputError("score_chunks needs at least one chunk");
  int total = 0;
  for (const auto& c : chunks) {
    if (c.length() == 0) throw InputError("score_chunks: empty chunk");
    total += c.length();
  }
  const int k_total = config.budget.resolve(total);
  const int n_chunks = static_cast<int>(chunks.size());
  const int per_chunk = (k_total + n_chunks - 1) / n_chunks;
  const int layer = config.norm_layer.value_or(default_norm_layer(weights.config.n_layers));

  PositionAssignment pos;
  pos.prompt_positions.resize(prompt.size());
  std::iota(pos.prompt_positions.begin(), pos.prompt_positions.end(), int64_t{total});

  std::vector<double> importance;
  for (const auto& c : chunks) {
    const auto cache = assemble(std::span<const ChunkKV<T>>(&c, 1));
    pos.context_positions.assign(1, std::vector<int64_t>(static_cast<size_t>(c.length())));
    std::iota(pos.context_positions[0].begin(), pos.context_positions[0].end(), 0);

    SelectionResult r;
    r.strategy = Strategy::kAttentionNorm;
    r.geometry = GeometryMode::kHeadLocalTailPrompt;
    r.scores = score_attention_norm(weights, cache, prompt, pos, layer);
    r.selected = select_topk(r.scores, std::min(per_chunk, c.length()));

    double agg = 0.0;
    for (int i : r.selected) {
      const double s = r.scores[static_cast<size_t>(i)];
      agg = config.aggregator == ChunkScoreAggregator::kMax ? std::max(agg, s) : agg + s;
    }
    if (config.aggregator == ChunkScoreAggregator::kMean && !r.selected.empty()) agg /= r.selected.size();
    importance.push_back(agg);
    if (first_pass) first_pass->push_back(std::move(r));
  }
  return importance;
}

std::vector<int> reorder_permutation(std::span<const double> importance) {
  std::vector<int> perm(importance.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
    return importance[static_cast<size_t>(a)] < importance[static_cast<size_t>(b)];
  });
  return perm;
}

template <typename T>
ReorderOutcome<T> reorder_and_reselect(const Weights<T>& weights, std::span<const ChunkKV<T>> chunks,
                                       std::span<const int32_t> prompt, const ReorderConfig& config) {
  if (config.sequential_input) throw ConfigError("reordering refused: input is marked sequential");
  ReorderOutcome<T> out;
  auto& plan = out.plan;
  for (const auto& c : chunks) plan.original_order.push_back(c.chunk_id);
  plan.chunk_importance = score_chunks(weights, chunks, prompt, config, &plan.first_pass);
  plan.permutation = reorder_permutation(plan.chunk_importance);

  std::vector<ChunkKV<T>> permuted;
  for (int i : plan.permutation) permuted.push_back(chunks[static_cast<size_t>(i)]);
  out.cache = assemble(std::span<const ChunkKV<T>>(permuted));

  SelectionConfig sel;
  sel.strategy = Strategy::kAttentionNorm;
  sel.budget = config.budget;
  sel.norm_layer = config.norm_layer;
  sel.geometry = GeometryMode::kGlobal;
  plan.second_pass = select_tokens(weights, out.cache, {}, prompt, sel);
  out.selection = plan.second_pass;
  return out;
}

#define CHUNKKV_INSTANTIATE(T)                                                                                  \
  template std::vector<double> score_chunks<T>(const Weights<T>&, std::span<const ChunkKV<T>>,                  \
                                               std::span<const int32_t>, const ReorderConfig&,                  \
                                               std::vector<SelectionResult>*);                                  \
  template ReorderOutcome<T> reorder_and_reselect<T>(const Weights<T>&, std::span<const ChunkKV<T>>,            \
                                                     std::span<const int32_t>, const ReorderConfig&);

CHUNKKV_INSTANTIATE(float)
CHUNKKV_INSTANTIATE(double)

#undef CHUNKKV_INSTANTIATE

}  // namespace chunkkv
