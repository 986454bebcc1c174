// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/selection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace chunkkv {

Strategy parse_strategy(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return c == '_' ? '-' : std::tolower(c); });
  if (s == "attention-norm") return Strategy::kAttentionNorm;
  if (s == "cacheblend") return Strategy::kCacheBlend;
  if (s == "epic") return Strategy::kEpic;
  if (s == "random") return Strategy::kRandom;
  throw ConfigError("unknown strategy: " + std::string(name));
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kAttentionNorm:
      return "attention-norm";
    case Strategy::kCacheBlend:
      return "cacheblend";
    case Strategy::kEpic:
      return "epic";
    case Strategy::kRandom:
      return "random";
  }
  return "?";
}

Budget Budget::top_k(int k) {
  Budget b;
  b.kind = Kind::kCount;
  b.count = k;
  return b;
}

Budget Budget::of_ratio(double r) {
  Budget b;
  b.kind = Kind::kRatio;
  b.ratio = r;
  return b;
}

int Budget::resolve(int n) const {
  if (kind == Kind::kCount) {
    if (count < 0 || count > n) {
      throw ConfigError("top-k " + std::to_string(count) + " outside [0, " + std::to_string(n) + "]");
    }
    return count;
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  // The epsilon keeps products like 0.15 * 20 from rounding up to 4.
  return std::min(n, static_cast<int>(std::ceil(ratio * n - 1e-9)));
}

std::string Budget::describe() const {
  std::ostringstream os;
  if (kind == Kind::kCount) {
    os << "topk=" << count;
  } else {
    os << "ratio=" << ratio;
  }
  return os.str();
}

int default_norm_layer(int n_layers) {
  return std::clamp(static_cast<int>(std::floor(0.6 * n_layers)), 0, std::max(0, n_layers - 1));
}

template <typename T>
std::vector<double> context_column_mass(std::span<const Matrix<T>> per_head, int context_length) {
  if (per_head.empty()) throw InputError("no attention heads captured");
  const auto cols = per_head.front().cols();
  if (context_length < 0 || context_length > cols) throw InputError("context length exceeds captured columns");
  Matrix<double> mean = Matrix<double>::Zero(per_head.front().rows(), cols);
  for (const auto& h : per_head) {
    if (h.rows() != mean.rows() || h.cols() != cols) throw InputError("attention heads differ in shape");
    mean += h.template cast<double>();
  }
  mean /= static_cast<double>(per_head.size());
  std::vector<double> s(static_cast<size_t>(context_length));
  for (int j = 0; j < context_length; ++j) s[static_cast<size_t>(j)] = mean.col(j).sum();
  return s;
}

template <typename T>
std::vector<double> score_attention_norm(const Weights<T>& weights, const AssembledCache<T>& cache,
                                         std::span<const int32_t> prompt, const PositionAssignment& positions,
                                         int norm_layer) {
  if (norm_layer < 0 || norm_layer >= weights.config.n_layers) {
    throw ConfigError("norm_layer " + std::to_string(norm_layer) + " out of range");
  }
  if (prompt.empty()) throw InputError("selection needs a non-empty prompt");
  const auto ctx_pos = positions.flat_context();
  if (static_cast<int>(ctx_pos.size()) != cache.context_length ||
      positions.prompt_positions.size() != prompt.size()) {
    throw InputError("position assignment does not match cache and prompt");
  }
  const auto injected = context_kv_at(cache, weights.config, ctx_pos);

  ForwardRequest<T> req;
  req.token_ids.assign(prompt.begin(), prompt.end());
  req.positions = positions.prompt_positions;
  req.injected_kv = injected;
  req.capture_layers = {norm_layer};
  req.num_layers = norm_layer + 1;
  const auto result = forward(weights, req);
  const auto& heads = result.attention.at(norm_layer);
  return context_column_mass<T>(heads, cache.context_length);
}

std::vector<int> select_topk(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (k < 0 || k > n) throw InputError("k must lie in [0, N]");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
std::vector<double> score_cacheblend(const Weights<T>& weights, std::span<const ChunkSpec> chunks, int early_layers) {
  if (early_layers < 1 || early_layers > weights.config.n_layers) {
    throw ConfigError("cacheblend layers must lie in [1, n_layers]");
  }
  std::vector<int32_t> all;
  for (const auto& c : chunks) all.insert(all.end(), c.token_ids.begin(), c.token_ids.end());
  std::vector<double> scores(all.size(), 0.0);
  if (all.empty()) return scores;

  ForwardRequest<T> full;
  full.token_ids = all;
  full.positions.resize(all.size());
  std::iota(full.positions.begin(), full.positions.end(), 0);
  full.num_layers = early_layers;
  full.keep_hidden = true;
  const auto ref = forward(weights, full);

  size_t offset = 0;
  for (const auto& c : chunks) {
    if (c.token_ids.empty()) continue;
    ForwardRequest<T> local;
    local.token_ids = c.token_ids;
    local.positions.resize(c.token_ids.size());
    std::iota(local.positions.begin(), local.positions.end(), 0);
    local.num_layers = early_layers;
    local.keep_hidden = true;
    const auto run = forward(weights, local);
    for (int l = 0; l < early_layers; ++l) {
      for (size_t i = 0; i < c.token_ids.size(); ++i) {
        const auto diff = (run.hidden[static_cast<size_t>(l)].row(static_cast<Eigen::Index>(i)) -
                           ref.hidden[static_cast<size_t>(l)].row(static_cast<Eigen::Index>(offset + i)))
                              .template cast<double>();
        scores[offset + i] += diff.norm();
      }
    }
    offset += c.token_ids.size();
  }
  return scores;
}

std::vector<int> select_epic(std::span<const int> chunk_lengths, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  std::vector<int> out;
  int offset = 0;
  for (int len : chunk_lengths) {
    const int take = Budget::of_ratio(ratio).resolve(len);
    for (int i = 0; i < take; ++i) out.push_back(offset + i);
    offset += len;
  }
  return out;
}

std::vector<int> select_random(int n, int k, uint64_t seed) {
  if (n < 0 || k < 0 || k > n) throw InputError("k must lie in [0, N]");
  std::mt19937_64 rng(seed);
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates so the draw does not depend on the library's shuffle.
  for (int i = 0; i < k; ++i) {
    const auto span = static_cast<uint64_t>(n - i);
    const auto j = i + static_cast<int>(rng() % span);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
SelectionResult select_tokens(const Weights<T>& weights, const AssembledCache<T>& cache,
                              std::span<const ChunkSpec> chunks, std::span<const int32_t> prompt,
                              const SelectionConfig& config) {
  const int n = cache.context_length;
  SelectionResult out;
  out.strategy = config.strategy;
  out.geometry = config.geometry;
  switch (config.strategy) {
    case Strategy::kAttentionNorm: {
      GeometryConfig geo;
      geo.mode = config.geometry;
      geo.prompt_length = static_cast<int>(prompt.size());
      geo.chunk_lengths = cache.chunk_lengths;
      geo.prompt_offset = config.prompt_offset;
      geo.max_position = weights.config.max_position;
      const auto positions = assign_positions(geo);
      out.scores = score_attention_norm(weights, cache, prompt, positions,
                                        config.norm_layer.value_or(default_norm_layer(weights.config.n_layers)));
      out.selected = select_topk(out.scores, config.budget.resolve(n));
      break;
    }
    case Strategy::kCacheBlend: {
      if (chunks.size() != cache.chunk_ids.size()) throw InputError("cacheblend needs the chunk contents");
      for (size_t i = 0; i < chunks.size(); ++i) {
        if (chunks[i].local_length() != cache.chunk_lengths[i]) throw InputError("chunk contents do not match cache");
      }
      out.scores = score_cacheblend(weights, chunks, config.cacheblend_layers);
      out.selected = select_topk(out.scores, config.budget.resolve(n));
      break;
    }
    case Strategy::kEpic: {
      const double ratio = config.budget.kind == Budget::Kind::kRatio
                               ? config.budget.ratio
                               : (n == 0 ? 0.0 : static_cast<double>(config.budget.resolve(n)) / n);
      out.selected = select_epic(cache.chunk_lengths, ratio);
      break;
    }
    case Strategy::kRandom:
      out.selected = select_random(n, config.budget.resolve(n), config.seed);
      break;
  }
  return out;
}

#define CHUNKKV_INSTANTIATE(T)                                                                                \
  template std::vector<double> context_column_mass<T>(std::span<const Matrix<T>>, int);                       \
  template std::vector<double> score_attention_norm<T>(const Weights<T>&, const AssembledCache<T>&,           \
                                                       std::span<const int32_t>, const PositionAssignment&,   \
                                                       int);                                                  \
  template std::vector<double> score_cacheblend<T>(const Weights<T>&, std::span<const ChunkSpec>, int);       \
  template SelectionResult select_tokens<T>(const Weights<T>&, const AssembledCache<T>&,                      \
                                            std::span<const ChunkSpec>, std::span<const int32_t>,             \
                                            const SelectionConfig&);

CHUNKKV_INSTANTIATE(float)
CHUNKKV_INSTANTIATE(double)

#undef CHUNKKV_INSTANTIATE

}  // namespace chunkkv
