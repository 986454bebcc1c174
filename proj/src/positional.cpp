// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/positional.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "chunkkv/common.hpp"
#include "chunkkv/model.hpp"

namespace chunkkv {

GeometryMode parse_geometry(std::string_view name) {
  std::string key;
  for (char ch : name) {
    key.push_back(ch == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  if (key == "GLOBAL") return GeometryMode::kGlobal;
  if (key == "HL-HP") return GeometryMode::kHeadLocalHeadPrompt;
  if (key == "HL-TP") return GeometryMode::kHeadLocalTailPrompt;
  if (key == "TL-TP") return GeometryMode::kTailLocalTailPrompt;
  throw ConfigError("unknown geometry: " + std::string(name));
}

std::string to_string(GeometryMode mode) {
  switch (mode) {
    case GeometryMode::kGlobal:
      return "GLOBAL";
    case GeometryMode::kHeadLocalHeadPrompt:
      return "HL-HP";
    case GeometryMode::kHeadLocalTailPrompt:
      return "HL-TP";
    case GeometryMode::kTailLocalTailPrompt:
      return "TL-TP";
  }
  return "?";
}

std::vector<int64_t> PositionAssignment::flat_context() const {
  std::vector<int64_t> out;
  for (const auto& c : context_positions) out.insert(out.end(), c.begin(), c.end());
  return out;
}

std::vector<int64_t> PositionAssignment::chunk_starts() const {
  std::vector<int64_t> out;
  for (const auto& c : context_positions) out.push_back(c.empty() ? 0 : c.front());
  return out;
}

PositionAssignment assign_positions(const GeometryConfig& config) {
  if (config.prompt_length < 0) throw ConfigError("prompt_length must be >= 0");
  for (int len : config.chunk_lengths) {
    if (len < 0) throw ConfigError("chunk lengths must be >= 0");
  }
  const int64_t total =
      std::accumulate(config.chunk_lengths.begin(), config.chunk_lengths.end(), int64_t{0});
  const int64_t longest =
      config.chunk_lengths.empty() ? 0 : *std::max_element(config.chunk_lengths.begin(), config.chunk_lengths.end());

  const size_t k = config.chunk_lengths.size();
  std::vector<int64_t> starts(k, 0);
  int64_t prompt_start = total;
  switch (config.mode) {
    case GeometryMode::kGlobal: {
      int64_t offset = 0;
      for (size_t i = 0; i < k; ++i) {
        starts[i] = offset;
        offset += config.chunk_lengths[i];
      }
      break;
    }
    case GeometryMode::kHeadLocalHeadPrompt:
      prompt_start = longest;
      break;
    case GeometryMode::kHeadLocalTailPrompt:
      break;
    case GeometryMode::kTailLocalTailPrompt: {
      prompt_start = config.prompt_offset.value_or(total);
      int64_t suffix = 0;
      for (size_t i = k; i-- > 0;) {
        suffix += config.chunk_lengths[i];
        starts[i] = prompt_start - suffix;
      }
      if (k > 0 && starts.front() < 0) {
        throw ConfigError("TL-TP prompt offset leaves no room for the context before it");
      }
      break;
    }
  }

  PositionAssignment out;
  auto check = [&](int64_t last) {
    if (last >= config.max_position) {
      throw ConfigError("position " + std::to_string(last) + " exceeds max_position");
    }
  };
  for (size_t i = 0; i < k; ++i) {
    std::vector<int64_t> pos(static_cast<size_t>(config.chunk_lengths[i]));
    std::iota(pos.begin(), pos.end(), starts[i]);
    if (!pos.empty()) check(pos.back());
    out.context_positions.push_back(std::move(pos));
  }
  out.prompt_positions.resize(static_cast<size_t>(config.prompt_length));
  std::iota(out.prompt_positions.begin(), out.prompt_positions.end(), prompt_start);
  if (!out.prompt_positions.empty()) check(out.prompt_positions.back());
  return out;
}

PositionAssignment assign_positions(const GeometryConfig& config, std::span<const ChunkSpec> chunks) {
  if (chunks.size() != config.chunk_lengths.size()) {
    throw InputError("assign_positions: chunk count does not match config");
  }
  for (size_t i = 0; i < chunks.size(); ++i) {
    if (chunks[i].local_length() != config.chunk_lengths[i]) {
      throw InputError("assign_positions: chunk " + std::to_string(i) + " length does not match config");
    }
  }
  return assign_positions(config);
}

std::vector<double> rope_position_vector(int64_t position, int d, double base) {
  const auto theta = rope_frequencies(d, base);
  std::vector<double> v(static_cast<size_t>(d));
  for (size_t i = 0; i < theta.size(); ++i) {
    const double angle = theta[i] * static_cast<double>(position);
    v[2 * i] = std::cos(angle);
    v[2 * i + 1] = std::sin(angle);
  }
  return v;
}

double rope_cosine(int64_t a, int64_t b, int d, double base) {
  const auto va = rope_position_vector(a, d, base);
  const auto vb = rope_position_vector(b, d, base);
  double dot = 0.0;
  for (size_t i = 0; i < va.size(); ++i) dot += va[i] * vb[i];
  // Each vector has squared norm d / 2.
  return dot / (static_cast<double>(d) / 2.0);
}

RopeSimilarity rope_similarity_stats(std::span<const int64_t> prompt_positions,
                                     std::span<const int64_t> selected_positions, int d, double base) {
  if (prompt_positions.empty()) throw InputError("rope_similarity_stats: empty prompt set");
  if (selected_positions.empty()) throw InputError("rope_similarity_stats: empty selected set");
  std::vector<std::vector<double>> selected;
  selected.reserve(selected_positions.size());
  for (int64_t p : selected_positions) selected.push_back(rope_position_vector(p, d, base));
  const double norm_sq = static_cast<double>(d) / 2.0;

  RopeSimilarity out;
  out.max = -1.0;
  double sum_of_max = 0.0;
  for (int64_t p : prompt_positions) {
    const auto vp = rope_position_vector(p, d, base);
    double best = -1.0;
    for (const auto& vs : selected) {
      double dot = 0.0;
      for (size_t i = 0; i < vp.size(); ++i) dot += vp[i] * vs[i];
      best = std::max(best, dot / norm_sq);
    }
    sum_of_max += best;
    out.max = std::max(out.max, best);
  }
  out.mom = sum_of_max / static_cast<double>(prompt_positions.size());
  return out;
}

}  // namespace chunkkv
