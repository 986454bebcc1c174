// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "chunkkv/common.hpp"

namespace chunkkv {

// Dimensions of the toy decoder. d_model is derived as n_heads * d_head.
struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_head = 16;
  int d_ff = 128;
  int vocab_size = 256;
  double rope_base = 10000.0;
  int max_position = 8192;

  int d_model() const { return n_heads * d_head; }

  // Throws ConfigError when a dimension is out of range or d_head is odd.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Vector<T> attn_norm;  // RMSNorm gain, d_model
  Matrix<T> wq, wk, wv, wo;  // d_model x d_model, applied as x * W^T
  Vector<T> mlp_norm;
  Matrix<T> w_gate, w_up;  // d_ff x d_model
  Matrix<T> w_down;  // d_model x d_ff
};

// Parameters of a pre-norm decoder: RMSNorm, multi-head attention with RoPE,
// gated SiLU MLP, no biases.
template <typename T>
struct Weights {
  ModelConfig config;
  Matrix<T> embedding;  // vocab_size x d_model
  std::vector<LayerWeights<T>> layers;
  Vector<T> final_norm;
  Matrix<T> lm_head;  // vocab_size x d_model
};

// Gaussian initialization: embeddings N(0, 1); every projection N(0, 1/fan_in)
// (fan_in is d_model everywhere except w_down, whose input is d_ff); norm gains
// are one. Same (config, seed) yields bitwise-identical weights.
template <typename T>
Weights<T> init_weights(const ModelConfig& config, uint64_t seed);

// Hash over the config and every parameter byte; identifies the model in
// cache files.
template <typename T>
uint64_t fingerprint(const Weights<T>& weights);

// Weight file: magic "IFKV", version, config, precision tag, then named
// tensors in the fixed order embedding, layers.{i}.{attn_norm, wq, wk, wv,
// wo, mlp_norm, w_gate, w_up, w_down}, final_norm, lm_head.
inline constexpr uint32_t kWeightFileVersion = 1;

template <typename T>
void save_weights(const Weights<T>& weights, const std::filesystem::path& path);

// Converts to T if the file was written at the other precision.
template <typename T>
Weights<T> load_weights(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Rotary embedding

// theta_i = base^(-2i/d) for i in [0, d/2).
std::vector<double> rope_frequencies(int d, double base);

// Rotates each pair (x[2i], x[2i+1]) by theta_i * position, in place.
// Throws InputError on odd length.
template <typename T>
void apply_rope_inplace(std::span<T> x, int64_t position, double base);

template <typename T>
std::vector<T> apply_rope(std::span<const T> x, int64_t position, double base);

// Rotates every head slice of each row; row r is rotated by deltas[r].
// Rotations compose, so a key rotated at p becomes the key rotated at q when
// passed delta q - p.
template <typename T>
void rotate_rows(Matrix<T>& rows, std::span<const int64_t> deltas, int n_heads,
                 int d_head, double base);

// ---------------------------------------------------------------------------
// Forward pass

// Per-layer keys and values, one row per token, n_heads * d_head columns
// (head h occupies columns [h * d_head, (h + 1) * d_head)). Keys are stored
// after RoPE.
template <typename T>
struct LayerKV {
  Matrix<T> keys;
  Matrix<T> values;
};

// Which keys each query row may attend to. Key indices address the combined
// sequence [injected prefix rows..., request rows...].
struct AttentionMask {
  enum class Kind { kCausal, kExplicit };

  Kind kind = Kind::kCausal;
  // For kExplicit: allowed key indices per query row. A row may reference any
  // prefix key and request keys up to and including itself.
  std::vector<std::vector<int32_t>> allowed;

  static AttentionMask causal() { return {}; }
  static AttentionMask explicit_rows(std::vector<std::vector<int32_t>> rows) {
    return {Kind::kExplicit, std::move(rows)};
  }
};

template <typename T>
struct ForwardRequest {
  std::vector<int32_t> token_ids;
  std::vector<int64_t> positions;  // one per token, any order
  AttentionMask mask;
  // Empty, or one entry per layer with identical row counts. Keys must already
  // be rotated to the positions they should occupy.
  std::span<const LayerKV<T>> injected_kv;
  std::vector<int> capture_layers;  // zero-based
  int num_layers = -1;  // run only the first num_layers layers; -1 runs all
  bool keep_hidden = false;
};

template <typename T>
struct ForwardResult {
  std::vector<Matrix<T>> hidden;  // output of each layer, when keep_hidden
  std::vector<LayerKV<T>> kv;  // request rows only
  // layer -> per-head attention weights, query rows x (prefix + request) keys.
  std::map<int, std::vector<Matrix<T>>> attention;
  Vector<T> logits;  // last token; empty when num_layers truncates the model
};

template <typename T>
ForwardResult<T> forward(const Weights<T>& weights, const ForwardRequest<T>& request);

}  // namespace chunkkv
