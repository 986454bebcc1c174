// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunkkv/model.hpp"
#include "chunkkv/positional.hpp"
#include "chunkkv/reorder.hpp"
#include "chunkkv/selection.hpp"

namespace chunkkv {

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class TaskKind { kNeedle, kUniformNoise };

// How the probe ties the needle to the prompt's query token.
//   kPositional  needle key matches the query only at the needle's true
//                relative distance, so attention peaks under correct positions
//   kSemantic    needle and query share one embedding restricted to the
//                slowest rotary pairs, so attention peaks regardless of layout
enum class NeedleBinding { kPositional, kSemantic };

TaskKind parse_task_kind(std::string_view name);
std::string to_string(TaskKind k);
NeedleBinding parse_binding(std::string_view name);
std::string to_string(NeedleBinding b);

struct SyntheticTask {
  TaskKind kind = TaskKind::kNeedle;
  int length = 256;
  std::optional<double> needle_depth;  // fraction in [0, 1); drawn from the seed when unset
  int chunk_size = 64;  // fixed-size chunking when boundaries is empty
  std::vector<int> boundaries;  // passage split: increasing cut offsets in (0, length)
  int prompt_length = 8;
  // Extra distance between context and prompt in the original input; only
  // TL-TP positions see it.
  int prompt_gap = 0;
  NeedleBinding binding = NeedleBinding::kPositional;

  // Throws ConfigError.
  void validate() const;
  std::vector<int> chunk_lengths() const;
};

// Reserved ids: the needle is vocab-1 and the prompt's final (query) token is
// vocab-2. Noise never uses either.
int32_t needle_token(const ModelConfig& config);
int32_t query_token(const ModelConfig& config);

struct TaskInstance {
  std::vector<ChunkSpec> chunks;
  std::vector<int32_t> prompt;
  std::optional<int> needle_index;  // global context index

  std::vector<int32_t> context() const;
};

TaskInstance generate_task(const SyntheticTask& task, const ModelConfig& config, uint64_t seed);

// Overrides the capture layer's query/key projections with alpha times a
// projection onto the last `band` dims of every head, and writes the query and
// needle embeddings (norm beta * sqrt(d_model)).
struct ProbeConfig {
  bool enabled = true;
  std::optional<int> layer;  // defaults to the selection norm layer
  std::optional<double> alpha;  // defaults to 2 (positional) or 1 (semantic)
  double beta = 4.0;
  std::optional<int> band;  // defaults to d_head (positional) or 2 (semantic)
  uint64_t seed = 0;
};

template <typename T>
void plant_probe(Weights<T>& weights, const ProbeConfig& probe, NeedleBinding binding, int needle_index,
                 int64_t query_position);

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  ModelConfig model;
  uint64_t model_seed = 0;
  Precision precision = Precision::kFloat64;
  SyntheticTask task;
  uint64_t task_seed = 0;
  SelectionConfig selection;
  bool reorder = false;
  ChunkScoreAggregator chunk_score = ChunkScoreAggregator::kSum;
  ProbeConfig probe;
  std::string label;  // grouping key for reports; defaults to the strategy name
};

struct RunMetrics {
  double cache_fidelity = 0.0;  // Frobenius distance to the full-prefill cache
  double logit_fidelity = 0.0;  // max |logit difference| at the first generated token
  double mom = 0.0;
  double max = 0.0;
  std::optional<bool> needle_hit;
  int selected_count = 0;
  int first_token = -1;
  int reference_token = -1;
  double prefill_seconds = 0.0;
  double select_seconds = 0.0;
  double recompute_seconds = 0.0;
  double decode_seconds = 0.0;
  double ttft_seconds = 0.0;
};

inline constexpr int kRunRecordSchemaVersion = 1;

struct RunRecord {
  int schema_version = kRunRecordSchemaVersion;
  PipelineConfig config;
  RunMetrics metrics;
  std::vector<int> selected;  // indices into the final chunk order
  std::vector<uint64_t> chunk_order;
  std::vector<double> chunk_importance;  // original order; empty without reorder
  std::string timestamp;
  std::string weights_hash;
  std::string context_hash;
  std::string prompt_hash;
  std::string label() const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunRecord& record);
// Throws FormatError on a malformed record or another schema version.
RunRecord run_record_from_json(const nlohmann::json& j);

// The pipeline's weights for one task: seeded init plus the probe when enabled
// and the task has a needle.
template <typename T>
Weights<T> pipeline_weights(const PipelineConfig& config, const TaskInstance& instance);

RunRecord run_pipeline(const PipelineConfig& config);

// Reruns the record's config; wall-clock fields differ, everything else matches.
RunRecord replay(const RunRecord& record);
bool same_metrics(const RunMetrics& a, const RunMetrics& b);

// Appends one JSON line per record; safe to share across threads.
class RecordWriter {
 public:
  explicit RecordWriter(std::ostream& out) : out_(out) {}
  void write(const RunRecord& record);

 private:
  std::ostream& out_;
  std::mutex mutex_;
};

std::vector<RunRecord> read_records(std::istream& in);

// ---------------------------------------------------------------------------
// Sweeps and reports

// Runs every config on `workers` threads; records come back in config order and
// are also streamed to `writer` when given.
std::vector<RunRecord> run_all(const std::vector<PipelineConfig>& configs, int workers,
                               RecordWriter* writer = nullptr);

// base with selection.geometry set to each mode, for every seed (model seed,
// task seed and probe seed all set to the seed).
std::vector<PipelineConfig> geometry_sweep(const PipelineConfig& base, std::span<const uint64_t> seeds);
std::vector<PipelineConfig> budget_sweep(const PipelineConfig& base, std::span<const double> ratios,
                                         std::span<const uint64_t> seeds);
PipelineConfig with_seed(PipelineConfig config, uint64_t seed);

struct GroupSummary {
  std::string key;
  int runs = 0;
  double mean_cache_fidelity = 0.0;
  double mean_logit_fidelity = 0.0;
  double hit_rate = 0.0;  // over runs with a needle
  double mean_mom = 0.0;
  double mean_max = 0.0;
};

// Groups in order of first appearance.
std::vector<GroupSummary> summarize(const std::vector<RunRecord>& records,
                                    const std::function<std::string(const RunRecord&)>& key);

struct SimilarityRow {
  std::string label;
  int runs = 0;
  double mom = 0.0;
  double max = 0.0;
};

// Mean MoM / Max per label. Throws InputError on an empty set or records from
// different model configs.
std::vector<SimilarityRow> report_similarity(const std::vector<RunRecord>& records);

}  // namespace chunkkv
