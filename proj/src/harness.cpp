// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "chunkkv/kv_store.hpp"
#include "chunkkv/recompute.hpp"

namespace chunkkv {

using nlohmann::json;

namespace {

std::mt19937_64 tagged_rng(uint64_t seed, uint32_t tag) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr uint32_t kTaskTag = 0x7461736b;
constexpr uint32_t kProbeTag = 0x70726f62;

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

TaskKind parse_task_kind(std::string_view name) {
  if (name == "needle") return TaskKind::kNeedle;
  if (name == "uniform_noise" || name == "uniform-noise") return TaskKind::kUniformNoise;
  throw ConfigError("unknown task kind: " + std::string(name));
}

std::string to_string(TaskKind k) { return k == TaskKind::kNeedle ? "needle" : "uniform_noise"; }

NeedleBinding parse_binding(std::string_view name) {
  if (name == "positional") return NeedleBinding::kPositional;
  if (name == "semantic") return NeedleBinding::kSemantic;
  throw ConfigError("unknown needle binding: " + std::string(name));
}

std::string to_string(NeedleBinding b) { return b == NeedleBinding::kPositional ? "positional" : "semantic"; }

void SyntheticTask::validate() const {
  if (length < 1) throw ConfigError("task length must be >= 1");
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  if (prompt_gap < 0) throw ConfigError("prompt_gap must be >= 0");
  if (needle_depth && !(*needle_depth >= 0.0 && *needle_depth < 1.0)) {
    throw ConfigError("needle depth must lie in [0, 1)");
  }
  if (boundaries.empty()) {
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  } else {
    int prev = 0;
    for (int b : boundaries) {
      if (b <= prev || b >= length) throw ConfigError("boundaries must increase strictly inside (0, length)");
      prev = b;
    }
  }
}

std::vector<int> SyntheticTask::chunk_lengths() const {
  std::vector<int> out;
  if (boundaries.empty()) {
    for (int start = 0; start < length; start += chunk_size) out.push_back(std::min(chunk_size, length - start));
  } else {
    int prev = 0;
    for (int b : boundaries) {
      out.push_back(b - prev);
      prev = b;
    }
    out.push_back(length - prev);
  }
  return out;
}

int32_t needle_token(const ModelConfig& config) { return config.vocab_size - 1; }
int32_t query_token(const ModelConfig& config) { return config.vocab_size - 2; }

std::vector<int32_t> TaskInstance::context() const {
  std::vector<int32_t> out;
  for (const auto& c : chunks) out.insert(out.end(), c.token_ids.begin(), c.token_ids.end());
  return out;
}

TaskInstance generate_task(const SyntheticTask& task, const ModelConfig& config, uint64_t seed) {
  task.validate();
  if (config.vocab_size < 3) throw ConfigError("vocab_size must leave room for the reserved tokens");
  auto rng = tagged_rng(seed, kTaskTag);
  std::uniform_int_distribution<int32_t> noise(0, config.vocab_size - 3);

  std::vector<int32_t> context(static_cast<size_t>(task.length));
  for (auto& t : context) t = noise(rng);
  TaskInstance inst;
  inst.prompt.resize(static_cast<size_t>(task.prompt_length));
  for (auto& t : inst.prompt) t = noise(rng);
  inst.prompt.back() = query_token(config);

  if (task.kind == TaskKind::kNeedle) {
    int idx = 0;
    if (task.needle_depth) {
      idx = std::min(task.length - 1, static_cast<int>(std::floor(*task.needle_depth * task.length)));
    } else {
      idx = std::uniform_int_distribution<int>(0, task.length - 1)(rng);
    }
    context[static_cast<size_t>(idx)] = needle_token(config);
    inst.needle_index = idx;
  }

  int offset = 0;
  int order = 0;
  for (int len : task.chunk_lengths()) {
    ChunkSpec c;
    c.token_ids.assign(context.begin() + offset, context.begin() + offset + len);
    c.chunk_id = content_hash(c.token_ids) ^ static_cast<uint64_t>(order);
    c.declared_order_index = order++;
    inst.chunks.push_back(std::move(c));
    offset += len;
  }
  return inst;
}

template <typename T>
void plant_probe(Weights<T>& weights, const ProbeConfig& probe, NeedleBinding binding, int needle_index,
                 int64_t query_position) {
  const auto& c = weights.config;
  const int layer = probe.layer.value_or(default_norm_layer(c.n_layers));
  if (layer < 0 || layer >= c.n_layers) throw ConfigError("probe layer out of range");
  const int band = probe.band.value_or(binding == NeedleBinding::kPositional ? c.d_head : 2);
  if (band < 1 || band > c.d_head || band % 2 != 0) throw ConfigError("probe band must be even and in [2, d_head]");
  const int d = c.d_model();

  Vector<T> mask = Vector<T>::Zero(d);
  for (int h = 0; h < c.n_heads; ++h) {
    for (int i = c.d_head - band; i < c.d_head; ++i) mask(h * c.d_head + i) = T(1);
  }
  auto& lw = weights.layers[static_cast<size_t>(layer)];
  const double alpha = probe.alpha.value_or(binding == NeedleBinding::kPositional ? 2.0 : 1.0);
  lw.wq = (static_cast<T>(alpha) * mask).asDiagonal();
  lw.wk = lw.wq;

  auto rng = tagged_rng(probe.seed, kProbeTag);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> u(static_cast<size_t>(d));
  double sq = 0.0;
  for (int i = 0; i < d; ++i) {
    u[static_cast<size_t>(i)] = normal(rng) * static_cast<double>(mask(i));
    sq += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
  }
  const double scale = probe.beta / std::sqrt(sq / d);
  std::vector<double> needle = u;
  if (binding == NeedleBinding::kPositional) {
    for (int h = 0; h < c.n_heads; ++h) {
      apply_rope_inplace<double>(std::span<double>(needle).subspan(static_cast<size_t>(h * c.d_head), c.d_head),
                                 query_position - needle_index, c.rope_base);
    }
  }
  for (int i = 0; i < d; ++i) {
    weights.embedding(query_token(c), i) = static_cast<T>(scale * u[static_cast<size_t>(i)]);
    weights.embedding(needle_token(c), i) = static_cast<T>(scale * needle[static_cast<size_t>(i)]);
  }
}

template void plant_probe<float>(Weights<float>&, const ProbeConfig&, NeedleBinding, int, int64_t);
template void plant_probe<double>(Weights<double>&, const ProbeConfig&, NeedleBinding, int, int64_t);

// ---------------------------------------------------------------------------
// JSON

namespace {

json budget_json(const Budget& b) {
  return b.kind == Budget::Kind::kCount ? json{{"kind", "count"}, {"value", b.count}}
                                        : json{{"kind", "ratio"}, {"value", b.ratio}};
}

Budget budget_from(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "count") return Budget::top_k(j.at("value").get<int>());
  if (kind == "ratio") return Budget::of_ratio(j.at("value").get<double>());
  throw FormatError("bad budget kind: " + kind);
}

template <typename V>
json opt(const std::optional<V>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename V>
std::optional<V> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<V>();
}

}  // namespace

json to_json(const PipelineConfig& c) {
  return json{
      {"model",
       {{"n_layers", c.model.n_layers},
        {"n_heads", c.model.n_heads},
        {"d_head", c.model.d_head},
        {"d_ff", c.model.d_ff},
        {"vocab_size", c.model.vocab_size},
        {"rope_base", c.model.rope_base},
        {"max_position", c.model.max_position}}},
      {"model_seed", c.model_seed},
      {"precision", std::string(to_string(c.precision))},
      {"task",
       {{"kind", to_string(c.task.kind)},
        {"length", c.task.length},
        {"needle_depth", opt(c.task.needle_depth)},
        {"chunk_size", c.task.chunk_size},
        {"boundaries", c.task.boundaries},
        {"prompt_length", c.task.prompt_length},
        {"prompt_gap", c.task.prompt_gap},
        {"binding", to_string(c.task.binding)}}},
      {"task_seed", c.task_seed},
      {"selection",
       {{"strategy", to_string(c.selection.strategy)},
        {"budget", budget_json(c.selection.budget)},
        {"norm_layer", opt(c.selection.norm_layer)},
        {"geometry", to_string(c.selection.geometry)},
        {"prompt_offset", opt(c.selection.prompt_offset)},
        {"seed", c.selection.seed},
        {"cacheblend_layers", c.selection.cacheblend_layers},
        {"head_aggregation", "mean_over_heads"}}},
      {"reorder", c.reorder},
      {"chunk_score", to_string(c.chunk_score)},
      {"probe",
       {{"enabled", c.probe.enabled},
        {"layer", opt(c.probe.layer)},
        {"alpha", opt(c.probe.alpha)},
        {"beta", c.probe.beta},
        {"band", opt(c.probe.band)},
        {"seed", c.probe.seed}}},
      {"label", c.label},
  };
}

PipelineConfig pipeline_config_from_json(const json& j) {
  try {
    PipelineConfig c;
    const auto& m = j.at("model");
    c.model.n_layers = m.at("n_layers");
    c.model.n_heads = m.at("n_heads");
    c.model.d_head = m.at("d_head");
    c.model.d_ff = m.at("d_ff");
    c.model.vocab_size = m.at("vocab_size");
    c.model.rope_base = m.at("rope_base");
    c.model.max_position = m.at("max_position");
    c.model_seed = j.at("model_seed");
    c.precision = parse_precision(j.at("precision").get<std::string>());
    const auto& t = j.at("task");
    c.task.kind = parse_task_kind(t.at("kind").get<std::string>());
    c.task.length = t.at("length");
    c.task.needle_depth = opt_from<double>(t, "needle_depth");
    c.task.chunk_size = t.at("chunk_size");
    c.task.boundaries = t.at("boundaries").get<std::vector<int>>();
    c.task.prompt_length = t.at("prompt_length");
    c.task.prompt_gap = t.at("prompt_gap");
    c.task.binding = parse_binding(t.at("binding").get<std::string>());
    c.task_seed = j.at("task_seed");
    const auto& s = j.at("selection");
    c.selection.strategy = parse_strategy(s.at("strategy").get<std::string>());
    c.selection.budget = budget_from(s.at("budget"));
    c.selection.norm_layer = opt_from<int>(s, "norm_layer");
    c.selection.geometry = parse_geometry(s.at("geometry").get<std::string>());
    c.selection.prompt_offset = opt_from<int64_t>(s, "prompt_offset");
    c.selection.seed = s.at("seed");
    c.selection.cacheblend_layers = s.at("cacheblend_layers");
    c.reorder = j.at("reorder");
    c.chunk_score = parse_chunk_score(j.at("chunk_score").get<std::string>());
    const auto& p = j.at("probe");
    c.probe.enabled = p.at("enabled");
    c.probe.layer = opt_from<int>(p, "layer");
    c.probe.alpha = opt_from<double>(p, "alpha");
    c.probe.beta = p.at("beta");
    c.probe.band = opt_from<int>(p, "band");
    c.probe.seed = p.at("seed");
    c.label = j.value("label", "");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed run config: ") + e.what());
  }
}

json to_json(const RunRecord& r) {
  const auto& m = r.metrics;
  std::vector<std::string> order;
  for (auto id : r.chunk_order) order.push_back(hex64(id));
  return json{
      {"schema_version", r.schema_version},
      {"timestamp", r.timestamp},
      {"config", to_json(r.config)},
      {"metrics",
       {{"cache_fidelity", m.cache_fidelity},
        {"logit_fidelity", m.logit_fidelity},
        {"mom", m.mom},
        {"max", m.max},
        {"needle_hit", opt(m.needle_hit)},
        {"selected_count", m.selected_count},
        {"first_token", m.first_token},
        {"reference_token", m.reference_token},
        {"prefill_seconds", m.prefill_seconds},
        {"select_seconds", m.select_seconds},
        {"recompute_seconds", m.recompute_seconds},
        {"decode_seconds", m.decode_seconds},
        {"ttft_seconds", m.ttft_seconds}}},
      {"selected", r.selected},
      {"chunk_order", order},
      {"chunk_importance", r.chunk_importance},
      {"hashes", {{"weights", r.weights_hash}, {"context", r.context_hash}, {"prompt", r.prompt_hash}}},
  };
}

RunRecord run_record_from_json(const json& j) {
  try {
    RunRecord r;
    r.schema_version = j.at("schema_version");
    if (r.schema_version != kRunRecordSchemaVersion) {
      throw VersionError("unsupported run record schema " + std::to_string(r.schema_version));
    }
    r.timestamp = j.at("timestamp");
    r.config = pipeline_config_from_json(j.at("config"));
    const auto& m = j.at("metrics");
    r.metrics.cache_fidelity = m.at("cache_fidelity");
    r.metrics.logit_fidelity = m.at("logit_fidelity");
    r.metrics.mom = m.at("mom");
    r.metrics.max = m.at("max");
    r.metrics.needle_hit = opt_from<bool>(m, "needle_hit");
    r.metrics.selected_count = m.at("selected_count");
    r.metrics.first_token = m.at("first_token");
    r.metrics.reference_token = m.at("reference_token");
    r.metrics.prefill_seconds = m.at("prefill_seconds");
    r.metrics.select_seconds = m.at("select_seconds");
    r.metrics.recompute_seconds = m.at("recompute_seconds");
    r.metrics.decode_seconds = m.at("decode_seconds");
    r.metrics.ttft_seconds = m.at("ttft_seconds");
    r.selected = j.at("selected").get<std::vector<int>>();
    for (const auto& s : j.at("chunk_order")) r.chunk_order.push_back(std::stoull(s.get<std::string>(), nullptr, 16));
    r.chunk_importance = j.at("chunk_importance").get<std::vector<double>>();
    r.weights_hash = j.at("hashes").at("weights");
    r.context_hash = j.at("hashes").at("context");
    r.prompt_hash = j.at("hashes").at("prompt");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
}

std::string RunRecord::label() const {
  return config.label.empty() ? to_string(config.selection.strategy) : config.label;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <typename T>
Vector<T> decode_logits(const Weights<T>& weights, const AssembledCache<T>& cache, std::span<const int32_t> prompt) {
  const int n = cache.context_length;
  std::vector<int64_t> global(static_cast<size_t>(n));
  std::iota(global.begin(), global.end(), 0);
  const auto injected = context_kv_at(cache, weights.config, global);
  ForwardRequest<T> req;
  req.token_ids.assign(prompt.begin(), prompt.end());
  req.positions.resize(prompt.size());
  std::iota(req.positions.begin(), req.positions.end(), int64_t{n});
  req.injected_kv = injected;
  return forward(weights, req).logits;
}

template <typename T>
int argmax(const Vector<T>& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

template <typename T>
RunRecord run_impl(const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

  cfg.model.validate();
  cfg.task.validate();
  if (cfg.reorder && cfg.selection.strategy != Strategy::kAttentionNorm) {
    throw ConfigError("reordering requires the attention-norm strategy");
  }
  const int n = cfg.task.length;
  const int m = cfg.task.prompt_length;
  if (static_cast<int64_t>(n) + m + cfg.task.prompt_gap > cfg.model.max_position) {
    throw ConfigError("context plus prompt exceed max_position");
  }
  const auto inst = generate_task(cfg.task, cfg.model, cfg.task_seed);
  const auto weights = pipeline_weights<T>(cfg, inst);
  const int norm_layer = cfg.selection.norm_layer.value_or(default_norm_layer(cfg.model.n_layers));

  RunRecord rec;
  rec.config = cfg;
  rec.timestamp = utc_timestamp();
  rec.weights_hash = hex64(fingerprint(weights));
  rec.prompt_hash = hex64(content_hash(inst.prompt));

  const auto t0 = clock::now();
  std::vector<ChunkKV<T>> chunk_kvs;
  for (const auto& c : inst.chunks) chunk_kvs.push_back(prefill_chunk(weights, c));
  const auto t1 = clock::now();

  AssembledCache<T> cache;
  SelectionResult sel;
  std::vector<int> order(inst.chunks.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.reorder) {
    ReorderConfig rc;
    rc.budget = cfg.selection.budget;
    rc.aggregator = cfg.chunk_score;
    rc.norm_layer = norm_layer;
    auto out = reorder_and_reselect(weights, std::span<const ChunkKV<T>>(chunk_kvs), inst.prompt, rc);
    cache = std::move(out.cache);
    sel = std::move(out.selection);
    order = out.plan.permutation;
    rec.chunk_importance = out.plan.chunk_importance;
  } else {
    cache = assemble(std::span<const ChunkKV<T>>(chunk_kvs));
    SelectionConfig sc = cfg.selection;
    sc.norm_layer = norm_layer;
    if (!sc.prompt_offset) sc.prompt_offset = static_cast<int64_t>(n) + cfg.task.prompt_gap;
    sel = select_tokens(weights, cache, inst.chunks, inst.prompt, sc);
  }
  const auto t2 = clock::now();

  const auto plan = make_plan(cache, sel.selected);
  const auto recomputed = recompute_selected(weights, cache, plan);
  const auto t3 = clock::now();
  const auto logits = decode_logits(weights, recomputed, inst.prompt);
  const auto t4 = clock::now();

  // Reference: one causal prefill over the context in its final order.
  std::vector<int32_t> context;
  std::vector<int> chunk_offset(inst.chunks.size());
  for (int slot : order) {
    chunk_offset[static_cast<size_t>(slot)] = static_cast<int>(context.size());
    const auto& tokens = inst.chunks[static_cast<size_t>(slot)].token_ids;
    context.insert(context.end(), tokens.begin(), tokens.end());
  }
  const auto full = prefill_sequence(weights, 0, context, 0, Provenance::kFullPrefill);
  const auto reference = assemble(std::span<const ChunkKV<T>>(&full, 1));
  const auto ref_logits = decode_logits(weights, reference, inst.prompt);

  std::vector<int64_t> global(static_cast<size_t>(n));
  std::iota(global.begin(), global.end(), 0);
  auto& met = rec.metrics;
  met.cache_fidelity = cache_distance(recomputed, reference, global, cfg.model);
  met.logit_fidelity = (logits - ref_logits).cwiseAbs().maxCoeff();
  met.first_token = argmax(logits);
  met.reference_token = argmax(ref_logits);
  met.selected_count = static_cast<int>(sel.selected.size());
  if (!sel.selected.empty()) {
    std::vector<int64_t> prompt_pos(static_cast<size_t>(m));
    std::iota(prompt_pos.begin(), prompt_pos.end(), int64_t{n});
    const std::vector<int64_t> sel_pos(sel.selected.begin(), sel.selected.end());
    const auto sim = rope_similarity_stats(prompt_pos, sel_pos, cfg.model.d_head, cfg.model.rope_base);
    met.mom = sim.mom;
    met.max = sim.max;
  }
  if (inst.needle_index) {
    // Locate the needle's chunk in the final order.
    int start = 0;
    for (size_t slot = 0; slot < inst.chunks.size(); ++slot) {
      const int len = inst.chunks[slot].local_length();
      if (*inst.needle_index < start + len) {
        const int idx = chunk_offset[slot] + (*inst.needle_index - start);
        met.needle_hit = std::binary_search(sel.selected.begin(), sel.selected.end(), idx);
        break;
      }
      start += len;
    }
  }
  met.prefill_seconds = seconds(t0, t1);
  met.select_seconds = seconds(t1, t2);
  met.recompute_seconds = seconds(t2, t3);
  met.decode_seconds = seconds(t3, t4);
  met.ttft_seconds = seconds(t0, t4);

  rec.selected = sel.selected;
  for (int slot : order) rec.chunk_order.push_back(inst.chunks[static_cast<size_t>(slot)].chunk_id);
  rec.context_hash = hex64(content_hash(context));
  return rec;
}

}  // namespace

template <typename T>
Weights<T> pipeline_weights(const PipelineConfig& config, const TaskInstance& instance) {
  auto weights = init_weights<T>(config.model, config.model_seed);
  if (config.probe.enabled && instance.needle_index) {
    ProbeConfig probe = config.probe;
    if (!probe.layer) probe.layer = config.selection.norm_layer.value_or(default_norm_layer(config.model.n_layers));
    plant_probe(weights, probe, config.task.binding, *instance.needle_index,
                static_cast<int64_t>(config.task.length) + config.task.prompt_length - 1);
  }
  return weights;
}

template Weights<float> pipeline_weights<float>(const PipelineConfig&, const TaskInstance&);
template Weights<double> pipeline_weights<double>(const PipelineConfig&, const TaskInstance&);

RunRecord run_pipeline(const PipelineConfig& config) {
  return config.precision == Precision::kFloat32 ? run_impl<float>(config) : run_impl<double>(config);
}

RunRecord replay(const RunRecord& record) { return run_pipeline(record.config); }

bool same_metrics(const RunMetrics& a, const RunMetrics& b) {
  return a.cache_fidelity == b.cache_fidelity && a.logit_fidelity == b.logit_fidelity && a.mom == b.mom &&
         a.max == b.max && a.needle_hit == b.needle_hit && a.selected_count == b.selected_count &&
         a.first_token == b.first_token && a.reference_token == b.reference_token;
}

void RecordWriter::write(const RunRecord& record) {
  const auto line = to_json(record).dump();
  std::lock_guard guard(mutex_);
  out_ << line << '\n';
  out_.flush();
}

std::vector<RunRecord> read_records(std::istream& in) {
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad record line: ") + e.what());
    }
    out.push_back(run_record_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<RunRecord> run_all(const std::vector<PipelineConfig>& configs, int workers, RecordWriter* writer) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  std::vector<RunRecord> out(configs.size());
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (size_t i = next++; i < configs.size(); i = next++) {
      try {
        out[i] = run_pipeline(configs[i]);
        if (writer) writer->write(out[i]);
      } catch (...) {
        std::lock_guard guard(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const size_t n_threads = std::min<size_t>(static_cast<size_t>(workers), configs.size());
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

PipelineConfig with_seed(PipelineConfig config, uint64_t seed) {
  config.model_seed = seed;
  config.task_seed = seed;
  config.probe.seed = seed;
  config.selection.seed = seed;
  return config;
}

std::vector<PipelineConfig> geometry_sweep(const PipelineConfig& base, std::span<const uint64_t> seeds) {
  std::vector<PipelineConfig> out;
  for (auto seed : seeds) {
    for (auto mode : kAllGeometries) {
      auto c = with_seed(base, seed);
      c.selection.geometry = mode;
      c.label = to_string(mode);
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<PipelineConfig> budget_sweep(const PipelineConfig& base, std::span<const double> ratios,
                                         std::span<const uint64_t> seeds) {
  std::vector<PipelineConfig> out;
  for (auto seed : seeds) {
    for (double r : ratios) {
      auto c = with_seed(base, seed);
      c.selection.budget = Budget::of_ratio(r);
      c.label = c.selection.budget.describe();
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<GroupSummary> summarize(const std::vector<RunRecord>& records,
                                    const std::function<std::string(const RunRecord&)>& key) {
  std::vector<GroupSummary> out;
  std::map<std::string, size_t> index;
  std::vector<int> needle_runs;
  for (const auto& r : records) {
    const auto k = key(r);
    auto [it, inserted] = index.emplace(k, out.size());
    if (inserted) {
      out.push_back({k});
      needle_runs.push_back(0);
    }
    auto& g = out[it->second];
    g.runs += 1;
    g.mean_cache_fidelity += r.metrics.cache_fidelity;
    g.mean_logit_fidelity += r.metrics.logit_fidelity;
    g.mean_mom += r.metrics.mom;
    g.mean_max += r.metrics.max;
    if (r.metrics.needle_hit) {
      needle_runs[it->second] += 1;
      g.hit_rate += *r.metrics.needle_hit ? 1.0 : 0.0;
    }
  }
  for (size_t i = 0; i < out.size(); ++i) {
    auto& g = out[i];
    g.mean_cache_fidelity /= g.runs;
    g.mean_logit_fidelity /= g.runs;
    g.mean_mom /= g.runs;
    g.mean_max /= g.runs;
    if (needle_runs[i] > 0) g.hit_rate /= needle_runs[i];
  }
  return out;
}

std::vector<SimilarityRow> report_similarity(const std::vector<RunRecord>& records) {
  if (records.empty()) throw InputError("report_similarity: no records");
  for (const auto& r : records) {
    if (!(r.config.model == records.front().config.model)) {
      throw InputError("report_similarity: records come from different model configs");
    }
  }
  std::vector<SimilarityRow> rows;
  for (const auto& g : summarize(records, [](const RunRecord& r) { return r.label(); })) {
    rows.push_back({g.key, g.runs, g.mean_mom, g.mean_max});
  }
  return rows;
}

}  // namespace chunkkv
