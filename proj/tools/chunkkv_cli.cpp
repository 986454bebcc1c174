// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 1 failed check, 2 bad
// configuration, 3 bad data or file.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "chunkkv/harness.hpp"
#include "chunkkv/kv_store.hpp"
#include "chunkkv/recompute.hpp"
#include "chunkkv/reorder.hpp"
#include "chunkkv/selection.hpp"
#include "chunkkv/seqpar.hpp"

namespace chunkkv {
namespace {

constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

// Flat option state; every field maps to one command-line flag and one config
// file key of the same name.
struct Options {
  uint64_t seed = 0;
  std::string precision = "f64";

  ModelConfig model;
  std::optional<uint64_t> model_seed;

  std::string task = "needle";
  int length = 256;
  std::optional<double> depth;
  int chunk_size = 64;
  std::vector<int> boundaries;
  int prompt_length = 8;
  int prompt_gap = 0;
  std::string binding = "positional";
  std::optional<uint64_t> task_seed;

  std::string strategy = "attention-norm";
  std::optional<int> topk;
  double ratio = 0.15;
  std::string geometry = "GLOBAL";
  std::optional<int> norm_layer;
  std::optional<int64_t> prompt_offset;
  int cacheblend_layers = 1;

  bool reorder = false;
  std::string chunk_score = "sum";
  bool sequential = false;

  bool no_probe = false;
  std::optional<int> probe_layer;
  std::optional<double> probe_alpha;
  double probe_beta = 4.0;
  std::optional<int> probe_band;

  int seeds = 1;
  int workers = 0;
  std::string records;
  std::string label;
};

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kFloat32;
  if (s == "f64") return Precision::kFloat64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

PipelineConfig pipeline_config(const Options& o) {
  PipelineConfig c;
  c.model = o.model;
  c.model.validate();
  c.model_seed = o.model_seed.value_or(o.seed);
  c.precision = parse_precision(o.precision);
  c.task.kind = parse_task_kind(o.task);
  c.task.length = o.length;
  c.task.needle_depth = o.depth;
  c.task.chunk_size = o.chunk_size;
  c.task.boundaries = o.boundaries;
  c.task.prompt_length = o.prompt_length;
  c.task.prompt_gap = o.prompt_gap;
  c.task.binding = parse_binding(o.binding);
  c.task.validate();
  c.task_seed = o.task_seed.value_or(o.seed);
  c.selection.strategy = parse_strategy(o.strategy);
  c.selection.budget = o.topk ? Budget::top_k(*o.topk) : Budget::of_ratio(o.ratio);
  c.selection.geometry = parse_geometry(o.geometry);
  c.selection.norm_layer = o.norm_layer;
  c.selection.prompt_offset = o.prompt_offset;
  c.selection.seed = o.seed;
  c.selection.cacheblend_layers = o.cacheblend_layers;
  if (o.reorder && o.sequential) throw ConfigError("reorder requested on sequentially structured input");
  c.reorder = o.reorder;
  c.chunk_score = parse_chunk_score(o.chunk_score);
  c.probe.enabled = !o.no_probe;
  c.probe.layer = o.probe_layer;
  c.probe.alpha = o.probe_alpha;
  c.probe.beta = o.probe_beta;
  c.probe.band = o.probe_band;
  c.probe.seed = o.seed;
  c.label = o.label;
  return c;
}

std::vector<uint64_t> seed_list(const Options& o) {
  if (o.seeds < 1) throw ConfigError("--seeds must be at least 1");
  std::vector<uint64_t> out(static_cast<size_t>(o.seeds));
  std::iota(out.begin(), out.end(), o.seed);
  return out;
}

int worker_count(const Options& o) {
  if (o.workers > 0) return o.workers;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

// Runs configs and streams records to --records (appending) when given.
std::vector<RunRecord> execute(const Options& o, const std::vector<PipelineConfig>& configs) {
  if (o.records.empty()) return run_all(configs, worker_count(o));
  std::ofstream out(o.records, std::ios::app);
  if (!out) throw InputError("cannot open records file " + o.records);
  RecordWriter writer(out);
  return run_all(configs, worker_count(o), &writer);
}

void print_summary(const std::vector<GroupSummary>& groups) {
  std::printf("group\truns\thit_rate\tcache_fidelity\tlogit_fidelity\tmom\tmax\n");
  for (const auto& g : groups) {
    std::printf("%s\t%d\t%.4f\t%.6g\t%.6g\t%.4f\t%.4f\n", g.key.c_str(), g.runs, g.hit_rate, g.mean_cache_fidelity,
                g.mean_logit_fidelity, g.mean_mom, g.mean_max);
  }
}

std::vector<RunRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open records file " + path);
  return read_records(in);
}

// Selection (and optional reorder) over freshly prefilled or cached chunks.
template <typename T>
struct Staged {
  TaskInstance instance;
  Weights<T> weights;
  std::vector<ChunkKV<T>> chunks;
  AssembledCache<T> cache;
  SelectionResult selection;
};

template <typename T>
std::vector<ChunkKV<T>> prefill_all(const Weights<T>& weights, const TaskInstance& inst, const std::string& cache_dir) {
  std::vector<ChunkKV<T>> out;
  if (cache_dir.empty()) {
    out = run_parallel_prefill(weights, std::span<const ChunkSpec>(inst.chunks), 1).caches;
  } else {
    CacheRegistry<T> registry(cache_dir);
    const auto fp = fingerprint(weights);
    for (const auto& c : inst.chunks) out.push_back(registry.get_or_prefill(weights, fp, c));
  }
  return out;
}

template <typename T>
Staged<T> stage(const PipelineConfig& cfg, const std::string& cache_dir) {
  Staged<T> s{generate_task(cfg.task, cfg.model, cfg.task_seed), {}, {}, {}, {}};
  s.weights = pipeline_weights<T>(cfg, s.instance);
  s.chunks = prefill_all(s.weights, s.instance, cache_dir);
  const int norm_layer = cfg.selection.norm_layer.value_or(default_norm_layer(cfg.model.n_layers));
  if (cfg.reorder) {
    ReorderConfig rc;
    rc.budget = cfg.selection.budget;
    rc.aggregator = cfg.chunk_score;
    rc.norm_layer = norm_layer;
    auto out = reorder_and_reselect(s.weights, std::span<const ChunkKV<T>>(s.chunks), s.instance.prompt, rc);
    s.cache = std::move(out.cache);
    s.selection = std::move(out.selection);
  } else {
    s.cache = assemble(std::span<const ChunkKV<T>>(s.chunks));
    SelectionConfig sc = cfg.selection;
    sc.norm_layer = norm_layer;
    if (!sc.prompt_offset) sc.prompt_offset = static_cast<int64_t>(cfg.task.length) + cfg.task.prompt_gap;
    s.selection = select_tokens(s.weights, s.cache, s.instance.chunks, s.instance.prompt, sc);
  }
  return s;
}

template <typename T>
int cmd_select(const PipelineConfig& cfg, const std::string& cache_dir) {
  const auto s = stage<T>(cfg, cache_dir);
  std::printf("# strategy %s geometry %s budget %s selected %zu\n", to_string(s.selection.strategy).c_str(),
              to_string(s.selection.geometry).c_str(), cfg.selection.budget.describe().c_str(),
              s.selection.selected.size());
  std::printf("index\tchunk_id\tlocal_index\ttoken\tscore\n");
  for (int i : s.selection.selected) {
    const auto& org = s.cache.origin[static_cast<size_t>(i)];
    const double score = s.selection.scores.empty() ? 0.0 : s.selection.scores[static_cast<size_t>(i)];
    std::printf("%d\t%016llx\t%d\t%d\t%.6g\n", i, static_cast<unsigned long long>(org.chunk_id), org.local_index,
                s.cache.token_ids[static_cast<size_t>(i)], score);
  }
  return 0;
}

template <typename T>
int cmd_recompute(const PipelineConfig& cfg, const std::string& cache_dir, int overhead_reps) {
  const auto s = stage<T>(cfg, cache_dir);
  const auto plan = make_plan(s.cache, s.selection.selected);
  const auto fresh = recompute_selected(s.weights, s.cache, plan);

  std::vector<int32_t> context;
  for (uint64_t id : s.cache.chunk_ids) {
    const auto it = std::find_if(s.instance.chunks.begin(), s.instance.chunks.end(),
                                 [&](const ChunkSpec& c) { return c.chunk_id == id; });
    context.insert(context.end(), it->token_ids.begin(), it->token_ids.end());
  }
  const auto full = prefill_sequence(s.weights, 0, context, 0, Provenance::kFullPrefill);
  const auto reference = assemble(std::span<const ChunkKV<T>>(&full, 1));
  std::vector<int64_t> global(context.size());
  std::iota(global.begin(), global.end(), 0);
  std::printf("selected\t%zu\n", plan.selected.size());
  std::printf("fidelity_before\t%.6g\n", cache_distance(s.cache, reference, global, cfg.model));
  std::printf("fidelity_after\t%.6g\n", cache_distance(fresh, reference, global, cfg.model));
  if (overhead_reps > 0) {
    const auto r = measure_overhead(s.weights, s.cache, plan, overhead_reps);
    std::printf("ideal_flops\t%.6g\n", r.ideal_flops);
    std::printf("predicted_seconds\t%.6g\n", r.predicted_seconds);
    std::printf("measured_seconds\t%.6g\n", r.measured_seconds);
    std::printf("overhead_factor\t%.4f%s\n", r.overhead_factor, r.degenerate ? "\t(nothing selected)" : "");
  }
  return 0;
}

template <typename T>
int cmd_prefill(const PipelineConfig& cfg, const std::string& cache_dir) {
  const auto inst = generate_task(cfg.task, cfg.model, cfg.task_seed);
  const auto weights = pipeline_weights<T>(cfg, inst);
  CacheRegistry<T> registry(cache_dir);
  const auto fp = fingerprint(weights);
  std::printf("chunk_id\tlength\tpath\n");
  for (const auto& c : inst.chunks) {
    registry.get_or_prefill(weights, fp, c);
    std::printf("%016llx\t%d\t%s\n", static_cast<unsigned long long>(c.chunk_id), c.local_length(),
                registry.path_for(fp, c.token_ids).string().c_str());
  }
  return 0;
}

int cmd_assemble(const std::vector<std::string>& files) {
  std::vector<ChunkKV<float>> chunks;
  for (const auto& f : files) chunks.push_back(load_cache<float>(f));
  const auto cache = assemble(std::span<const ChunkKV<float>>(chunks));
  std::printf("context_length\t%d\n", cache.context_length);
  std::printf("chunk_id\tfirst_row\tlength\tprovenance\n");
  int row = 0;
  for (size_t i = 0; i < chunks.size(); ++i) {
    std::printf("%016llx\t%d\t%d\t%s\n", static_cast<unsigned long long>(cache.chunk_ids[i]), row,
                cache.chunk_lengths[i], to_string(chunks[i].provenance).c_str());
    row += cache.chunk_lengths[i];
  }
  return 0;
}

int cmd_inspect(const std::string& file) {
  const auto h = read_cache_header(file);
  std::printf("version\t%u\n", h.version);
  std::printf("model_fingerprint\t%016llx\n", static_cast<unsigned long long>(h.model_fingerprint));
  std::printf("chunk_id\t%016llx\n", static_cast<unsigned long long>(h.chunk_id));
  std::printf("length\t%u\n", h.length);
  std::printf("n_layers\t%u\n", h.n_layers);
  std::printf("n_heads\t%u\n", h.n_heads);
  std::printf("d_head\t%u\n", h.d_head);
  std::printf("provenance\t%s\n", to_string(h.provenance).c_str());
  std::printf("precision\t%s\n", h.precision == Precision::kFloat32 ? "f32" : "f64");
  std::printf("first_position\t%lld\n", static_cast<long long>(h.first_position));
  load_cache<float>(file);  // full check, including the checksum
  std::printf("checksum\tok\n");
  return 0;
}

template <typename Fn>
int dispatch(Precision p, Fn&& fn) {
  return p == Precision::kFloat32 ? fn(float{}) : fn(double{});
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Chunk-wise KV prefill with selective recomputation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read option values from a TOML/INI file (keys are long option names)");
  Options o;

  app.add_option("--seed", o.seed, "Base seed for model, task, probe and selection")->capture_default_str();
  app.add_option("--precision", o.precision, "f32 or f64")->capture_default_str();

  auto* g_model = "Model";
  app.add_option("--layers", o.model.n_layers)->group(g_model)->capture_default_str();
  app.add_option("--heads", o.model.n_heads)->group(g_model)->capture_default_str();
  app.add_option("--d-head", o.model.d_head)->group(g_model)->capture_default_str();
  app.add_option("--d-ff", o.model.d_ff)->group(g_model)->capture_default_str();
  app.add_option("--vocab", o.model.vocab_size)->group(g_model)->capture_default_str();
  app.add_option("--rope-base", o.model.rope_base)->group(g_model)->capture_default_str();
  app.add_option("--max-position", o.model.max_position)->group(g_model)->capture_default_str();
  app.add_option("--model-seed", o.model_seed, "Defaults to --seed")->group(g_model);

  auto* g_task = "Task";
  app.add_option("--task", o.task, "needle or uniform_noise")->group(g_task)->capture_default_str();
  app.add_option("--length", o.length, "Context tokens")->group(g_task)->capture_default_str();
  app.add_option("--depth", o.depth, "Needle depth in [0,1); drawn from the seed when unset")->group(g_task);
  app.add_option("--chunk-size", o.chunk_size)->group(g_task)->capture_default_str();
  app.add_option("--boundaries", o.boundaries, "Passage-split cut offsets; overrides --chunk-size")
      ->group(g_task)
      ->delimiter(',');
  app.add_option("--prompt-length", o.prompt_length)->group(g_task)->capture_default_str();
  app.add_option("--prompt-gap", o.prompt_gap, "Context-to-prompt distance seen by TL-TP")
      ->group(g_task)
      ->capture_default_str();
  app.add_option("--binding", o.binding, "positional or semantic")->group(g_task)->capture_default_str();
  app.add_option("--task-seed", o.task_seed, "Defaults to --seed")->group(g_task);

  auto* g_sel = "Selection";
  app.add_option("--strategy", o.strategy, "attention-norm, cacheblend, epic or random")
      ->group(g_sel)
      ->capture_default_str();
  auto* topk = app.add_option("--topk", o.topk, "Budget as a token count")->group(g_sel);
  auto* ratio_opt = app.add_option("--ratio", o.ratio, "Budget as a fraction of the context")
      ->group(g_sel)
      ->capture_default_str()
      ->excludes(topk);
  app.add_option("--geometry", o.geometry, "GLOBAL, HL-HP, HL-TP or TL-TP")->group(g_sel)->capture_default_str();
  app.add_option("--norm-layer", o.norm_layer, "Layer whose attention is scored")->group(g_sel);
  app.add_option("--prompt-offset", o.prompt_offset, "TL-TP prompt position")->group(g_sel);
  app.add_option("--cacheblend-layers", o.cacheblend_layers)->group(g_sel)->capture_default_str();

  auto* g_re = "Reorder";
  app.add_flag("--reorder", o.reorder, "Reorder chunks by importance, then reselect")->group(g_re);
  app.add_option("--chunk-score", o.chunk_score, "sum, mean or max")->group(g_re)->capture_default_str();
  app.add_flag("--sequential", o.sequential, "Declare the chunks order-dependent")->group(g_re);

  auto* g_probe = "Probe";
  app.add_flag("--no-probe", o.no_probe, "Do not plant the needle probe")->group(g_probe);
  app.add_option("--probe-layer", o.probe_layer)->group(g_probe);
  app.add_option("--probe-alpha", o.probe_alpha)->group(g_probe);
  app.add_option("--probe-beta", o.probe_beta)->group(g_probe)->capture_default_str();
  app.add_option("--probe-band", o.probe_band)->group(g_probe);

  auto* g_h = "Harness";
  app.add_option("--seeds", o.seeds, "Number of consecutive seeds from --seed")->group(g_h)->capture_default_str();
  app.add_option("--workers", o.workers, "Worker threads; 0 uses every core")->group(g_h)->capture_default_str();
  app.add_option("--records", o.records, "Append run records (JSON lines) here")->group(g_h);
  app.add_option("--label", o.label, "Record label")->group(g_h);

  std::string cache_dir;
  auto* prefill = app.add_subcommand("prefill", "Prefill every chunk of the task into a cache directory");
  prefill->add_option("--cache-dir", cache_dir)->required();

  std::vector<std::string> files;
  auto* assemble_cmd = app.add_subcommand("assemble", "Concatenate cache files and print the layout");
  assemble_cmd->add_option("files", files, "Cache files in context order")->required()->check(CLI::ExistingFile);

  auto* select = app.add_subcommand("select", "Score and select recompute targets");
  select->add_option("--cache-dir", cache_dir, "Reuse or store chunk caches here");

  int overhead_reps = 0;
  auto* recompute = app.add_subcommand("recompute", "Select, recompute and compare with full prefill");
  recompute->add_option("--cache-dir", cache_dir, "Reuse or store chunk caches here");
  recompute->add_option("--overhead", overhead_reps, "Also time recomputation over this many repetitions (>= 3)");

  auto* run = app.add_subcommand("run", "One end-to-end run; prints its record");
  auto* replay_cmd = app.add_subcommand("replay", "Rerun every record in --records and compare metrics");

  auto* sweep_geo = app.add_subcommand("sweep-geometry", "Every geometry over --seeds seeds");

  std::vector<double> ratios{0.0, 0.05, 0.15, 0.3, 0.6, 1.0};
  auto* sweep_budget = app.add_subcommand("sweep-budget", "Budget ratios over --seeds seeds");
  sweep_budget->add_option("--ratios", ratios)->delimiter(',')->capture_default_str();

  std::vector<double> depths{0.0, 0.25, 0.5, 0.75};
  auto* needle = app.add_subcommand("needle", "Needle hit rate by depth and geometry");
  needle->add_option("--depths", depths)->delimiter(',')->capture_default_str();

  std::vector<std::string> strategies{"attention-norm", "epic"};
  auto* rope_sim = app.add_subcommand("rope-sim", "MoM/Max RoPE similarity of selected sets per label");
  rope_sim->add_option("--strategies", strategies, "Run these when --records is not given")
      ->delimiter(',')
      ->capture_default_str();

  int devices = 4;
  std::vector<int64_t> seqlens{8192, 16384, 32768};
  std::string params_file;
  auto* sim = app.add_subcommand("simulate-sp", "Sequence-parallel TTFT cost model; --ratio overrides the params file");
  auto* devices_opt = sim->add_option("--devices", devices, "Overrides the params file")->capture_default_str();
  sim->add_option("--seqlen", seqlens)->delimiter(',')->capture_default_str();
  sim->add_option("--params", params_file, "key = value cost parameters")->check(CLI::ExistingFile);

  auto* cache = app.add_subcommand("cache", "Cache file tools");
  cache->require_subcommand(1);
  std::string inspect_file;
  auto* inspect = cache->add_subcommand("inspect", "Print and verify a cache file header");
  inspect->add_option("file", inspect_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*cache) return cmd_inspect(inspect_file);
  if (*assemble_cmd) return cmd_assemble(files);
  if (*sim) {
    auto p = params_file.empty() ? CostModelParams{} : CostModelParams::load(params_file);
    if (params_file.empty() || devices_opt->count() > 0) p.device_count = devices;
    if (params_file.empty() || ratio_opt->count() > 0) p.recompute_ratio = o.ratio;
    p.validate();
    for (int64_t n : seqlens) {
      std::printf("# seq_len %lld devices %d ratio %g\n", static_cast<long long>(n), p.device_count,
                  p.recompute_ratio);
      std::printf("%s", simulate(p, n).to_text().c_str());
    }
    return 0;
  }
  if (*replay_cmd) {
    if (o.records.empty()) throw ConfigError("replay needs --records");
    int mismatched = 0;
    const auto recs = load_records(o.records);
    for (const auto& r : recs) {
      const bool same = same_metrics(replay(r).metrics, r.metrics);
      mismatched += !same;
      std::printf("%s\t%s\n", r.label().c_str(), same ? "identical" : "DIFFERENT");
    }
    std::printf("# %zu records, %d mismatched\n", recs.size(), mismatched);
    return mismatched == 0 ? 0 : kExitCheck;
  }
  if (*rope_sim && !o.records.empty()) {
    std::printf("label\truns\tmom\tmax\n");
    for (const auto& row : report_similarity(load_records(o.records))) {
      std::printf("%s\t%d\t%.4f\t%.4f\n", row.label.c_str(), row.runs, row.mom, row.max);
    }
    return 0;
  }

  const auto cfg = pipeline_config(o);
  if (*prefill) return dispatch(cfg.precision, [&](auto t) { return cmd_prefill<decltype(t)>(cfg, cache_dir); });
  if (*select) return dispatch(cfg.precision, [&](auto t) { return cmd_select<decltype(t)>(cfg, cache_dir); });
  if (*recompute) {
    return dispatch(cfg.precision,
                    [&](auto t) { return cmd_recompute<decltype(t)>(cfg, cache_dir, overhead_reps); });
  }
  if (*run) {
    const auto recs = execute(o, {cfg});
    std::printf("%s\n", to_json(recs.front()).dump().c_str());
    return 0;
  }
  if (*sweep_geo) {
    print_summary(summarize(execute(o, geometry_sweep(cfg, seed_list(o))),
                            [](const RunRecord& r) { return r.label(); }));
    return 0;
  }
  if (*sweep_budget) {
    print_summary(summarize(execute(o, budget_sweep(cfg, ratios, seed_list(o))),
                            [](const RunRecord& r) { return r.label(); }));
    return 0;
  }
  if (*needle) {
    std::vector<PipelineConfig> configs;
    for (double d : depths) {
      auto base = cfg;
      base.task.kind = TaskKind::kNeedle;
      base.task.needle_depth = d;
      for (auto& c : geometry_sweep(base, seed_list(o))) configs.push_back(c);
    }
    const auto groups = summarize(execute(o, configs), [](const RunRecord& r) {
      char depth[32];
      std::snprintf(depth, sizeof depth, "%.3f", *r.config.task.needle_depth);
      return std::string(depth) + "\t" + r.label();
    });
    std::printf("depth\tgeometry\truns\thit_rate\tcache_fidelity\n");
    for (const auto& g : groups) {
      std::printf("%s\t%d\t%.4f\t%.6g\n", g.key.c_str(), g.runs, g.hit_rate, g.mean_cache_fidelity);
    }
    return 0;
  }
  if (*rope_sim) {
    std::vector<PipelineConfig> configs;
    for (auto s : seed_list(o)) {
      for (const auto& name : strategies) {
        auto c = with_seed(cfg, s);
        c.selection.strategy = parse_strategy(name);
        c.label = to_string(c.selection.strategy);
        configs.push_back(c);
      }
    }
    std::printf("label\truns\tmom\tmax\n");
    for (const auto& row : report_similarity(execute(o, configs))) {
      std::printf("%s\t%d\t%.4f\t%.4f\n", row.label.c_str(), row.runs, row.mom, row.max);
    }
    return 0;
  }
  return kExitConfig;
}

}  // namespace
}  // namespace chunkkv

int main(int argc, char** argv) {
  try {
    return chunkkv::run_cli(argc, argv);
  } catch (const chunkkv::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return chunkkv::kExitConfig;
  } catch (const chunkkv::InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return chunkkv::kExitData;
  } catch (const chunkkv::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return chunkkv::kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "file error: %s\n", e.what());
    return chunkkv::kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
