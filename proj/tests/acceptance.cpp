// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Tolerances are fixed here and nowhere else.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "chunkkv/harness.hpp"
#include "chunkkv/kv_store.hpp"
#include "chunkkv/model.hpp"
#include "chunkkv/positional.hpp"
#include "chunkkv/reorder.hpp"
#include "chunkkv/selection.hpp"
#include "chunkkv/seqpar.hpp"
#include "test_util.hpp"

namespace chunkkv {
namespace {

constexpr double kFullRecomputeCacheTol = 1e-4;
constexpr double kFullRecomputeLogitTol = 1e-3;
constexpr double kPrefixInjectionTol = 1e-4;
constexpr double kRopeNormTol = 1e-6;
constexpr double kRopeRelativeTol = 1e-5;
constexpr double kGeometryRelTol = 1e-9;
constexpr double kBudgetEndTol = 1e-4;
constexpr double kSimilarityWinShare = 0.80;
constexpr double kSelectionRatio = 0.15;
constexpr int kGapForTailPrompt = 37;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

std::vector<uint64_t> seeds(int n) {
  std::vector<uint64_t> out(static_cast<size_t>(n));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

PipelineConfig needle_run() {
  PipelineConfig c;
  c.task.length = 256;
  c.task.chunk_size = 64;
  c.task.prompt_length = 8;
  c.selection.budget = Budget::of_ratio(kSelectionRatio);
  return c;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Cache Frobenius distance bounds every per-element difference, so checking it
// against the per-element tolerance is the stricter test.
Outcome full_recompute_equivalence() {
  auto base = needle_run();
  base.selection.budget = Budget::of_ratio(1.0);
  std::vector<PipelineConfig> configs;
  for (auto s : seeds(20)) configs.push_back(with_seed(base, s));
  double worst_cache = 0.0, worst_logit = 0.0;
  for (const auto& r : run_all(configs, workers())) {
    worst_cache = std::max(worst_cache, r.metrics.cache_fidelity);
    worst_logit = std::max(worst_logit, r.metrics.logit_fidelity);
  }
  return {worst_cache <= kFullRecomputeCacheTol && worst_logit <= kFullRecomputeLogitTol,
          "max cache dist " + fmt("%.3g", worst_cache) + ", max logit diff " + fmt("%.3g", worst_logit)};
}

Outcome prefix_injection() {
  std::mt19937_64 rng(2);
  const ModelConfig mc;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = init_weights<double>(mc, 1000 + static_cast<uint64_t>(trial));
    const int n = std::uniform_int_distribution<int>(2, 64)(rng);
    const int split = std::uniform_int_distribution<int>(1, n - 1)(rng);
    const auto tokens = testing::random_tokens(rng, n, mc.vocab_size);
    ForwardRequest<double> whole;
    whole.token_ids = tokens;
    whole.positions.resize(static_cast<size_t>(n));
    std::iota(whole.positions.begin(), whole.positions.end(), 0);
    const auto full = forward(w, whole);

    ForwardRequest<double> head;
    head.token_ids.assign(tokens.begin(), tokens.begin() + split);
    head.positions.assign(whole.positions.begin(), whole.positions.begin() + split);
    const auto first = forward(w, head);
    ForwardRequest<double> tail;
    tail.token_ids.assign(tokens.begin() + split, tokens.end());
    tail.positions.assign(whole.positions.begin() + split, whole.positions.end());
    tail.injected_kv = first.kv;
    const auto second = forward(w, tail);

    worst = std::max(worst, testing::max_abs_diff(second.logits, full.logits));
    for (int l = 0; l < mc.n_layers; ++l) {
      worst = std::max(worst, testing::max_abs_diff(second.kv[l].keys, full.kv[l].keys.bottomRows(n - split)));
      worst = std::max(worst, testing::max_abs_diff(second.kv[l].values, full.kv[l].values.bottomRows(n - split)));
    }
  }
  return {worst <= kPrefixInjectionTol, "max diff " + fmt("%.3g", worst) + " over 100 pairs"};
}

Outcome rope_properties() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int64_t> pos(0, 100000);
  const double base = 10000.0;
  double norm_err = 0.0, rel_err = 0.0, id_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 * std::uniform_int_distribution<int>(1, 64)(rng);
    std::vector<double> q(static_cast<size_t>(d)), k(static_cast<size_t>(d));
    for (auto& x : q) x = g(rng);
    for (auto& x : k) x = g(rng);
    auto norm = [](const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    };

    const int64_t m = pos(rng);
    norm_err = std::max(norm_err, std::abs(norm(apply_rope<double>(q, m, base)) - norm(q)) / norm(q));

    const int64_t n = pos(rng);
    const int64_t shift = pos(rng);
    const double a = dot(apply_rope<double>(q, m, base), apply_rope<double>(k, n, base));
    const double b = dot(apply_rope<double>(q, m + shift, base), apply_rope<double>(k, n + shift, base));
    rel_err = std::max(rel_err, std::abs(a - b) / std::max(1.0, std::abs(a)));

    const auto z = apply_rope<double>(q, 0, base);
    for (size_t i = 0; i < q.size(); ++i) id_err = std::max(id_err, std::abs(z[i] - q[i]));
  }
  return {norm_err <= kRopeNormTol && rel_err <= kRopeRelativeTol && id_err == 0.0,
          "norm " + fmt("%.3g", norm_err) + ", relative " + fmt("%.3g", rel_err) + ", identity " + fmt("%.3g", id_err)};
}

Outcome geometry_ordering() {
  auto base = needle_run();
  base.task.prompt_gap = kGapForTailPrompt;
  const auto s = seeds(50);
  const auto groups = summarize(run_all(geometry_sweep(base, s), workers()),
                                [](const RunRecord& r) { return r.label(); });
  std::map<std::string, GroupSummary> by;
  for (const auto& g : groups) by[g.key] = g;
  const auto& best = by.at(to_string(GeometryMode::kGlobal));
  bool pass = true;
  std::string detail;
  for (auto mode : kAllGeometries) {
    const auto& g = by.at(to_string(mode));
    if (!detail.empty()) detail += "; ";
    detail += to_string(mode) + " hit " + fmt("%.2f", g.hit_rate) + " fid " + fmt("%.4f", g.mean_cache_fidelity);
    if (g.hit_rate > best.hit_rate) pass = false;
    if (g.mean_cache_fidelity < best.mean_cache_fidelity * (1.0 - kGeometryRelTol)) pass = false;
  }
  return {pass, detail};
}

Outcome monotone_fidelity() {
  const std::vector<double> ratios{0.0, 0.05, 0.15, 0.3, 0.6, 1.0};
  const auto s = seeds(20);
  const auto records = run_all(budget_sweep(needle_run(), ratios, s), workers());
  std::vector<double> mean(ratios.size(), 0.0);
  for (const auto& r : records) {
    const auto it = std::find(ratios.begin(), ratios.end(), r.config.selection.budget.ratio);
    mean[static_cast<size_t>(it - ratios.begin())] += r.metrics.cache_fidelity / static_cast<double>(s.size());
  }
  bool pass = mean.back() <= kBudgetEndTol;
  std::string detail;
  for (size_t i = 0; i < mean.size(); ++i) {
    if (i > 0 && mean[i] > mean[i - 1]) pass = false;
    detail += fmt("%.3g", mean[i]) + (i + 1 < mean.size() ? " " : "");
  }
  return {pass, "mean fidelity " + detail};
}

Outcome similarity_ordering() {
  std::vector<PipelineConfig> configs;
  for (auto s : seeds(50)) {
    auto a = with_seed(needle_run(), s);
    a.label = "attention-norm";
    auto e = a;
    e.selection.strategy = Strategy::kEpic;
    e.label = "epic";
    configs.push_back(a);
    configs.push_back(e);
  }
  const auto records = run_all(configs, workers());
  int wins = 0;
  double mom_a = 0.0, mom_e = 0.0;
  for (size_t i = 0; i < records.size(); i += 2) {
    wins += records[i].metrics.max >= records[i + 1].metrics.max;
    mom_a += records[i].metrics.mom / 50.0;
    mom_e += records[i + 1].metrics.mom / 50.0;
  }
  return {wins >= static_cast<int>(std::ceil(kSimilarityWinShare * 50)),
          std::to_string(wins) + "/50 seeds; MoM attention-norm " + fmt("%.4f", mom_a) + ", epic " + fmt("%.4f", mom_e)};
}

Outcome cost_trend() {
  CostModelParams p;
  p.device_count = 4;
  p.recompute_ratio = 0.15;
  const auto r8 = simulate(p, 8192), r16 = simulate(p, 16384), r32 = simulate(p, 32768);
  const auto ours = [](const SimReport& r) { return r.speedup(SpStrategy::kOurs); };
  const auto ring = [](const SimReport& r) { return r.speedup(SpStrategy::kRingAttention); };
  const bool pass = ours(r16) > ring(r16) && ours(r32) > ring(r32) && ours(r32) > ours(r16) && ours(r16) > ours(r8);
  return {pass, "ours " + fmt("%.2f", ours(r8)) + " " + fmt("%.2f", ours(r16)) + " " + fmt("%.2f", ours(r32)) + ", ring " +
                    fmt("%.2f", ring(r8)) + " " + fmt("%.2f", ring(r16)) + " " + fmt("%.2f", ring(r32))};
}

// Brute force: indices sorted by (score desc, index asc), first k, ascending.
Outcome topk_oracle() {
  std::mt19937_64 rng(8);
  int mismatches = 0, with_ties = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    const int k = std::uniform_int_distribution<int>(0, n)(rng);
    std::vector<double> scores(static_cast<size_t>(n));
    const bool coarse = trial % 2 == 0;
    for (auto& s : scores) {
      s = coarse ? static_cast<double>(std::uniform_int_distribution<int>(0, 3)(rng))
                 : std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    with_ties += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();

    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]
                 ? scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]
                 : a < b;
    });
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    mismatches += select_topk(scores, k) != idx;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches, " + std::to_string(with_ties) + " arrays with ties"};
}

Outcome reorder_behavior() {
  bool pass = true;
  std::string detail;

  auto single = needle_run();
  single.task.length = 64;
  auto plain = run_pipeline(single);
  single.reorder = true;
  auto reordered = run_pipeline(single);
  const bool k1 = reordered.chunk_order == plain.chunk_order && reordered.selected == plain.selected &&
                  same_metrics(reordered.metrics, plain.metrics);
  pass = pass && k1;
  detail += std::string("K=1 ") + (k1 ? "identical" : "differs");

  bool stable = true;
  for (int k = 1; k <= 8; ++k) {
    std::vector<int> identity(static_cast<size_t>(k));
    std::iota(identity.begin(), identity.end(), 0);
    stable = stable && reorder_permutation(std::vector<double>(static_cast<size_t>(k), 0.5)) == identity;
  }
  pass = pass && stable;
  detail += std::string(", ties ") + (stable ? "stable" : "unstable");

  auto base = needle_run();
  base.task.binding = NeedleBinding::kSemantic;
  base.reorder = true;
  std::vector<PipelineConfig> configs;
  for (auto s : seeds(50)) configs.push_back(with_seed(base, s));
  const auto records = run_all(configs, workers());
  int last = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto inst = generate_task(configs[i].task, configs[i].model, configs[i].task_seed);
    const auto needle_chunk = inst.chunks[static_cast<size_t>(*inst.needle_index / base.task.chunk_size)].chunk_id;
    last += records[i].chunk_order.back() == needle_chunk;
  }
  pass = pass && last == 50;
  detail += ", needle chunk adjacent to prompt in " + std::to_string(last) + "/50";
  return {pass, detail};
}

template <typename T>
bool same_bytes(const ChunkKV<T>& a, const ChunkKV<T>& b) {
  if (a.chunk_id != b.chunk_id || a.token_ids != b.token_ids || a.prefill_positions != b.prefill_positions ||
      a.layers.size() != b.layers.size()) {
    return false;
  }
  for (size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.keys.size() != y.keys.size() || x.values.size() != y.values.size()) return false;
    if (std::memcmp(x.keys.data(), y.keys.data(), sizeof(T) * static_cast<size_t>(x.keys.size())) != 0) return false;
    if (std::memcmp(x.values.data(), y.values.data(), sizeof(T) * static_cast<size_t>(x.values.size())) != 0) {
      return false;
    }
  }
  return true;
}

Outcome parallel_determinism() {
  int identical = 0;
  for (auto s : seeds(20)) {
    const auto task = needle_run().task;
    const ModelConfig mc;
    const auto w = init_weights<double>(mc, s);
    const auto inst = generate_task(task, mc, s);
    const auto ref = run_parallel_prefill(w, std::span<const ChunkSpec>(inst.chunks), 1).caches;
    bool ok = true;
    for (int workers : {2, 4}) {
      const auto got = run_parallel_prefill(w, std::span<const ChunkSpec>(inst.chunks), workers).caches;
      ok = ok && got.size() == ref.size();
      for (size_t i = 0; ok && i < ref.size(); ++i) ok = same_bytes(ref[i], got[i]);
    }
    identical += ok;
  }
  return {identical == 20, std::to_string(identical) + "/20 seeds byte-identical across 1, 2, 4 workers"};
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Outcome persistence() {
  testing::TempDir dir;
  std::mt19937_64 rng(11);
  const ModelConfig mc = testing::small_config();
  int identity = 0, versions = 0;
  long corruptions = 0, detected = 0;
  for (int c = 0; c < 10; ++c) {
    const auto w = init_weights<float>(mc, 500 + static_cast<uint64_t>(c));
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    ChunkSpec spec{static_cast<uint64_t>(c), testing::random_tokens(rng, n, mc.vocab_size), 0};
    const auto cache = prefill_chunk(w, spec);
    const auto path = dir.path() / ("c" + std::to_string(c) + ".kv");
    save_cache(cache, mc, path);
    identity += same_bytes(load_cache<float>(path), cache);

    const auto original = slurp(path);
    const auto bad = dir.path() / "bad.kv";
    for (size_t i = 0; i < original.size(); ++i) {
      auto bytes = original;
      bytes[i] = static_cast<char>(bytes[i] ^ static_cast<char>(std::uniform_int_distribution<int>(1, 255)(rng)));
      spit(bad, bytes);
      ++corruptions;
      try {
        load_cache<float>(bad);
      } catch (const FormatError&) {
        ++detected;
      }
    }

    auto bumped = original;
    const uint32_t next = kCacheFileVersion + 1;
    std::memcpy(bumped.data() + 4, &next, sizeof next);
    spit(bad, bumped);
    try {
      load_cache<float>(bad);
    } catch (const VersionError&) {
      ++versions;
    }
  }
  return {identity == 10 && detected == corruptions && versions == 10,
          std::to_string(identity) + "/10 round-trips, " + std::to_string(detected) + "/" +
              std::to_string(corruptions) + " corruptions detected, " + std::to_string(versions) +
              "/10 versions rejected"};
}

}  // namespace
}  // namespace chunkkv

int main() {
  using namespace chunkkv;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"full recompute equivalence", full_recompute_equivalence},
      {"prefix injection", prefix_injection},
      {"rope properties", rope_properties},
      {"geometry ordering", geometry_ordering},
      {"monotone fidelity", monotone_fidelity},
      {"rope similarity ordering", similarity_ordering},
      {"cost model trend", cost_trend},
      {"top-k oracle", topk_oracle},
      {"reorder", reorder_behavior},
      {"parallel prefill determinism", parallel_determinism},
      {"persistence round-trip", persistence},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2zu %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
