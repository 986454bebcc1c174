// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "chunkkv/harness.hpp"

namespace chunkkv {
namespace {

PipelineConfig small_run() {
  PipelineConfig c;
  c.task.length = 48;
  c.task.chunk_size = 12;
  c.task.prompt_length = 4;
  c.selection.budget = Budget::of_ratio(0.15);
  return c;
}

TEST(Task, DepthZeroPlacesNeedleFirst) {
  SyntheticTask t;
  t.needle_depth = 0.0;
  const auto inst = generate_task(t, ModelConfig{}, 1);
  EXPECT_EQ(inst.needle_index, 0);
  EXPECT_EQ(inst.chunks[0].token_ids[0], needle_token(ModelConfig{}));
}

TEST(Task, FixedSizeChunking) {
  SyntheticTask t;
  t.length = 20;
  t.chunk_size = 8;
  EXPECT_EQ(t.chunk_lengths(), (std::vector<int>{8, 8, 4}));
  const auto inst = generate_task(t, ModelConfig{}, 2);
  ASSERT_EQ(inst.chunks.size(), 3u);
  EXPECT_EQ(inst.chunks[2].local_length(), 4);
  EXPECT_EQ(inst.chunks[1].declared_order_index, 1);
}

TEST(Task, PassageSplitBoundaries) {
  SyntheticTask t;
  t.length = 20;
  t.boundaries = {3, 11};
  EXPECT_EQ(t.chunk_lengths(), (std::vector<int>{3, 8, 9}));
  t.boundaries = {11, 3};
  EXPECT_THROW(t.validate(), ConfigError);
  t.boundaries = {20};
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Task, DeterministicAndReservedTokens) {
  SyntheticTask t;
  const ModelConfig mc;
  const auto a = generate_task(t, mc, 5);
  const auto b = generate_task(t, mc, 5);
  EXPECT_EQ(a.context(), b.context());
  EXPECT_EQ(a.prompt, b.prompt);
  EXPECT_EQ(a.needle_index, b.needle_index);
  EXPECT_EQ(a.prompt.back(), query_token(mc));
  const auto ctx = a.context();
  EXPECT_EQ(std::count(ctx.begin(), ctx.end(), needle_token(mc)), 1);
  EXPECT_EQ(std::count(ctx.begin(), ctx.end(), query_token(mc)), 0);
  EXPECT_NE(generate_task(t, mc, 6).context(), ctx);
}

TEST(Task, NoiseTaskHasNoNeedle) {
  SyntheticTask t;
  t.kind = TaskKind::kUniformNoise;
  EXPECT_FALSE(generate_task(t, ModelConfig{}, 1).needle_index.has_value());
}

TEST(Task, RejectsNeedleBeyondLength) {
  SyntheticTask t;
  t.needle_depth = 1.0;
  EXPECT_THROW(generate_task(t, ModelConfig{}, 1), ConfigError);
}

TEST(Pipeline, FullRatioReproducesFullPrefill) {
  auto c = small_run();
  c.selection.budget = Budget::of_ratio(1.0);
  const auto r = run_pipeline(c);
  EXPECT_LE(r.metrics.cache_fidelity, 1e-4);
  EXPECT_LE(r.metrics.logit_fidelity, 1e-3);
  EXPECT_EQ(r.metrics.first_token, r.metrics.reference_token);
  EXPECT_EQ(r.metrics.selected_count, 48);
}

TEST(Pipeline, ZeroRatioIsTheNoRecomputeBaseline) {
  auto c = small_run();
  c.selection.budget = Budget::of_ratio(0.0);
  const auto a = run_pipeline(c);
  c.selection.strategy = Strategy::kRandom;
  const auto b = run_pipeline(c);
  EXPECT_EQ(a.metrics.selected_count, 0);
  EXPECT_TRUE(same_metrics(a.metrics, b.metrics));
  EXPECT_GT(a.metrics.cache_fidelity, 1.0);
}

TEST(Pipeline, FloatPrecisionRuns) {
  auto c = small_run();
  c.precision = Precision::kFloat32;
  c.selection.budget = Budget::of_ratio(1.0);
  const auto r = run_pipeline(c);
  EXPECT_LE(r.metrics.cache_fidelity, 1e-2);
}

TEST(Pipeline, ReorderMovesNeedleChunkNextToPrompt) {
  auto c = small_run();
  c.task.length = 256;
  c.task.chunk_size = 64;
  c.task.prompt_length = 8;
  c.task.binding = NeedleBinding::kSemantic;
  c.reorder = true;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = run_pipeline(with_seed(c, seed));
    const auto inst = generate_task(c.task, c.model, seed);
    const auto needle_chunk = inst.chunks[*inst.needle_index / 64].chunk_id;
    EXPECT_EQ(r.chunk_order.back(), needle_chunk);
    EXPECT_EQ(r.chunk_importance.size(), 4u);
  }
}

TEST(Pipeline, ReorderNeedsAttentionNorm) {
  auto c = small_run();
  c.reorder = true;
  c.selection.strategy = Strategy::kEpic;
  EXPECT_THROW(run_pipeline(c), ConfigError);
}

TEST(Records, JsonRoundTripAndReplay) {
  auto c = small_run();
  c.task.needle_depth = 0.5;
  c.selection.geometry = GeometryMode::kHeadLocalTailPrompt;
  c.probe.band = 4;
  c.label = "probe";
  const auto r = run_pipeline(c);
  const auto back = run_record_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  EXPECT_TRUE(same_metrics(replay(back).metrics, r.metrics));
}

TEST(Records, WriterAndReader) {
  std::ostringstream out;
  RecordWriter writer(out);
  const auto configs = budget_sweep(small_run(), std::vector<double>{0.0, 0.5}, std::vector<uint64_t>{1, 2});
  const auto records = run_all(configs, 2, &writer);
  ASSERT_EQ(records.size(), 4u);
  EXPECT_EQ(records[1].config.selection.budget.ratio, 0.5);
  EXPECT_EQ(records[2].config.model_seed, 2u);
  std::istringstream in(out.str());
  const auto read = read_records(in);
  ASSERT_EQ(read.size(), 4u);
  for (const auto& rec : read) {
    const auto it = std::find_if(records.begin(), records.end(), [&](const RunRecord& x) {
      return x.config.model_seed == rec.config.model_seed &&
             x.config.selection.budget.ratio == rec.config.selection.budget.ratio;
    });
    ASSERT_NE(it, records.end());
    EXPECT_TRUE(same_metrics(it->metrics, rec.metrics));
  }
}

TEST(Records, RejectsOtherSchema) {
  auto j = to_json(run_pipeline(small_run()));
  j["schema_version"] = 99;
  EXPECT_THROW(run_record_from_json(j), VersionError);
  std::istringstream in("{not json}\n");
  EXPECT_THROW(read_records(in), FormatError);
}

TEST(Sweeps, GeometrySweepCoversEveryMode) {
  const auto configs = geometry_sweep(small_run(), std::vector<uint64_t>{3});
  ASSERT_EQ(configs.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(configs[i].selection.geometry, kAllGeometries[i]);
    EXPECT_EQ(configs[i].label, to_string(kAllGeometries[i]));
  }
  const auto summary = summarize(run_all(configs, 1), [](const RunRecord& r) { return r.label(); });
  ASSERT_EQ(summary.size(), 4u);
  for (const auto& g : summary) {
    EXPECT_EQ(g.runs, 1);
    EXPECT_TRUE(g.hit_rate == 0.0 || g.hit_rate == 1.0);
  }
}

TEST(Similarity, Report) {
  EXPECT_THROW(report_similarity({}), InputError);
  auto c = small_run();
  const auto r = run_pipeline(c);
  const auto one = report_similarity({r});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].label, "attention-norm");
  EXPECT_EQ(one[0].mom, r.metrics.mom);

  auto renamed = r;
  renamed.config.label = "copy";
  const auto two = report_similarity({r, renamed});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].mom, two[1].mom);
  EXPECT_EQ(two[0].max, two[1].max);

  auto other = r;
  other.config.model.n_layers = 2;
  EXPECT_THROW(report_similarity({r, other}), InputError);
}

}  // namespace
}  // namespace chunkkv
