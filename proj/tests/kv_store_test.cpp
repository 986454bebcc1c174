// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <thread>

#include "chunkkv/kv_store.hpp"
#include "test_util.hpp"

namespace chunkkv {
namespace {

using testing::max_abs_diff;
using testing::random_tokens;
using testing::small_config;
using testing::TempDir;

ChunkSpec make_chunk(uint64_t id, std::vector<int32_t> tokens) {
  ChunkSpec c;
  c.chunk_id = id;
  c.token_ids = std::move(tokens);
  return c;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

TEST(Prefill, SingleChunkEqualsFullPrefill) {
  std::mt19937_64 rng(1);
  const auto w = init_weights<double>(small_config(), 1);
  const auto tokens = random_tokens(rng, 16, 32);
  const auto kv = prefill_chunk(w, make_chunk(1, tokens));
  ForwardRequest<double> req;
  req.token_ids = tokens;
  req.positions.resize(16);
  std::iota(req.positions.begin(), req.positions.end(), 0);
  const auto full = forward(w, req);
  for (size_t l = 0; l < kv.layers.size(); ++l) {
    EXPECT_LT(max_abs_diff(kv.layers[l].keys, full.kv[l].keys), 1e-12);
    EXPECT_LT(max_abs_diff(kv.layers[l].values, full.kv[l].values), 1e-12);
  }
  EXPECT_EQ(kv.provenance, Provenance::kPrefilledLocal);
  EXPECT_EQ(kv.prefill_positions, (std::vector<int64_t>(req.positions)));
  EXPECT_EQ(kv.model_fingerprint, fingerprint(w));
}

TEST(Prefill, IdenticalChunksGiveIdenticalCaches) {
  const auto w = init_weights<double>(small_config(), 2);
  const auto a = prefill_chunk(w, make_chunk(1, {3, 4, 5}));
  auto b = prefill_chunk(w, make_chunk(1, {3, 4, 5}));
  EXPECT_EQ(a, b);
}

TEST(Prefill, KeyRowMatchesHandComputation) {
  const auto w = init_weights<double>(small_config(), 3);
  const std::vector<int32_t> tokens{7, 11, 2};
  const auto kv = prefill_chunk(w, make_chunk(1, tokens));
  // Layer 0 keys depend only on the token's own embedding.
  Vector<double> x = w.embedding.row(11).transpose();
  x /= std::sqrt(x.squaredNorm() / x.size() + 1e-6);
  Vector<double> k = w.layers[0].wk * x;
  for (int h = 0; h < 2; ++h) {
    apply_rope_inplace<double>(std::span<double>(k.data() + h * 8, 8), 1, 10000.0);
  }
  EXPECT_LT(max_abs_diff(kv.layers[0].keys.row(1), k.transpose()), 1e-13);
}

TEST(Prefill, PositionDependenceWitness) {
  std::mt19937_64 rng(4);
  const auto w = init_weights<double>(small_config(), 4);
  const auto tokens = random_tokens(rng, 12, 32);
  const auto full = prefill_sequence(w, 0, tokens, 0, Provenance::kFullPrefill);
  const auto first = prefill_chunk(w, make_chunk(1, {tokens.begin(), tokens.begin() + 6}));
  const auto second = prefill_chunk(w, make_chunk(2, {tokens.begin() + 6, tokens.end()}));
  EXPECT_LT(max_abs_diff(first.layers[0].keys.row(0), full.layers[0].keys.row(0)), 1e-12);
  EXPECT_GT(max_abs_diff(second.layers[0].keys.row(0), full.layers[0].keys.row(6)), 1e-3);
}

TEST(Prefill, RejectsOverlongAndEmpty) {
  auto c = small_config();
  c.max_position = 4;
  const auto w = init_weights<double>(c, 5);
  EXPECT_THROW(prefill_chunk(w, make_chunk(1, {1, 2, 3, 4, 5})), InputError);
  EXPECT_THROW(prefill_chunk(w, make_chunk(1, {})), InputError);
}

TEST(CacheFile, FloatRoundTripIsExact) {
  TempDir dir;
  std::mt19937_64 rng(6);
  const auto w = init_weights<float>(small_config(), 6);
  const auto kv = prefill_chunk(w, make_chunk(42, random_tokens(rng, 9, 32)));
  save_cache(kv, w.config, dir.path() / "c.ifkc");
  EXPECT_EQ(load_cache<float>(dir.path() / "c.ifkc"), kv);
  const auto h = read_cache_header(dir.path() / "c.ifkc");
  EXPECT_EQ(h.chunk_id, 42u);
  EXPECT_EQ(h.length, 9u);
  EXPECT_EQ(h.n_heads, 2u);
  EXPECT_EQ(h.precision, Precision::kFloat32);
}

TEST(CacheFile, DoubleCachesStoreFloatTensors) {
  TempDir dir;
  const auto w = init_weights<double>(small_config(), 7);
  const auto kv = prefill_chunk(w, make_chunk(1, {1, 2, 3, 4}));
  save_cache(kv, w.config, dir.path() / "a.ifkc");
  const auto loaded = load_cache<double>(dir.path() / "a.ifkc");
  EXPECT_LT(max_abs_diff(loaded.layers[1].keys, kv.layers[1].keys), 1e-6);
  save_cache(loaded, w.config, dir.path() / "b.ifkc");
  EXPECT_EQ(read_bytes(dir.path() / "a.ifkc"), read_bytes(dir.path() / "b.ifkc"));
}

TEST(CacheFile, DetectsCorruptionVersionAndTruncation) {
  TempDir dir;
  const auto w = init_weights<float>(small_config(), 8);
  const auto kv = prefill_chunk(w, make_chunk(1, {1, 2, 3}));
  const auto path = dir.path() / "c.ifkc";
  save_cache(kv, w.config, path);
  const auto good = read_bytes(path);

  auto bad = good;
  bad[bad.size() - 20] ^= 0x01;
  write_bytes(path, bad);
  EXPECT_THROW(load_cache<float>(path), ChecksumError);

  bad = good;
  bad[4] = 2;  // version field
  write_bytes(path, bad);
  EXPECT_THROW(load_cache<float>(path), VersionError);

  bad = good;
  bad.resize(bad.size() / 2);
  write_bytes(path, bad);
  EXPECT_THROW(load_cache<float>(path), FormatError);

  bad = good;
  bad[0] = 'X';
  write_bytes(path, bad);
  EXPECT_THROW(load_cache<float>(path), FormatError);
}

TEST(CacheRegistry, PrefillsOnceAndReloads) {
  TempDir dir;
  const auto w = init_weights<float>(small_config(), 9);
  CacheRegistry<float> reg(dir.path());
  const auto chunk = make_chunk(5, {1, 2, 3, 4, 5});
  const auto fp = fingerprint(w);
  const auto a = reg.get_or_prefill(w, fp, chunk);
  EXPECT_TRUE(std::filesystem::exists(reg.path_for(fp, chunk.token_ids)));
  const auto b = reg.get_or_prefill(w, fp, chunk);
  EXPECT_EQ(a, b);
}

TEST(CacheRegistry, ConcurrentRequestsAgree) {
  TempDir dir;
  const auto w = init_weights<float>(small_config(), 10);
  CacheRegistry<float> reg(dir.path());
  const auto fp = fingerprint(w);
  std::vector<ChunkSpec> chunks{make_chunk(1, {1, 2, 3}), make_chunk(2, {4, 5, 6, 7})};
  std::vector<ChunkKV<float>> got(8);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] { got[t] = reg.get_or_prefill(w, fp, chunks[t % 2]); });
  }
  for (auto& t : threads) t.join();
  for (int t = 2; t < 8; ++t) EXPECT_EQ(got[t], got[t % 2]);
}

TEST(Assemble, OffsetsAndMapping) {
  const auto w = init_weights<double>(small_config(), 11);
  std::vector<ChunkKV<double>> chunks{prefill_chunk(w, make_chunk(10, {1, 2, 3})),
                                      prefill_chunk(w, make_chunk(20, {4, 5}))};
  const auto cache = assemble(std::span<const ChunkKV<double>>(chunks));
  EXPECT_EQ(cache.context_length, 5);
  EXPECT_EQ(cache.origin[3], (TokenOrigin{20, 0}));
  EXPECT_EQ(cache.global_index(1, 1), 4);
  EXPECT_EQ(cache.key_positions, (std::vector<int64_t>{0, 1, 2, 0, 1}));
  EXPECT_EQ(cache.token_ids, (std::vector<int32_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(cache.layers[1].values.row(3), chunks[1].layers[1].values.row(0));
}

TEST(Assemble, PromptOnly) {
  const auto w = init_weights<double>(small_config(), 12);
  const auto prompt = prefill_sequence(w, 0, std::vector<int32_t>{1, 2}, 0, Provenance::kFullPrefill);
  const auto cache = assemble(std::span<const ChunkKV<double>>(), &prompt);
  EXPECT_EQ(cache.context_length, 0);
  EXPECT_EQ(cache.prompt_length, 2);
  EXPECT_EQ(cache.layers[0].keys.rows(), 2);
}

TEST(Assemble, PermutedOrderMapping) {
  const auto w = init_weights<double>(small_config(), 13);
  std::vector<ChunkKV<double>> chunks{prefill_chunk(w, make_chunk(1, {1, 2})),
                                      prefill_chunk(w, make_chunk(2, {3, 4, 5})),
                                      prefill_chunk(w, make_chunk(3, {6}))};
  const std::vector<int> perm{2, 0, 1};
  std::vector<ChunkKV<double>> permuted;
  for (int i : perm) permuted.push_back(chunks[i]);
  const auto cache = assemble(std::span<const ChunkKV<double>>(permuted));
  std::vector<TokenOrigin> expected;
  for (int i : perm) {
    for (int j = 0; j < chunks[i].length(); ++j) expected.push_back({chunks[i].chunk_id, j});
  }
  EXPECT_EQ(cache.origin, expected);
  EXPECT_EQ(cache.chunk_ids, (std::vector<uint64_t>{3, 1, 2}));
}

TEST(Assemble, RejectsMixedModels) {
  const auto w1 = init_weights<double>(small_config(), 14);
  const auto w2 = init_weights<double>(small_config(), 15);
  std::vector<ChunkKV<double>> chunks{prefill_chunk(w1, make_chunk(1, {1})), prefill_chunk(w2, make_chunk(2, {2}))};
  EXPECT_THROW(assemble(std::span<const ChunkKV<double>>(chunks)), InputError);
}

class ReplaceEntries : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto w = init_weights<double>(small_config(), 16);
    std::vector<ChunkKV<double>> chunks{prefill_chunk(w, make_chunk(1, {1, 2, 3, 4}))};
    cache_ = assemble(std::span<const ChunkKV<double>>(chunks));
  }
  std::vector<LayerKV<double>> rows(int n, double fill) const {
    return std::vector<LayerKV<double>>(2, {Matrix<double>::Constant(n, 16, fill), Matrix<double>::Constant(n, 16, fill)});
  }
  AssembledCache<double> cache_;
};

TEST_F(ReplaceEntries, EmptySetIsIdentity) {
  const auto out = replace_entries(cache_, {}, std::span<const LayerKV<double>>(), {});
  EXPECT_EQ(out.layers[0].keys, cache_.layers[0].keys);
  EXPECT_EQ(out.provenance, cache_.provenance);
}

TEST_F(ReplaceEntries, OnlyListedRowsChange) {
  const std::vector<int> idx{2};
  const std::vector<int64_t> pos{2};
  const auto r = rows(1, 9.0);
  const auto out = replace_entries(cache_, idx, std::span<const LayerKV<double>>(r), pos);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ(out.layers[l].keys.row(2), Matrix<double>::Constant(1, 16, 9.0));
    EXPECT_EQ(out.layers[l].keys.row(1), cache_.layers[l].keys.row(1));
    EXPECT_EQ(out.layers[l].values.row(3), cache_.layers[l].values.row(3));
  }
  EXPECT_EQ(out.provenance[2], Provenance::kRecomputedGlobal);
  EXPECT_EQ(out.provenance[1], Provenance::kPrefilledLocal);
}

TEST_F(ReplaceEntries, AllRowsMarkedRecomputed) {
  const std::vector<int> idx{0, 1, 2, 3};
  const std::vector<int64_t> pos{0, 1, 2, 3};
  const auto r = rows(4, 1.0);
  const auto out = replace_entries(cache_, idx, std::span<const LayerKV<double>>(r), pos);
  for (auto p : out.provenance) EXPECT_EQ(p, Provenance::kRecomputedGlobal);
}

TEST_F(ReplaceEntries, RejectsBadIndices) {
  const auto r = rows(2, 1.0);
  const std::vector<int64_t> pos{0, 0};
  EXPECT_THROW(replace_entries(cache_, std::vector<int>{1, 1}, std::span<const LayerKV<double>>(r), pos),
               InputError);
  EXPECT_THROW(replace_entries(cache_, std::vector<int>{1, 4}, std::span<const LayerKV<double>>(r), pos),
               InputError);
}

TEST(ContextKv, RealignedChunksMatchOffsetPrefill) {
  // Re-rotating a chunk-local key to offset d equals prefilling the chunk at d.
  std::mt19937_64 rng(17);
  const auto w = init_weights<double>(small_config(), 17);
  const auto tokens = random_tokens(rng, 6, 32);
  std::vector<ChunkKV<double>> chunks{prefill_chunk(w, make_chunk(1, tokens))};
  const auto cache = assemble(std::span<const ChunkKV<double>>(chunks));
  const std::vector<int64_t> target{40, 41, 42, 43, 44, 45};
  const auto moved = context_kv_at(cache, w.config, target);
  const auto offset = prefill_sequence(w, 1, tokens, 40, Provenance::kFullPrefill);
  for (int l = 0; l < 2; ++l) EXPECT_LT(max_abs_diff(moved[l].keys, offset.layers[l].keys), 1e-10);
}

}  // namespace
}  // namespace chunkkv
