// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/kv_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "binary_io.hpp"

namespace chunkkv {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kPrefilledLocal:
      return "prefilled_local";
    case Provenance::kRecomputedGlobal:
      return "recomputed_global";
    case Provenance::kFullPrefill:
      return "full_prefill";
  }
  return "?";
}

template <typename T>
bool ChunkKV<T>::operator==(const ChunkKV& other) const {
  if (chunk_id != other.chunk_id || model_fingerprint != other.model_fingerprint ||
      token_ids != other.token_ids || prefill_positions != other.prefill_positions ||
      provenance != other.provenance || layers.size() != other.layers.size()) {
    return false;
  }
  for (size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].keys != other.layers[l].keys || layers[l].values != other.layers[l].values) return false;
  }
  return true;
}

template <typename T>
ChunkKV<T> prefill_sequence(const Weights<T>& weights, uint64_t chunk_id, std::span<const int32_t> tokens,
                            int64_t first_position, Provenance provenance) {
  if (tokens.empty()) throw InputError("prefill: empty chunk");
  if (first_position < 0 || first_position + static_cast<int64_t>(tokens.size()) > weights.config.max_position) {
    throw InputError("prefill: chunk does not fit below max_position");
  }
  ForwardRequest<T> req;
  req.token_ids.assign(tokens.begin(), tokens.end());
  req.positions.resize(tokens.size());
  std::iota(req.positions.begin(), req.positions.end(), first_position);
  req.num_layers = weights.config.n_layers;
  auto result = forward(weights, req);

  ChunkKV<T> out;
  out.chunk_id = chunk_id;
  out.model_fingerprint = fingerprint(weights);
  out.token_ids = std::move(req.token_ids);
  out.layers = std::move(result.kv);
  out.prefill_positions = std::move(req.positions);
  out.provenance = provenance;
  return out;
}

template <typename T>
ChunkKV<T> prefill_chunk(const Weights<T>& weights, const ChunkSpec& chunk) {
  return prefill_sequence(weights, chunk.chunk_id, std::span<const int32_t>(chunk.token_ids), 0,
                          Provenance::kPrefilledLocal);
}

uint64_t content_hash(std::span<const int32_t> tokens) {
  Fnv1a64 h;
  for (int32_t t : tokens) h.update_value(t);
  return h.digest();
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kCacheMagic = "IFKC";

CacheFileHeader parse_header(detail::ByteReader& in) {
  if (in.get_bytes(4) != kCacheMagic) throw FormatError("not a cache file (bad magic)");
  CacheFileHeader h;
  h.version = in.get<uint32_t>();
  if (h.version != kCacheFileVersion) {
    throw VersionError("unsupported cache file version " + std::to_string(h.version));
  }
  h.model_fingerprint = in.get<uint64_t>();
  h.chunk_id = in.get<uint64_t>();
  h.length = in.get<uint32_t>();
  h.n_layers = in.get<uint32_t>();
  h.n_heads = in.get<uint32_t>();
  h.d_head = in.get<uint32_t>();
  const auto prov = in.get<uint8_t>();
  if (prov > static_cast<uint8_t>(Provenance::kFullPrefill)) throw FormatError("bad provenance tag");
  h.provenance = static_cast<Provenance>(prov);
  const auto prec = in.get<uint8_t>();
  if (prec != static_cast<uint8_t>(Precision::kFloat32) && prec != static_cast<uint8_t>(Precision::kFloat64)) {
    throw FormatError("bad precision tag");
  }
  h.precision = static_cast<Precision>(prec);
  h.first_position = in.get<int64_t>();
  return h;
}

void verify_checksum(const detail::ByteReader& in) {
  const auto& bytes = in.bytes();
  if (bytes.size() < 8) throw FormatError("truncated file");
  Fnv1a64 h;
  h.update(bytes.data(), bytes.size() - 8);
  detail::ByteReader tail(std::vector<char>(bytes.end() - 8, bytes.end()));
  if (tail.get<uint64_t>() != h.digest()) throw ChecksumError("cache file checksum mismatch");
}

}  // namespace

template <typename T>
void save_cache(const ChunkKV<T>& cache, const ModelConfig& config, const std::filesystem::path& path) {
  const int d = config.d_model();
  if (static_cast<int>(cache.layers.size()) != config.n_layers) throw InputError("save_cache: layer count mismatch");
  for (const auto& l : cache.layers) {
    if (l.keys.rows() != cache.length() || l.values.rows() != cache.length() || l.keys.cols() != d ||
        l.values.cols() != d) {
      throw InputError("save_cache: tensor shape mismatch");
    }
  }
  detail::ByteWriter out;
  out.put_bytes(kCacheMagic);
  out.put<uint32_t>(kCacheFileVersion);
  out.put<uint64_t>(cache.model_fingerprint);
  out.put<uint64_t>(cache.chunk_id);
  out.put<uint32_t>(static_cast<uint32_t>(cache.length()));
  out.put<uint32_t>(static_cast<uint32_t>(config.n_layers));
  out.put<uint32_t>(static_cast<uint32_t>(config.n_heads));
  out.put<uint32_t>(static_cast<uint32_t>(config.d_head));
  out.put<uint8_t>(static_cast<uint8_t>(cache.provenance));
  out.put<uint8_t>(static_cast<uint8_t>(precision_of<T>()));
  out.put<int64_t>(cache.prefill_positions.empty() ? 0 : cache.prefill_positions.front());
  for (int32_t t : cache.token_ids) out.put<uint32_t>(static_cast<uint32_t>(t));
  for (const auto& l : cache.layers) {
    for (Eigen::Index i = 0; i < l.keys.size(); ++i) out.put<float>(static_cast<float>(l.keys.data()[i]));
    for (Eigen::Index i = 0; i < l.values.size(); ++i) out.put<float>(static_cast<float>(l.values.data()[i]));
  }
  Fnv1a64 h;
  h.update(out.bytes().data(), out.size());
  out.put<uint64_t>(h.digest());
  out.write_to(path);
}

CacheFileHeader read_cache_header(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  return parse_header(in);
}

template <typename T>
ChunkKV<T> load_cache(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  const auto h = parse_header(in);
  const uint64_t d = static_cast<uint64_t>(h.n_heads) * h.d_head;
  const uint64_t expected = static_cast<uint64_t>(h.length) * 4 + 2ull * h.n_layers * h.length * d * 4 + 8;
  if (in.remaining() != expected) {
    verify_checksum(in);  // a corrupted length field surfaces as a checksum failure
    throw FormatError("cache file size does not match its header");
  }
  verify_checksum(in);

  ChunkKV<T> out;
  out.chunk_id = h.chunk_id;
  out.model_fingerprint = h.model_fingerprint;
  out.provenance = h.provenance;
  out.token_ids.resize(h.length);
  for (auto& t : out.token_ids) t = static_cast<int32_t>(in.get<uint32_t>());
  out.prefill_positions.resize(h.length);
  std::iota(out.prefill_positions.begin(), out.prefill_positions.end(), h.first_position);
  const auto rows = static_cast<Eigen::Index>(h.length);
  const auto cols = static_cast<Eigen::Index>(d);
  for (uint32_t l = 0; l < h.n_layers; ++l) {
    LayerKV<T> kv{Matrix<T>(rows, cols), Matrix<T>(rows, cols)};
    for (Eigen::Index i = 0; i < kv.keys.size(); ++i) kv.keys.data()[i] = static_cast<T>(in.get<float>());
    for (Eigen::Index i = 0; i < kv.values.size(); ++i) kv.values.data()[i] = static_cast<T>(in.get<float>());
    out.layers.push_back(std::move(kv));
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
CacheRegistry<T>::CacheRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

template <typename T>
std::filesystem::path CacheRegistry<T>::path_for(uint64_t model_fingerprint, std::span<const int32_t> tokens) const {
  char name[64];
  std::snprintf(name, sizeof(name), "%016llx_%016llx.ifkc", static_cast<unsigned long long>(model_fingerprint),
                static_cast<unsigned long long>(content_hash(tokens)));
  return dir_ / name;
}

template <typename T>
std::mutex& CacheRegistry<T>::lock_for(uint64_t chunk_id) {
  std::lock_guard guard(table_mutex_);
  auto& slot = chunk_locks_[chunk_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

template <typename T>
ChunkKV<T> CacheRegistry<T>::get_or_prefill(const Weights<T>& weights, uint64_t model_fingerprint,
                                            const ChunkSpec& chunk) {
  std::lock_guard guard(lock_for(chunk.chunk_id));
  const auto path = path_for(model_fingerprint, chunk.token_ids);
  if (std::filesystem::exists(path)) {
    auto cached = load_cache<T>(path);
    if (cached.token_ids == chunk.token_ids && cached.model_fingerprint == model_fingerprint) {
      cached.chunk_id = chunk.chunk_id;
      return cached;
    }
  }
  auto kv = prefill_chunk(weights, chunk);
  // Write to a temporary name first so readers never observe a partial file.
  auto tmp = path;
  tmp += ".tmp";
  save_cache(kv, weights.config, tmp);
  std::filesystem::rename(tmp, path);
  return kv;
}

// ---------------------------------------------------------------------------

template <typename T>
int AssembledCache<T>::global_index(size_t chunk_slot, int local_index) const {
  if (chunk_slot >= chunk_lengths.size() || local_index < 0 || local_index >= chunk_lengths[chunk_slot]) {
    throw InputError("global_index: out of range");
  }
  return std::accumulate(chunk_lengths.begin(), chunk_lengths.begin() + static_cast<ptrdiff_t>(chunk_slot), 0) +
         local_index;
}

template <typename T>
AssembledCache<T> assemble(std::span<const ChunkKV<T>> chunks, const ChunkKV<T>* prompt_kv) {
  std::vector<const ChunkKV<T>*> parts;
  for (const auto& c : chunks) parts.push_back(&c);
  if (prompt_kv != nullptr) parts.push_back(prompt_kv);

  AssembledCache<T> out;
  if (parts.empty()) return out;
  const auto& first = *parts.front();
  out.model_fingerprint = first.model_fingerprint;
  const size_t n_layers = first.layers.size();
  const Eigen::Index cols = n_layers == 0 ? 0 : first.layers.front().keys.cols();
  Eigen::Index rows = 0;
  for (const auto* p : parts) {
    if (p->model_fingerprint != out.model_fingerprint || p->layers.size() != n_layers) {
      throw InputError("assemble: chunks come from different model configurations");
    }
    for (const auto& l : p->layers) {
      if (l.keys.cols() != cols || l.keys.rows() != p->length() || l.values.rows() != p->length()) {
        throw InputError("assemble: chunk tensor shape mismatch");
      }
    }
    rows += p->length();
  }

  out.layers.assign(n_layers, LayerKV<T>{Matrix<T>(rows, cols), Matrix<T>(rows, cols)});
  Eigen::Index offset = 0;
  for (size_t slot = 0; slot < parts.size(); ++slot) {
    const auto& p = *parts[slot];
    const bool is_prompt = prompt_kv != nullptr && slot + 1 == parts.size();
    for (size_t l = 0; l < n_layers; ++l) {
      out.layers[l].keys.middleRows(offset, p.length()) = p.layers[l].keys;
      out.layers[l].values.middleRows(offset, p.length()) = p.layers[l].values;
    }
    out.token_ids.insert(out.token_ids.end(), p.token_ids.begin(), p.token_ids.end());
    out.key_positions.insert(out.key_positions.end(), p.prefill_positions.begin(), p.prefill_positions.end());
    out.provenance.insert(out.provenance.end(), static_cast<size_t>(p.length()), p.provenance);
    if (is_prompt) {
      out.prompt_length = p.length();
    } else {
      out.chunk_ids.push_back(p.chunk_id);
      out.chunk_lengths.push_back(p.length());
      for (int i = 0; i < p.length(); ++i) out.origin.push_back({p.chunk_id, i});
      out.context_length += p.length();
    }
    offset += p.length();
  }
  return out;
}

template <typename T>
AssembledCache<T> replace_entries(const AssembledCache<T>& cache, std::span<const int> indices,
                                  std::span<const LayerKV<T>> rows, std::span<const int64_t> positions) {
  std::vector<char> seen(static_cast<size_t>(cache.context_length), 0);
  for (int idx : indices) {
    if (idx < 0 || idx >= cache.context_length) throw InputError("replace_entries: index out of range");
    if (seen[static_cast<size_t>(idx)]) throw InputError("replace_entries: duplicate index");
    seen[static_cast<size_t>(idx)] = 1;
  }
  if (positions.size() != indices.size()) throw InputError("replace_entries: one position per index required");
  if (indices.empty()) return cache;
  if (rows.size() != cache.layers.size()) throw InputError("replace_entries: layer count mismatch");
  for (const auto& l : rows) {
    if (l.keys.rows() != static_cast<Eigen::Index>(indices.size()) || l.values.rows() != l.keys.rows() ||
        l.keys.cols() != cache.layers.front().keys.cols()) {
      throw InputError("replace_entries: replacement shape mismatch");
    }
  }
  AssembledCache<T> out = cache;
  for (size_t l = 0; l < rows.size(); ++l) {
    for (size_t j = 0; j < indices.size(); ++j) {
      out.layers[l].keys.row(indices[j]) = rows[l].keys.row(static_cast<Eigen::Index>(j));
      out.layers[l].values.row(indices[j]) = rows[l].values.row(static_cast<Eigen::Index>(j));
    }
  }
  for (size_t j = 0; j < indices.size(); ++j) {
    out.provenance[static_cast<size_t>(indices[j])] = Provenance::kRecomputedGlobal;
    out.key_positions[static_cast<size_t>(indices[j])] = positions[j];
  }
  return out;
}

template <typename T>
std::vector<LayerKV<T>> context_kv_at(const AssembledCache<T>& cache, const ModelConfig& config,
                                      std::span<const int64_t> target_positions) {
  const int n = cache.context_length;
  if (static_cast<int>(target_positions.size()) != n) {
    throw InputError("context_kv_at: one target position per context token required");
  }
  std::vector<int64_t> deltas(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    deltas[static_cast<size_t>(i)] = target_positions[static_cast<size_t>(i)] - cache.key_positions[static_cast<size_t>(i)];
  }
  std::vector<LayerKV<T>> out;
  out.reserve(cache.layers.size());
  for (const auto& l : cache.layers) {
    LayerKV<T> kv{l.keys.topRows(n), l.values.topRows(n)};
    rotate_rows<T>(kv.keys, deltas, config.n_heads, config.d_head, config.rope_base);
    out.push_back(std::move(kv));
  }
  return out;
}

template <typename T>
double cache_distance(const AssembledCache<T>& a, const AssembledCache<T>& b, std::span<const int64_t> positions,
                      const ModelConfig& config) {
  if (a.context_length != b.context_length || a.layers.size() != b.layers.size()) {
    throw InputError("cache_distance: caches differ in shape");
  }
  const auto ka = context_kv_at(a, config, positions);
  const auto kb = context_kv_at(b, config, positions);
  double sum = 0.0;
  for (size_t l = 0; l < ka.size(); ++l) {
    sum += (ka[l].keys - kb[l].keys).template cast<double>().squaredNorm();
    sum += (ka[l].values - kb[l].values).template cast<double>().squaredNorm();
  }
  return std::sqrt(sum);
}

#define CHUNKKV_INSTANTIATE(T)                                                                                    \
  template struct ChunkKV<T>;                                                                                     \
  template struct AssembledCache<T>;                                                                              \
  template class CacheRegistry<T>;                                                                                \
  template ChunkKV<T> prefill_chunk<T>(const Weights<T>&, const ChunkSpec&);                                      \
  template ChunkKV<T> prefill_sequence<T>(const Weights<T>&, uint64_t, std::span<const int32_t>, int64_t,         \
                                          Provenance);                                                            \
  template void save_cache<T>(const ChunkKV<T>&, const ModelConfig&, const std::filesystem::path&);               \
  template ChunkKV<T> load_cache<T>(const std::filesystem::path&);                                                \
  template AssembledCache<T> assemble<T>(std::span<const ChunkKV<T>>, const ChunkKV<T>*);                         \
  template AssembledCache<T> replace_entries<T>(const AssembledCache<T>&, std::span<const int>,                   \
                                                std::span<const LayerKV<T>>, std::span<const int64_t>);           \
  template std::vector<LayerKV<T>> context_kv_at<T>(const AssembledCache<T>&, const ModelConfig&,                 \
                                                    std::span<const int64_t>);                                    \
  template double cache_distance<T>(const AssembledCache<T>&, const AssembledCache<T>&, std::span<const int64_t>, \
                                    const ModelConfig&);

CHUNKKV_INSTANTIATE(float)
CHUNKKV_INSTANTIATE(double)

#undef CHUNKKV_INSTANTIATE

}  // namespace chunkkv
