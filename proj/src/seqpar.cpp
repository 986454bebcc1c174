// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/seqpar.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace chunkkv {

double projection_flops(double q_rows, double d_model) { return 8.0 * q_rows * d_model * d_model; }
double mlp_flops(double q_rows, double d_model, double d_ff) { return 6.0 * q_rows * d_model * d_ff; }
double attention_flops(double pairs, double d_model) { return 4.0 * d_model * pairs; }
double causal_pairs(double n) { return n * (n + 1.0) / 2.0; }

double recompute_flops(double k, double n, int n_layers, double d_model, double d_ff) {
  return n_layers * (projection_flops(k, d_model) + mlp_flops(k, d_model, d_ff) + attention_flops(k * n, d_model));
}

double prefill_flops(double n, int n_layers, double d_model, double d_ff) {
  return n_layers *
         (projection_flops(n, d_model) + mlp_flops(n, d_model, d_ff) + attention_flops(causal_pairs(n), d_model));
}

SpStrategy parse_sp_strategy(std::string_view name) {
  if (name == "single" || name == "single_prefill") return SpStrategy::kSinglePrefill;
  if (name == "ring" || name == "ring_attention") return SpStrategy::kRingAttention;
  if (name == "ours") return SpStrategy::kOurs;
  throw ConfigError("unknown sequence-parallel strategy: " + std::string(name));
}

std::string to_string(SpStrategy s) {
  switch (s) {
    case SpStrategy::kSinglePrefill:
      return "single_prefill";
    case SpStrategy::kRingAttention:
      return "ring_attention";
    case SpStrategy::kOurs:
      return "ours";
  }
  return "?";
}

void CostModelParams::validate() const {
  if (!(seconds_per_flop > 0) || !(bytes_per_element > 0)) {
    throw ConfigError("seconds_per_flop and bytes_per_element must be positive");
  }
  if (!(seconds_per_byte >= 0) || !(link_latency >= 0)) throw ConfigError("link costs must be >= 0");
  if (device_count < 1) throw ConfigError("device_count must be >= 1");
  if (n_layers < 1 || d_model < 1 || d_ff < 1) throw ConfigError("model dimensions must be positive");
  if (!(recompute_ratio >= 0 && recompute_ratio <= 1)) throw ConfigError("recompute_ratio must lie in [0, 1]");
  if (!(locality_fraction >= 0 && locality_fraction <= 1)) throw ConfigError("locality_fraction must lie in [0, 1]");
  if (prompt_length < 0) throw ConfigError("prompt_length must be >= 0");
}

CostModelParams CostModelParams::parse(std::string_view text) {
  CostModelParams p;
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"seconds_per_flop", [&](const std::string& v) { p.seconds_per_flop = std::stod(v); }},
      {"seconds_per_byte", [&](const std::string& v) { p.seconds_per_byte = std::stod(v); }},
      {"link_latency", [&](const std::string& v) { p.link_latency = std::stod(v); }},
      {"device_count", [&](const std::string& v) { p.device_count = std::stoi(v); }},
      {"n_layers", [&](const std::string& v) { p.n_layers = std::stoi(v); }},
      {"d_model", [&](const std::string& v) { p.d_model = std::stoi(v); }},
      {"d_ff", [&](const std::string& v) { p.d_ff = std::stoi(v); }},
      {"recompute_ratio", [&](const std::string& v) { p.recompute_ratio = std::stod(v); }},
      {"bytes_per_element", [&](const std::string& v) { p.bytes_per_element = std::stod(v); }},
      {"prompt_length", [&](const std::string& v) { p.prompt_length = std::stoi(v); }},
      {"locality_fraction", [&](const std::string& v) { p.locality_fraction = std::stod(v); }},
  };
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("params line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("params line " + std::to_string(lineno) + ": unknown key " + key);
    try {
      it->second(value);
    } catch (const std::logic_error&) {
      throw ConfigError("params line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  p.validate();
  return p;
}

CostModelParams CostModelParams::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open params file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

StrategyEstimate estimate(const CostModelParams& p, int64_t seq_len, SpStrategy strategy) {
  p.validate();
  if (seq_len < p.device_count) throw InputError("sequence length must be >= device_count");
  const double n = static_cast<double>(seq_len);
  const double dev = p.device_count;
  const double d = p.d_model, ff = p.d_ff;
  const int layers = p.n_layers;
  const double kv_bytes_per_token = 2.0 * d * p.bytes_per_element;  // one layer's K and V

  StrategyEstimate e;
  e.strategy = strategy;
  switch (strategy) {
    case SpStrategy::kSinglePrefill: {
      e.flops.projection = layers * projection_flops(n, d);
      e.flops.mlp = layers * mlp_flops(n, d, ff);
      e.flops.attention = layers * attention_flops(causal_pairs(n), d);
      e.compute_seconds = e.flops.total() * p.seconds_per_flop;
      break;
    }
    case SpStrategy::kRingAttention: {
      e.flops.projection = layers * projection_flops(n, d) / dev;
      e.flops.mlp = layers * mlp_flops(n, d, ff) / dev;
      e.flops.attention = layers * attention_flops(causal_pairs(n), d) / dev;
      e.compute_seconds = e.flops.total() * p.seconds_per_flop;
      // Each layer rotates every device's N/D block of K/V D-1 hops around the ring.
      const double block_bytes = (n / dev) * kv_bytes_per_token;
      e.comm_seconds = layers * (dev - 1) * (p.link_latency + block_bytes * p.seconds_per_byte);
      e.comm_bytes = layers * (dev - 1) * dev * block_bytes;
      break;
    }
    case SpStrategy::kOurs: {
      const double chunk = n / dev;
      const double m = p.prompt_length;
      const double r = std::ceil(p.recompute_ratio * n - 1e-9);
      // Chunk prefill runs concurrently, one chunk per device.
      e.flops.projection = layers * projection_flops(chunk, d);
      e.flops.mlp = layers * mlp_flops(chunk, d, ff);
      e.flops.attention = layers * attention_flops(causal_pairs(chunk), d);
      // Selection pass: prompt rows over the whole context.
      e.flops.projection += layers * projection_flops(m, d);
      e.flops.mlp += layers * mlp_flops(m, d, ff);
      e.flops.attention += layers * attention_flops(m * n + causal_pairs(m), d);
      // Recomputation is split evenly across devices.
      e.flops.recompute = recompute_flops(r, n, layers, d, ff) / dev;
      e.compute_seconds = e.flops.total() * p.seconds_per_flop;
      if (p.device_count > 1) {
        const double moved_tokens = r * p.locality_fraction * (dev - 1) / dev;
        e.comm_bytes = layers * moved_tokens * kv_bytes_per_token;
        e.comm_seconds = layers * (dev - 1) * p.link_latency + e.comm_bytes * p.seconds_per_byte;
      }
      break;
    }
  }
  e.ttft_seconds = e.compute_seconds + e.comm_seconds;
  return e;
}

double estimate_ttft(const CostModelParams& params, int64_t seq_len, SpStrategy strategy) {
  return estimate(params, seq_len, strategy).ttft_seconds;
}

const StrategyEstimate& SimReport::at(SpStrategy s) const {
  for (const auto& e : estimates) {
    if (e.strategy == s) return e;
  }
  throw InputError("strategy missing from report");
}

double SimReport::speedup(SpStrategy s) const {
  for (size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].strategy == s) return speedups[i];
  }
  throw InputError("strategy missing from report");
}

std::string SimReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(6);
  for (size_t i = 0; i < estimates.size(); ++i) {
    os << to_string(estimates[i].strategy) << " ttft_s=" << estimates[i].ttft_seconds << " speedup=" << speedups[i]
       << " comm_bytes=" << std::setprecision(12) << estimates[i].comm_bytes << std::setprecision(6) << '\n';
  }
  return os.str();
}

SimReport simulate(const CostModelParams& params, int64_t seq_len) {
  SimReport r;
  r.seq_len = seq_len;
  r.params = params;
  for (auto s : kAllSpStrategies) r.estimates.push_back(estimate(params, seq_len, s));
  const double base = r.estimates.front().ttft_seconds;
  for (const auto& e : r.estimates) {
    r.speedups.push_back(e.strategy == SpStrategy::kSinglePrefill ? 1.0 : base / e.ttft_seconds);
  }
  return r;
}

template <typename T>
ParallelPrefillResult<T> run_parallel_prefill(const Weights<T>& weights, std::span<const ChunkSpec> chunks,
                                              int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  ParallelPrefillResult<T> out;
  out.caches.resize(chunks.size());
  const auto start = std::chrono::steady_clock::now();
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (size_t i = next++; i < chunks.size(); i = next++) {
      try {
        out.caches[i] = prefill_chunk(weights, chunks[i]);
      } catch (...) {
        std::lock_guard guard(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const size_t n_threads = std::min<size_t>(static_cast<size_t>(workers), chunks.size());
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

template ParallelPrefillResult<float> run_parallel_prefill<float>(const Weights<float>&, std::span<const ChunkSpec>,
                                                                  int);
template ParallelPrefillResult<double> run_parallel_prefill<double>(const Weights<double>&,
                                                                    std::span<const ChunkSpec>, int);

}  // namespace chunkkv
