// Copyright 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "chunkkv/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "binary_io.hpp"

namespace chunkkv {

Precision parse_precision(std::string_view name) {
  if (name == "f32" || name == "float32") return Precision::kFloat32;
  if (name == "f64" || name == "float64") return Precision::kFloat64;
  throw ConfigError("unknown precision: " + std::string(name));
}

std::string_view to_string(Precision p) {
  return p == Precision::kFloat32 ? "f32" : "f64";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_head < 2 || d_head % 2 != 0) fail("d_head must be even and >= 2");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (!(rope_base > 1.0)) fail("rope_base must be > 1");
  if (max_position < 1) fail("max_position must be >= 1");
}

namespace {

constexpr double kRmsEps = 1e-6;

template <typename T>
Matrix<T> gaussian(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template <typename T>
Vector<T> ones(int n) {
  return Vector<T>::Ones(n);
}

template <typename T>
void rms_norm_rows(const Matrix<T>& in, const Vector<T>& gain, Matrix<T>& out) {
  out.resize(in.rows(), in.cols());
  const T inv_cols = T(1) / static_cast<T>(in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const T mean_sq = in.row(r).squaredNorm() * inv_cols;
    const T scale = T(1) / std::sqrt(mean_sq + static_cast<T>(kRmsEps));
    out.row(r) = in.row(r).cwiseProduct(gain.transpose()) * scale;
  }
}

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

// Visits every tensor in file order.
template <typename W, typename F>
void for_each_tensor(W& weights, F&& f) {
  f(std::string("embedding"), weights.embedding);
  for (size_t i = 0; i < weights.layers.size(); ++i) {
    auto& l = weights.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    f(p + "attn_norm", l.attn_norm);
    f(p + "wq", l.wq);
    f(p + "wk", l.wk);
    f(p + "wv", l.wv);
    f(p + "wo", l.wo);
    f(p + "mlp_norm", l.mlp_norm);
    f(p + "w_gate", l.w_gate);
    f(p + "w_up", l.w_up);
    f(p + "w_down", l.w_down);
  }
  f(std::string("final_norm"), weights.final_norm);
  f(std::string("lm_head"), weights.lm_head);
}

template <typename T>
Weights<T> allocate(const ModelConfig& c) {
  Weights<T> w;
  w.config = c;
  const int d = c.d_model();
  w.embedding.resize(c.vocab_size, d);
  w.layers.resize(c.n_layers);
  for (auto& l : w.layers) {
    l.attn_norm.resize(d);
    l.wq.resize(d, d);
    l.wk.resize(d, d);
    l.wv.resize(d, d);
    l.wo.resize(d, d);
    l.mlp_norm.resize(d);
    l.w_gate.resize(c.d_ff, d);
    l.w_up.resize(c.d_ff, d);
    l.w_down.resize(d, c.d_ff);
  }
  w.final_norm.resize(d);
  w.lm_head.resize(c.vocab_size, d);
  return w;
}

}  // namespace

template <typename T>
Weights<T> init_weights(const ModelConfig& config, uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d_model();
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double down = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

  Weights<T> w;
  w.config = config;
  w.embedding = gaussian<T>(rng, config.vocab_size, d, 1.0);
  for (int i = 0; i < config.n_layers; ++i) {
    LayerWeights<T> l;
    l.attn_norm = ones<T>(d);
    l.wq = gaussian<T>(rng, d, d, proj);
    l.wk = gaussian<T>(rng, d, d, proj);
    l.wv = gaussian<T>(rng, d, d, proj);
    l.wo = gaussian<T>(rng, d, d, proj);
    l.mlp_norm = ones<T>(d);
    l.w_gate = gaussian<T>(rng, config.d_ff, d, proj);
    l.w_up = gaussian<T>(rng, config.d_ff, d, proj);
    l.w_down = gaussian<T>(rng, d, config.d_ff, down);
    w.layers.push_back(std::move(l));
  }
  w.final_norm = ones<T>(d);
  w.lm_head = gaussian<T>(rng, config.vocab_size, d, proj);
  return w;
}

template <typename T>
uint64_t fingerprint(const Weights<T>& weights) {
  Fnv1a64 h;
  const auto& c = weights.config;
  for (int v : {c.n_layers, c.n_heads, c.d_head, c.d_ff, c.vocab_size, c.max_position}) {
    h.update_value(static_cast<int32_t>(v));
  }
  h.update_value(c.rope_base);
  h.update_value(static_cast<uint8_t>(precision_of<T>()));
  for_each_tensor(weights, [&](const std::string&, const auto& t) {
    h.update(t.data(), sizeof(T) * static_cast<size_t>(t.size()));
  });
  return h.digest();
}

namespace {
constexpr std::string_view kWeightMagic = "IFKV";
}

template <typename T>
void save_weights(const Weights<T>& weights, const std::filesystem::path& path) {
  detail::ByteWriter out;
  const auto& c = weights.config;
  out.put_bytes(kWeightMagic);
  out.put<uint32_t>(kWeightFileVersion);
  for (int v : {c.n_layers, c.n_heads, c.d_head, c.d_ff, c.vocab_size, c.max_position}) {
    out.put<uint32_t>(static_cast<uint32_t>(v));
  }
  out.put<double>(c.rope_base);
  out.put<uint8_t>(static_cast<uint8_t>(precision_of<T>()));
  for_each_tensor(weights, [&](const std::string& name, const auto& t) {
    out.put<uint32_t>(static_cast<uint32_t>(name.size()));
    out.put_bytes(name);
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Vector<T>>) {
      out.put<uint32_t>(1);
      out.put<uint32_t>(static_cast<uint32_t>(t.rows()));
    } else {
      out.put<uint32_t>(2);
      out.put<uint32_t>(static_cast<uint32_t>(t.rows()));
      out.put<uint32_t>(static_cast<uint32_t>(t.cols()));
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) out.put<T>(t.data()[i]);
  });
  out.write_to(path);
}

template <typename T>
Weights<T> load_weights(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  if (in.get_bytes(4) != kWeightMagic) throw FormatError("not a weight file (bad magic)");
  const auto version = in.get<uint32_t>();
  if (version != kWeightFileVersion) {
    throw VersionError("unsupported weight file version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = static_cast<int>(in.get<uint32_t>());
  c.n_heads = static_cast<int>(in.get<uint32_t>());
  c.d_head = static_cast<int>(in.get<uint32_t>());
  c.d_ff = static_cast<int>(in.get<uint32_t>());
  c.vocab_size = static_cast<int>(in.get<uint32_t>());
  c.max_position = static_cast<int>(in.get<uint32_t>());
  c.rope_base = in.get<double>();
  const auto tag = in.get<uint8_t>();
  if (tag != static_cast<uint8_t>(Precision::kFloat32) && tag != static_cast<uint8_t>(Precision::kFloat64)) {
    throw FormatError("unknown precision tag");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weight file header: ") + e.what());
  }
  auto w = allocate<T>(c);
  for_each_tensor(w, [&](const std::string& name, auto& t) {
    const auto len = in.get<uint32_t>();
    if (in.get_bytes(len) != name) throw FormatError("unexpected tensor, wanted " + name);
    const auto rank = in.get<uint32_t>();
    if (rank != 1 && rank != 2) throw FormatError("bad rank for " + name);
    Eigen::Index count = 1;
    std::vector<uint32_t> dims(rank);
    for (auto& d : dims) {
      d = in.get<uint32_t>();
      count *= d;
    }
    constexpr bool is_vector = std::is_same_v<std::decay_t<decltype(t)>, Vector<T>>;
    const bool shape_ok = is_vector ? (rank == 1 && dims[0] == t.rows())
                                    : (rank == 2 && dims[0] == t.rows() && dims[1] == t.cols());
    if (!shape_ok || count != t.size()) throw FormatError("shape mismatch for " + name);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = tag == static_cast<uint8_t>(Precision::kFloat32) ? static_cast<T>(in.get<float>())
                                                                     : static_cast<T>(in.get<double>());
    }
  });
  if (in.remaining() != 0) throw FormatError("trailing bytes in weight file");
  return w;
}

// ---------------------------------------------------------------------------

std::vector<double> rope_frequencies(int d, double base) {
  if (d <= 0 || d % 2 != 0) throw InputError("RoPE dimension must be positive and even");
  std::vector<double> theta(static_cast<size_t>(d / 2));
  for (int i = 0; i < d / 2; ++i) {
    theta[static_cast<size_t>(i)] = std::pow(base, -2.0 * i / d);
  }
  return theta;
}

template <typename T>
void apply_rope_inplace(std::span<T> x, int64_t position, double base) {
  if (x.size() % 2 != 0) throw InputError("RoPE input length must be even");
  if (x.empty()) return;
  const auto theta = rope_frequencies(static_cast<int>(x.size()), base);
  for (size_t i = 0; i < theta.size(); ++i) {
    const double angle = theta[i] * static_cast<double>(position);
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T x0 = x[2 * i];
    const T x1 = x[2 * i + 1];
    x[2 * i] = x0 * c - x1 * s;
    x[2 * i + 1] = x0 * s + x1 * c;
  }
}

template <typename T>
std::vector<T> apply_rope(std::span<const T> x, int64_t position, double base) {
  std::vector<T> out(x.begin(), x.end());
  apply_rope_inplace<T>(out, position, base);
  return out;
}

template <typename T>
void rotate_rows(Matrix<T>& rows, std::span<const int64_t> deltas, int n_heads, int d_head,
                 double base) {
  if (static_cast<size_t>(rows.rows()) != deltas.size()) {
    throw InputError("rotate_rows: one delta per row required");
  }
  if (rows.cols() != static_cast<Eigen::Index>(n_heads) * d_head) {
    throw InputError("rotate_rows: column count does not match heads x d_head");
  }
  const auto theta = rope_frequencies(d_head, base);
  const size_t half = theta.size();
  std::vector<T> cs(half), sn(half);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const int64_t delta = deltas[static_cast<size_t>(r)];
    if (delta == 0) continue;
    for (size_t i = 0; i < half; ++i) {
      const double angle = theta[i] * static_cast<double>(delta);
      cs[i] = static_cast<T>(std::cos(angle));
      sn[i] = static_cast<T>(std::sin(angle));
    }
    T* row = rows.row(r).data();
    for (int h = 0; h < n_heads; ++h) {
      T* x = row + static_cast<ptrdiff_t>(h) * d_head;
      for (size_t i = 0; i < half; ++i) {
        const T x0 = x[2 * i];
        const T x1 = x[2 * i + 1];
        x[2 * i] = x0 * cs[i] - x1 * sn[i];
        x[2 * i + 1] = x0 * sn[i] + x1 * cs[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void validate_request(const Weights<T>& w, const ForwardRequest<T>& req, int layers_to_run,
                      Eigen::Index prefix_rows) {
  const auto& c = w.config;
  const size_t n = req.token_ids.size();
  if (n == 0) throw InputError("forward: empty request");
  if (req.positions.size() != n) throw InputError("forward: positions length != token count");
  for (int32_t t : req.token_ids) {
    if (t < 0 || t >= c.vocab_size) throw InputError("forward: token id out of range");
  }
  for (int64_t p : req.positions) {
    if (p < 0 || p >= c.max_position) {
      throw InputError("forward: position " + std::to_string(p) + " out of range");
    }
  }
  if (!req.injected_kv.empty()) {
    if (static_cast<int>(req.injected_kv.size()) < layers_to_run) {
      throw InputError("forward: injected KV has fewer layers than the model");
    }
    for (int l = 0; l < layers_to_run; ++l) {
      const auto& kv = req.injected_kv[static_cast<size_t>(l)];
      if (kv.keys.rows() != prefix_rows || kv.values.rows() != prefix_rows ||
          kv.keys.cols() != c.d_model() || kv.values.cols() != c.d_model()) {
        throw InputError("forward: injected KV shape mismatch at layer " + std::to_string(l));
      }
    }
  }
  if (req.mask.kind == AttentionMask::Kind::kExplicit) {
    if (req.mask.allowed.size() != n) throw InputError("forward: explicit mask needs one row per token");
    for (size_t i = 0; i < n; ++i) {
      const auto& row = req.mask.allowed[i];
      if (row.empty()) throw InputError("forward: explicit mask row has no keys");
      const int64_t limit = prefix_rows + static_cast<int64_t>(i);
      for (int32_t k : row) {
        if (k < 0 || k > limit) {
          throw InputError("forward: mask references key " + std::to_string(k) + " not visible to row " +
                           std::to_string(i));
        }
      }
    }
  }
  for (int l : req.capture_layers) {
    if (l < 0 || l >= layers_to_run) throw InputError("forward: capture layer out of range");
  }
}

// Row-wise masked softmax of `scores` (query rows [row0, row0 + rows)).
template <typename T>
void masked_softmax(Matrix<T>& scores, const AttentionMask& mask, Eigen::Index row0, Eigen::Index prefix_rows) {
  const Eigen::Index cols = scores.cols();
  std::vector<char> allowed;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::Index q = row0 + r;
    T* s = scores.row(r).data();
    if (mask.kind == AttentionMask::Kind::kCausal) {
      const Eigen::Index last = std::min(cols - 1, prefix_rows + q);
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index c = 0; c <= last; ++c) mx = std::max(mx, s[c]);
      T sum = 0;
      for (Eigen::Index c = 0; c <= last; ++c) {
        s[c] = std::exp(s[c] - mx);
        sum += s[c];
      }
      for (Eigen::Index c = 0; c <= last; ++c) s[c] /= sum;
      for (Eigen::Index c = last + 1; c < cols; ++c) s[c] = 0;
    } else {
      allowed.assign(static_cast<size_t>(cols), 0);
      for (int32_t k : mask.allowed[static_cast<size_t>(q)]) allowed[static_cast<size_t>(k)] = 1;
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (allowed[static_cast<size_t>(c)]) mx = std::max(mx, s[c]);
      }
      T sum = 0;
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (allowed[static_cast<size_t>(c)]) {
          s[c] = std::exp(s[c] - mx);
          sum += s[c];
        } else {
          s[c] = 0;
        }
      }
      for (Eigen::Index c = 0; c < cols; ++c) s[c] /= sum;
    }
  }
}

constexpr Eigen::Index kQueryBlock = 256;

}  // namespace

template <typename T>
ForwardResult<T> forward(const Weights<T>& w, const ForwardRequest<T>& req) {
  const auto& c = w.config;
  const int layers_to_run = req.num_layers < 0 ? c.n_layers : req.num_layers;
  if (layers_to_run < 1 || layers_to_run > c.n_layers) throw InputError("forward: num_layers out of range");
  const Eigen::Index prefix_rows = req.injected_kv.empty() ? 0 : req.injected_kv.front().keys.rows();
  validate_request(w, req, layers_to_run, prefix_rows);

  const Eigen::Index n = static_cast<Eigen::Index>(req.token_ids.size());
  const Eigen::Index total = prefix_rows + n;
  const int d = c.d_model();
  const int dh = c.d_head;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ForwardResult<T> result;
  Matrix<T> h(n, d);
  for (Eigen::Index i = 0; i < n; ++i) h.row(i) = w.embedding.row(req.token_ids[static_cast<size_t>(i)]);

  Matrix<T> x, q, keys(total, d), values(total, d), attn_out(n, d), scores;
  for (int l = 0; l < layers_to_run; ++l) {
    const auto& lw = w.layers[static_cast<size_t>(l)];
    rms_norm_rows(h, lw.attn_norm, x);
    q = x * lw.wq.transpose();
    Matrix<T> k = x * lw.wk.transpose();
    Matrix<T> v = x * lw.wv.transpose();
    rotate_rows<T>(q, req.positions, c.n_heads, dh, c.rope_base);
    rotate_rows<T>(k, req.positions, c.n_heads, dh, c.rope_base);

    if (prefix_rows > 0) {
      keys.topRows(prefix_rows) = req.injected_kv[static_cast<size_t>(l)].keys;
      values.topRows(prefix_rows) = req.injected_kv[static_cast<size_t>(l)].values;
    }
    keys.bottomRows(n) = k;
    values.bottomRows(n) = v;

    const bool capture =
        std::find(req.capture_layers.begin(), req.capture_layers.end(), l) != req.capture_layers.end();
    std::vector<Matrix<T>> captured;
    if (capture) captured.assign(static_cast<size_t>(c.n_heads), Matrix<T>::Zero(n, total));

    for (int head = 0; head < c.n_heads; ++head) {
      const auto kh = keys.middleCols(head * dh, dh);
      const auto vh = values.middleCols(head * dh, dh);
      for (Eigen::Index r0 = 0; r0 < n; r0 += kQueryBlock) {
        const Eigen::Index rows = std::min(kQueryBlock, n - r0);
        // Causal rows in this block never look past prefix + r0 + rows - 1.
        const Eigen::Index cols =
            req.mask.kind == AttentionMask::Kind::kCausal ? prefix_rows + r0 + rows : total;
        scores.noalias() = (q.block(r0, head * dh, rows, dh) * kh.topRows(cols).transpose()) * scale;
        masked_softmax(scores, req.mask, r0, prefix_rows);
        attn_out.block(r0, head * dh, rows, dh).noalias() = scores * vh.topRows(cols);
        if (capture) captured[static_cast<size_t>(head)].block(r0, 0, rows, cols) = scores;
      }
    }
    if (capture) result.attention.emplace(l, std::move(captured));

    h.noalias() += attn_out * lw.wo.transpose();
    rms_norm_rows(h, lw.mlp_norm, x);
    Matrix<T> gate = x * lw.w_gate.transpose();
    const Matrix<T> up = x * lw.w_up.transpose();
    gate = gate.unaryExpr([](T g) { return silu(g); }).cwiseProduct(up);
    h.noalias() += gate * lw.w_down.transpose();

    result.kv.push_back({std::move(k), std::move(v)});
    if (req.keep_hidden) result.hidden.push_back(h);
  }

  if (layers_to_run == c.n_layers) {
    Matrix<T> last = h.bottomRows(1);
    Matrix<T> normed;
    rms_norm_rows(last, w.final_norm, normed);
    result.logits = w.lm_head * normed.row(0).transpose();
  }
  return result;
}

#define CHUNKKV_INSTANTIATE(T)                                                                     \
  template Weights<T> init_weights<T>(const ModelConfig&, uint64_t);                               \
  template uint64_t fingerprint<T>(const Weights<T>&);                                             \
  template void save_weights<T>(const Weights<T>&, const std::filesystem::path&);                  \
  template Weights<T> load_weights<T>(const std::filesystem::path&);                               \
  template void apply_rope_inplace<T>(std::span<T>, int64_t, double);                              \
  template std::vector<T> apply_rope<T>(std::span<const T>, int64_t, double);                      \
  template void rotate_rows<T>(Matrix<T>&, std::span<const int64_t>, int, int, double);            \
  template ForwardResult<T> forward<T>(const Weights<T>&, const ForwardRequest<T>&);

CHUNKKV_INSTANTIATE(float)
CHUNKKV_INSTANTIATE(double)

#undef CHUNKKV_INSTANTIATE

}  // namespace chunkkv
