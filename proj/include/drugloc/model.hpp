// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Llama-style decoder-only transformer (RMS norm, rotary embeddings,
// gated MLP, grouped-query attention) with hook sites for activation
// capture and replacement. Float32 throughout; no KV cache.

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "drugloc/error.hpp"
#include "drugloc/matrix.hpp"
#include "drugloc/safetensors.hpp"

namespace drugloc {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t head_dim = 0;
  std::size_t mlp_dim = 0;
  std::size_t vocab_size = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  std::size_t max_seq_len = 0;
  bool tie_word_embeddings = false;

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::kMalformedConfig, "model config: " + msg); };
    if (n_layers < 1 || hidden_dim < 1 || n_heads < 1 || n_kv_heads < 1 || head_dim < 1 ||
        mlp_dim < 1 || vocab_size < 1 || max_seq_len < 1) {
      bad("all counts must be >= 1");
    }
    if (hidden_dim != n_heads * head_dim) {
      bad("hidden_dim (" + std::to_string(hidden_dim) + ") != n_heads * head_dim (" +
          std::to_string(n_heads) + " * " + std::to_string(head_dim) + ")");
    }
    if (n_heads % n_kv_heads != 0) bad("n_heads must be divisible by n_kv_heads");
    if (head_dim % 2 != 0) bad("head_dim must be even for rotary embeddings");
    if (!(rope_base > 0.0) || !std::isfinite(rope_base)) bad("rope_base must be positive");
    if (!(norm_eps > 0.0) || !std::isfinite(norm_eps)) bad("norm_eps must be positive");
  }

  std::size_t kv_dim() const { return n_kv_heads * head_dim; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},     {"hidden_dim", c.hidden_dim}, {"n_heads", c.n_heads},
       {"n_kv_heads", c.n_kv_heads}, {"head_dim", c.head_dim},     {"mlp_dim", c.mlp_dim},
       {"vocab_size", c.vocab_size}, {"rope_base", c.rope_base},   {"norm_eps", c.norm_eps},
       {"max_seq_len", c.max_seq_len}};
  if (c.tie_word_embeddings) j["tie_word_embeddings"] = true;
}

/// Accepts the native field names, or a Hugging Face Llama config.json.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    require(j.is_object(), ErrorKind::kMalformedConfig, "model config: expected a JSON object");
    if (j.contains("num_hidden_layers")) {
      c.n_layers = j.at("num_hidden_layers").get<std::size_t>();
      c.hidden_dim = j.at("hidden_size").get<std::size_t>();
      c.n_heads = j.at("num_attention_heads").get<std::size_t>();
      c.n_kv_heads = j.value("num_key_value_heads", c.n_heads);
      c.head_dim = j.contains("head_dim") && !j["head_dim"].is_null()
                       ? j["head_dim"].get<std::size_t>()
                       : c.hidden_dim / std::max<std::size_t>(c.n_heads, 1);
      c.mlp_dim = j.at("intermediate_size").get<std::size_t>();
      c.vocab_size = j.at("vocab_size").get<std::size_t>();
      c.rope_base = j.value("rope_theta", 10000.0);
      c.norm_eps = j.value("rms_norm_eps", 1e-6);
      c.max_seq_len = j.value("max_position_embeddings", std::size_t{2048});
      c.tie_word_embeddings = j.value("tie_word_embeddings", false);
    } else {
      c.n_layers = j.at("n_layers").get<std::size_t>();
      c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
      c.n_heads = j.at("n_heads").get<std::size_t>();
      c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
      c.head_dim = j.at("head_dim").get<std::size_t>();
      c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
      c.vocab_size = j.at("vocab_size").get<std::size_t>();
      c.rope_base = j.at("rope_base").get<double>();
      c.norm_eps = j.at("norm_eps").get<double>();
      c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
      c.tie_word_embeddings = j.value("tie_word_embeddings", false);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformedConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Hook sites

enum class HookKind : std::uint8_t {
  kResidPre,   // residual stream entering block L, before its first norm
  kMlpOut,     // MLP output of block L, before the residual add
  kResidPost,  // residual stream leaving block L (capture for probes)
};

inline const char* to_string(HookKind k) {
  switch (k) {
    case HookKind::kResidPre: return "resid_pre";
    case HookKind::kMlpOut: return "mlp_out";
    case HookKind::kResidPost: return "resid_post";
  }
  return "?";
}

struct HookSite {
  std::size_t layer = 0;
  HookKind kind = HookKind::kResidPre;

  auto operator<=>(const HookSite&) const = default;

  static HookSite resid_pre(std::size_t layer) { return {layer, HookKind::kResidPre}; }
  static HookSite mlp_out(std::size_t layer) { return {layer, HookKind::kMlpOut}; }
  static HookSite resid_post(std::size_t layer) { return {layer, HookKind::kResidPost}; }
};

inline std::string to_string(const HookSite& s) {
  return std::string(to_string(s.kind)) + "." + std::to_string(s.layer);
}

/// Overwrites rows `positions` of the activation at `site` with `replacement`.
struct Intervention {
  HookSite site;
  std::vector<std::size_t> positions;  // sorted, unique
  Matrix replacement;                  // [positions.size() x hidden_dim]
};

class ActivationCache {
 public:
  explicit ActivationCache(std::size_t seq_len = 0) : seq_len_(seq_len) {}

  std::size_t seq_len() const { return seq_len_; }
  bool contains(const HookSite& s) const { return entries_.contains(s); }
  std::size_t size() const { return entries_.size(); }

  const Matrix& at(const HookSite& s) const {
    auto it = entries_.find(s);
    require(it != entries_.end(), ErrorKind::kNotFound, "activation cache has no entry for " + to_string(s));
    return it->second;
  }

  void put(const HookSite& s, Matrix m) {
    require(m.rows() == seq_len_, ErrorKind::kInvalidArgument, "cached activation has wrong row count");
    entries_.insert_or_assign(s, std::move(m));
  }

  const std::map<HookSite, Matrix>& entries() const { return entries_; }

 private:
  std::size_t seq_len_;
  std::map<HookSite, Matrix> entries_;
};

struct RunOutput {
  Matrix logits;  // [seq_len x vocab_size]
  std::optional<ActivationCache> cache;
};

// ---------------------------------------------------------------------------
// Weights

struct LayerWeights {
  std::vector<float> attn_norm;  // [hidden]
  Matrix wq;                     // [n_heads*head_dim x hidden]
  Matrix wk;                     // [n_kv_heads*head_dim x hidden]
  Matrix wv;                     // [n_kv_heads*head_dim x hidden]
  Matrix wo;                     // [hidden x n_heads*head_dim]
  std::vector<float> mlp_norm;   // [hidden]
  Matrix w_gate;                 // [mlp x hidden]
  Matrix w_up;                   // [mlp x hidden]
  Matrix w_down;                 // [hidden x mlp]
};

struct Weights {
  Matrix embed;    // [vocab x hidden]
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix lm_head;  // [vocab x hidden]
};

struct Model {
  ModelConfig config;
  Weights weights;
};

namespace names {
inline std::string layer(std::size_t l, const char* suffix) {
  return "model.layers." + std::to_string(l) + "." + suffix;
}
inline const std::string kEmbed = "model.embed_tokens.weight";
inline const std::string kFinalNorm = "model.norm.weight";
inline const std::string kLmHead = "lm_head.weight";
}  // namespace names

/// Every tensor name the config requires, with its shape.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> required_tensors(const ModelConfig& c) {
  const std::size_t h = c.hidden_dim, q = c.n_heads * c.head_dim, kv = c.kv_dim();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  out.push_back({names::kEmbed, {c.vocab_size, h}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    out.push_back({names::layer(l, "input_layernorm.weight"), {h}});
    out.push_back({names::layer(l, "self_attn.q_proj.weight"), {q, h}});
    out.push_back({names::layer(l, "self_attn.k_proj.weight"), {kv, h}});
    out.push_back({names::layer(l, "self_attn.v_proj.weight"), {kv, h}});
    out.push_back({names::layer(l, "self_attn.o_proj.weight"), {h, q}});
    out.push_back({names::layer(l, "post_attention_layernorm.weight"), {h}});
    out.push_back({names::layer(l, "mlp.gate_proj.weight"), {c.mlp_dim, h}});
    out.push_back({names::layer(l, "mlp.up_proj.weight"), {c.mlp_dim, h}});
    out.push_back({names::layer(l, "mlp.down_proj.weight"), {h, c.mlp_dim}});
  }
  out.push_back({names::kFinalNorm, {h}});
  if (!c.tie_word_embeddings) out.push_back({names::kLmHead, {c.vocab_size, h}});
  return out;
}

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

inline Matrix take_matrix(safetensors::TensorMap& t, const std::string& name) {
  auto& src = t.at(name);
  return Matrix(src.shape[0], src.shape[1], std::move(src.data));
}

inline std::vector<float> take_vector(safetensors::TensorMap& t, const std::string& name) {
  return std::move(t.at(name).data);
}

}  // namespace detail

/// Validates and adopts named tensors. Unknown extra tensors are ignored.
inline Model model_from_tensors(const ModelConfig& config, safetensors::TensorMap tensors) {
  config.validate();
  for (const auto& [name, shape] : required_tensors(config)) {
    auto it = tensors.find(name);
    require(it != tensors.end(), ErrorKind::kModelLoad, "missing tensor '" + name + "'");
    require(it->second.shape == shape, ErrorKind::kModelLoad,
            "tensor '" + name + "': expected shape " + detail::shape_str(shape) + ", found " +
                detail::shape_str(it->second.shape));
    for (float v : it->second.data) {
      if (!std::isfinite(v)) fail(ErrorKind::kModelLoad, "tensor '" + name + "' contains non-finite values");
    }
  }
  Model m;
  m.config = config;
  auto& w = m.weights;
  w.embed = detail::take_matrix(tensors, names::kEmbed);
  w.layers.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    auto& lw = w.layers[l];
    lw.attn_norm = detail::take_vector(tensors, names::layer(l, "input_layernorm.weight"));
    lw.wq = detail::take_matrix(tensors, names::layer(l, "self_attn.q_proj.weight"));
    lw.wk = detail::take_matrix(tensors, names::layer(l, "self_attn.k_proj.weight"));
    lw.wv = detail::take_matrix(tensors, names::layer(l, "self_attn.v_proj.weight"));
    lw.wo = detail::take_matrix(tensors, names::layer(l, "self_attn.o_proj.weight"));
    lw.mlp_norm = detail::take_vector(tensors, names::layer(l, "post_attention_layernorm.weight"));
    lw.w_gate = detail::take_matrix(tensors, names::layer(l, "mlp.gate_proj.weight"));
    lw.w_up = detail::take_matrix(tensors, names::layer(l, "mlp.up_proj.weight"));
    lw.w_down = detail::take_matrix(tensors, names::layer(l, "mlp.down_proj.weight"));
  }
  w.final_norm = detail::take_vector(tensors, names::kFinalNorm);
  w.lm_head = config.tie_word_embeddings ? w.embed : detail::take_matrix(tensors, names::kLmHead);
  return m;
}

inline safetensors::TensorMap to_tensors(const Model& m) {
  safetensors::TensorMap t;
  auto mat = [&](const std::string& name, const Matrix& x) {
    t[name] = {{x.rows(), x.cols()}, std::vector<float>(x.flat().begin(), x.flat().end())};
  };
  auto vec = [&](const std::string& name, const std::vector<float>& x) { t[name] = {{x.size()}, x}; };
  const auto& w = m.weights;
  mat(names::kEmbed, w.embed);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    vec(names::layer(l, "input_layernorm.weight"), lw.attn_norm);
    mat(names::layer(l, "self_attn.q_proj.weight"), lw.wq);
    mat(names::layer(l, "self_attn.k_proj.weight"), lw.wk);
    mat(names::layer(l, "self_attn.v_proj.weight"), lw.wv);
    mat(names::layer(l, "self_attn.o_proj.weight"), lw.wo);
    vec(names::layer(l, "post_attention_layernorm.weight"), lw.mlp_norm);
    mat(names::layer(l, "mlp.gate_proj.weight"), lw.w_gate);
    mat(names::layer(l, "mlp.up_proj.weight"), lw.w_up);
    mat(names::layer(l, "mlp.down_proj.weight"), lw.w_down);
  }
  vec(names::kFinalNorm, w.final_norm);
  if (!m.config.tie_word_embeddings) mat(names::kLmHead, w.lm_head);
  return t;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformedConfig, path.string() + ": invalid JSON: " + e.what());
  }
}

/// `weights_path` is one tensor file or a directory of *.safetensors shards.
inline Model load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path) {
  const ModelConfig config = config_from_json(read_json_file(config_path));
  safetensors::TensorMap tensors;
  if (std::filesystem::is_directory(weights_path)) {
    std::vector<std::filesystem::path> shards;
    for (const auto& e : std::filesystem::directory_iterator(weights_path)) {
      if (e.path().extension() == ".safetensors") shards.push_back(e.path());
    }
    std::sort(shards.begin(), shards.end());
    require(!shards.empty(), ErrorKind::kMissingFile, "no .safetensors files in " + weights_path.string());
    for (const auto& s : shards) tensors.merge(safetensors::read_file(s));
  } else {
    tensors = safetensors::read_file(weights_path);
  }
  return model_from_tensors(config, std::move(tensors));
}

inline void save_model(const Model& m, const std::filesystem::path& config_path,
                       const std::filesystem::path& weights_path) {
  {
    std::ofstream out(config_path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write " + config_path.string());
    out << nlohmann::json(m.config).dump(2) << '\n';
  }
  safetensors::write_file(weights_path, to_tensors(m));
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

/// y = x * W^T for x [n x in], W [out x in].
inline Matrix linear(const Matrix& x, const Matrix& w) {
  Matrix y(x.rows(), w.rows());
  const std::size_t in = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const float* xr = x.data() + r * in;
    float* yr = y.data() + r * w.rows();
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const float* wr = w.data() + o * in;
      float acc = 0.0f;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  return y;
}

inline Matrix rmsnorm(const Matrix& x, std::span<const float> weight, double eps) {
  Matrix y(x.rows(), x.cols());
  const float feps = static_cast<float>(eps);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    float ss = 0.0f;
    for (float v : xr) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(xr.size()) + feps);
    auto yr = y.row(r);
    for (std::size_t i = 0; i < xr.size(); ++i) yr[i] = xr[i] * inv * weight[i];
  }
  return y;
}

/// Precomputed rotary angles: cos/sin tables [positions x head_dim/2].
class RopeTable {
 public:
  RopeTable(std::size_t positions, std::size_t head_dim, double base)
      : half_(head_dim / 2), cos_(positions * half_), sin_(positions * half_) {
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t i = 0; i < half_; ++i) {
        const double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(p) * inv_freq;
        cos_[p * half_ + i] = static_cast<float>(std::cos(angle));
        sin_[p * half_ + i] = static_cast<float>(std::sin(angle));
      }
    }
  }

  /// Rotates each head of row `pos` in place using the split-halves pairing
  /// (i, i + head_dim/2), which is the layout of Hugging Face Llama weights.
  void apply(std::span<float> row, std::size_t n_heads, std::size_t pos) const {
    const std::size_t hd = 2 * half_;
    const float* c = cos_.data() + pos * half_;
    const float* s = sin_.data() + pos * half_;
    for (std::size_t h = 0; h < n_heads; ++h) {
      float* v = row.data() + h * hd;
      for (std::size_t i = 0; i < half_; ++i) {
        const float a = v[i], b = v[i + half_];
        v[i] = a * c[i] - b * s[i];
        v[i + half_] = b * c[i] + a * s[i];
      }
    }
  }

 private:
  std::size_t half_;
  std::vector<float> cos_;
  std::vector<float> sin_;
};

inline void rope_apply(Matrix& x, std::size_t n_heads, const RopeTable& table) {
  for (std::size_t p = 0; p < x.rows(); ++p) table.apply(x.row(p), n_heads, p);
}

/// Causal multi-head attention on an already-normalized input; returns the
/// output projection, [seq x hidden].
inline Matrix attention_block(const Matrix& x, const LayerWeights& lw, const ModelConfig& cfg,
                              const RopeTable& rope) {
  require_finite(x.flat(), "attention input");
  const std::size_t seq = x.rows(), hd = cfg.head_dim;
  Matrix q = linear(x, lw.wq);
  Matrix k = linear(x, lw.wk);
  const Matrix v = linear(x, lw.wv);
  rope_apply(q, cfg.n_heads, rope);
  rope_apply(k, cfg.n_kv_heads, rope);

  const std::size_t group = cfg.n_heads / cfg.n_kv_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  Matrix mixed(seq, cfg.n_heads * hd);
  std::vector<float> scores(seq);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t p = 0; p < seq; ++p) {
      const float* qp = q.data() + p * q.cols() + h * hd;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t t = 0; t <= p; ++t) {
        const float* kt = k.data() + t * k.cols() + kvh * hd;
        float dot = 0.0f;
        for (std::size_t i = 0; i < hd; ++i) dot += qp[i] * kt[i];
        scores[t] = dot * scale;
        mx = std::max(mx, scores[t]);
      }
      float denom = 0.0f;
      for (std::size_t t = 0; t <= p; ++t) {
        scores[t] = std::exp(scores[t] - mx);
        denom += scores[t];
      }
      float* out = mixed.data() + p * mixed.cols() + h * hd;
      for (std::size_t t = 0; t <= p; ++t) {
        const float a = scores[t] / denom;
        const float* vt = v.data() + t * v.cols() + kvh * hd;
        for (std::size_t i = 0; i < hd; ++i) out[i] += a * vt[i];
      }
    }
  }
  return linear(mixed, lw.wo);
}

inline float silu(float z) { return z / (1.0f + std::exp(-z)); }

/// down(silu(gate(x)) * up(x)) on an already-normalized input.
inline Matrix gated_mlp(const Matrix& x, const LayerWeights& lw) {
  Matrix g = linear(x, lw.w_gate);
  const Matrix u = linear(x, lw.w_up);
  for (std::size_t i = 0; i < g.size(); ++i) g.flat()[i] = silu(g.flat()[i]) * u.flat()[i];
  return linear(g, lw.w_down);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline void check_interventions(const ModelConfig& cfg, std::size_t seq,
                                std::span<const Intervention> interventions) {
  std::set<std::pair<HookSite, std::size_t>> touched;
  bool overlap = false;
  for (const auto& iv : interventions) {
    require(iv.site.layer < cfg.n_layers, ErrorKind::kInvalidArgument,
            "intervention site " + to_string(iv.site) + ": layer out of range");
    require(iv.replacement.rows() == iv.positions.size() && iv.replacement.cols() == cfg.hidden_dim,
            ErrorKind::kInvalidArgument,
            "intervention at " + to_string(iv.site) + ": replacement must be [positions x hidden_dim]");
    for (std::size_t i = 0; i < iv.positions.size(); ++i) {
      require(iv.positions[i] < seq, ErrorKind::kInvalidArgument,
              "intervention at " + to_string(iv.site) + ": position " + std::to_string(iv.positions[i]) +
                  " out of range for sequence length " + std::to_string(seq));
      require(i == 0 || iv.positions[i] > iv.positions[i - 1], ErrorKind::kInvalidArgument,
              "intervention positions must be sorted and unique");
      if (!touched.insert({iv.site, iv.positions[i]}).second) overlap = true;
    }
    require_finite(iv.replacement.flat(), "intervention replacement");
  }
  if (overlap) warn("overlapping interventions at the same site/position; the last one wins");
}

inline void apply_site(Matrix& act, const HookSite& site, std::span<const Intervention> interventions) {
  for (const auto& iv : interventions) {
    if (iv.site != site) continue;
    for (std::size_t i = 0; i < iv.positions.size(); ++i) {
      std::copy(iv.replacement.row(i).begin(), iv.replacement.row(i).end(), act.row(iv.positions[i]).begin());
    }
  }
}

}  // namespace detail

/// Full-sequence forward pass. Captured sites hold activations after any
/// intervention at that site has been applied.
inline RunOutput forward(const Model& model, std::span<const TokenId> tokens,
                         const std::set<HookSite>& capture = {},
                         std::span<const Intervention> interventions = {}) {
  const auto& cfg = model.config;
  const auto& w = model.weights;
  const std::size_t seq = tokens.size();
  require(seq > 0, ErrorKind::kInvalidArgument, "forward: empty token sequence");
  require(seq <= cfg.max_seq_len, ErrorKind::kInvalidArgument,
          "forward: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
              std::to_string(cfg.max_seq_len));
  for (TokenId t : tokens) {
    require(t < cfg.vocab_size, ErrorKind::kInvalidArgument,
            "forward: token id " + std::to_string(t) + " out of range");
  }
  for (const auto& s : capture) {
    require(s.layer < cfg.n_layers, ErrorKind::kInvalidArgument,
            "capture site " + to_string(s) + ": layer out of range");
  }
  detail::check_interventions(cfg, seq, interventions);

  RunOutput out;
  if (!capture.empty()) out.cache.emplace(seq);
  auto hook = [&](const HookSite& site, Matrix& act) {
    detail::apply_site(act, site, interventions);
    if (capture.contains(site)) out.cache->put(site, act);
  };

  const kernels::RopeTable rope(seq, cfg.head_dim, cfg.rope_base);
  Matrix x(seq, cfg.hidden_dim);
  for (std::size_t p = 0; p < seq; ++p) {
    auto src = w.embed.row(tokens[p]);
    std::copy(src.begin(), src.end(), x.row(p).begin());
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = w.layers[l];
    hook(HookSite::resid_pre(l), x);
    const Matrix attn = kernels::attention_block(kernels::rmsnorm(x, lw.attn_norm, cfg.norm_eps), lw, cfg, rope);
    for (std::size_t i = 0; i < x.size(); ++i) x.flat()[i] += attn.flat()[i];
    Matrix mlp = kernels::gated_mlp(kernels::rmsnorm(x, lw.mlp_norm, cfg.norm_eps), lw);
    hook(HookSite::mlp_out(l), mlp);
    for (std::size_t i = 0; i < x.size(); ++i) x.flat()[i] += mlp.flat()[i];
    hook(HookSite::resid_post(l), x);
  }

  out.logits = kernels::linear(kernels::rmsnorm(x, w.final_norm, cfg.norm_eps), w.lm_head);
  require_finite(out.logits.flat(), "forward: logits");
  return out;
}

inline RunOutput forward(const Model& model, std::initializer_list<TokenId> tokens) {
  std::vector<TokenId> v(tokens);
  return forward(model, std::span<const TokenId>(v));
}

/// logits[last][correct] - logits[last][incorrect].
inline double logit_diff(const RunOutput& out, TokenId correct, TokenId incorrect) {
  const auto& lg = out.logits;
  require(lg.rows() > 0, ErrorKind::kInvalidArgument, "logit_diff: empty logits");
  require(correct < lg.cols() && incorrect < lg.cols(), ErrorKind::kInvalidArgument,
          "logit_diff: token id out of range");
  const auto last = lg.row(lg.rows() - 1);
  return static_cast<double>(last[correct]) - static_cast<double>(last[incorrect]);
}

/// Every resid_pre and mlp_out site of the model.
inline std::set<HookSite> all_patch_sites(const ModelConfig& cfg) {
  std::set<HookSite> s;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    s.insert(HookSite::resid_pre(l));
    s.insert(HookSite::mlp_out(l));
  }
  return s;
}

}  // namespace drugloc
