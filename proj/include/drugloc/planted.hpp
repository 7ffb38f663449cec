// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Hand-constructed ground-truth fixtures.
//
// The planted-concept model is a 2-layer Llama-style network whose answer is
// computed from the group token. Layer 0 copies the group identity to every
// later position (head 0) and records whether a position follows the "B)"
// marker (head 1); its MLP multiplies the copied group with each drug
// token's memberships, giving a match score. Layer 1 reads the match score
// of the A-slot drug (head 0) and subtracts that of the B-slot drug (head 1)
// into the logit of " A" versus " B".
//
// The split-signal world carries a class signal on one span token and
// class-independent noise on the other, at the embedding level.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "drugloc/dataset.hpp"
#include "drugloc/model.hpp"
#include "drugloc/rng.hpp"
#include "drugloc/tokenizer.hpp"

namespace drugloc::planted {

/// group -> members of the toy dictionary.
inline std::map<std::string, std::vector<std::string>> toy_memberships() {
  return {
      {"vasoconstrictor agents", {"ergotamine", "phenylephrine", "midodrine"}},
      {"bronchoconstrictor agents", {"araldite", "methacholine", "carbachol"}},
      {"vasodilator agents", {"hydralazine", "minoxidil", "nitroglycerin"}},
      {"bronchodilator agents", {"albuterol", "theophylline", "ipratropium"}},
      {"anticoagulant agents", {"heparin", "warfarin", "dabigatran"}},
      {"antiemetic agents", {"ondansetron", "metoclopramide", "aprepitant"}},
      {"adhesives", {"araldite", "cyanoacrylate"}},
      {"central nervous system stimulants", {"caffeine", "modafinil", "amphetamine"}},
      {"central nervous system depressants", {"diazepam", "phenobarbital", "zolpidem"}},
      {"adrenergic alpha agonists", {"phenylephrine", "clonidine", "xylazine"}},
      {"adrenergic alpha antagonists", {"prazosin", "phentolamine", "tamsulosin"}},
  };
}

inline DrugDictionary toy_dictionary() {
  DrugDictionary d;
  for (const auto& [group, drugs] : toy_memberships()) {
    for (const auto& drug : drugs) d.add(drug, group);
  }
  return d;
}

inline constexpr const char* kBosToken = "<|begin_of_text|>";

/// Byte-level vocabulary (all 256 bytes) plus whole-word merges for every
/// word the toy prompts use, the answer tokens " A"/" B", and a BOS token.
inline Tokenizer toy_tokenizer() {
  std::vector<std::string> vocab;
  std::set<std::string> known;
  for (int b = 0; b < 256; ++b) {
    vocab.emplace_back(1, static_cast<char>(b));
    known.insert(vocab.back());
  }
  std::vector<std::pair<std::string, std::string>> merges;
  auto add_word = [&](const std::string& w) {
    for (std::size_t k = 2; k <= w.size(); ++k) {
      const std::string piece = w.substr(0, k);
      if (known.insert(piece).second) {
        vocab.push_back(piece);
        merges.emplace_back(w.substr(0, k - 1), w.substr(k - 1, 1));
      }
    }
  };
  std::set<std::string> words = {"Question", "Answer", " A", " B"};
  auto add_text_words = [&](const std::string& text) {
    for (const auto& r : pretokenize::split(text)) {
      const std::string w = text.substr(r.begin, r.end - r.begin);
      const auto first = static_cast<unsigned char>(w[w.size() > 1 ? 1 : 0]);
      if (w.size() > 1 && pretokenize::classify(first) == pretokenize::CharClass::kLetter) words.insert(w);
    }
  };
  for (const auto& t : default_templates()) add_text_words(t);
  for (const auto& [group, drugs] : toy_memberships()) {
    add_text_words(" " + group);
    for (const auto& d : drugs) add_text_words(" " + d);
  }
  for (const auto& w : words) add_word(w);
  vocab.push_back(kBosToken);
  return Tokenizer::from_parts(std::move(vocab), merges, {kBosToken}, std::string(kBosToken));
}

// Residual-stream layout of the planted model.
namespace dims {
inline constexpr std::size_t kHidden = 64;
inline constexpr std::size_t kMaxGroups = 12;
inline constexpr std::size_t kBias = 0;
inline constexpr std::size_t kIsGroup = 1;
inline constexpr std::size_t kGroupId = 2;  // .. +kMaxGroups
inline constexpr std::size_t kIsDrug = 14;
inline constexpr std::size_t kMember = 15;  // .. +kMaxGroups
inline constexpr std::size_t kIsMarker = 27;
inline constexpr std::size_t kMarkerA = 28;
inline constexpr std::size_t kMarkerB = 29;
inline constexpr std::size_t kCopiedGroup = 30;  // .. +kMaxGroups
inline constexpr std::size_t kSlotB = 42;
inline constexpr std::size_t kMatch = 43;
inline constexpr std::size_t kScore = 44;
}  // namespace dims

struct PlantedWorld {
  Model model;
  Tokenizer tokenizer;
  DrugDictionary dictionary;
  std::map<std::string, TokenId> group_token;  // the one token carrying each group's identity
};

/// Token of `group` (as it appears after a space) that no other group uses.
inline std::map<std::string, TokenId> distinctive_group_tokens(const Tokenizer& tok, const DrugDictionary& dict) {
  std::map<std::string, std::vector<TokenId>> ids;
  std::map<TokenId, std::size_t> uses;
  for (const auto& g : dict.group_names()) {
    ids[g] = tok.encode(" " + g).ids;
    for (TokenId t : std::set<TokenId>(ids[g].begin(), ids[g].end())) ++uses[t];
  }
  std::map<std::string, TokenId> out;
  for (const auto& [g, toks] : ids) {
    std::optional<TokenId> pick;
    for (TokenId t : toks) {
      if (uses[t] == 1) pick = t;  // last distinctive token
    }
    require(pick.has_value(), ErrorKind::kDataset, "planted model: group '" + g + "' has no distinctive token");
    out[g] = *pick;
  }
  return out;
}

inline PlantedWorld planted_world() {
  PlantedWorld w{{}, toy_tokenizer(), toy_dictionary(), {}};
  const auto& tok = w.tokenizer;
  const auto& dict = w.dictionary;
  const auto groups = dict.group_names();
  require(groups.size() <= dims::kMaxGroups, ErrorKind::kDataset, "planted model: too many groups");
  std::map<std::string, std::size_t> group_index;
  for (std::size_t i = 0; i < groups.size(); ++i) group_index[groups[i]] = i;
  w.group_token = distinctive_group_tokens(tok, dict);

  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = dims::kHidden;
  cfg.n_heads = 4;
  cfg.n_kv_heads = 4;
  cfg.head_dim = 16;
  cfg.mlp_dim = 16;
  cfg.vocab_size = tok.vocab_size();
  cfg.rope_base = 10000.0;
  cfg.norm_eps = 1e-5;
  cfg.max_seq_len = 128;
  cfg.validate();

  Model& m = w.model;
  m.config = cfg;
  const std::size_t H = cfg.hidden_dim, hd = cfg.head_dim;
  auto& wt = m.weights;

  wt.embed = Matrix(cfg.vocab_size, H);
  for (TokenId t = 0; t < cfg.vocab_size; ++t) wt.embed(t, dims::kBias) = 1.0f;
  for (const auto& [g, t] : w.group_token) {
    wt.embed(t, dims::kIsGroup) = 1.0f;
    wt.embed(t, dims::kGroupId + group_index[g]) = 1.0f;
  }
  for (const auto& drug : dict.drugs()) {
    const TokenId t = tok.single_token(" " + drug);
    wt.embed(t, dims::kIsDrug) = 1.0f;
    for (const auto& g : dict.groups_of(drug)) wt.embed(t, dims::kMember + group_index[g]) = 1.0f;
  }
  const TokenId marker_a = tok.single_token("A"), marker_b = tok.single_token("B");
  wt.embed(marker_a, dims::kIsMarker) = 1.0f;
  wt.embed(marker_a, dims::kMarkerA) = 1.0f;
  wt.embed(marker_b, dims::kIsMarker) = 1.0f;
  wt.embed(marker_b, dims::kMarkerB) = 1.0f;

  auto blank_layer = [&] {
    LayerWeights lw;
    lw.attn_norm.assign(H, 1.0f);
    lw.mlp_norm.assign(H, 1.0f);
    lw.wq = Matrix(H, H);
    lw.wk = Matrix(H, H);
    lw.wv = Matrix(H, H);
    lw.wo = Matrix(H, H);
    lw.w_gate = Matrix(cfg.mlp_dim, H);
    lw.w_up = Matrix(cfg.mlp_dim, H);
    lw.w_down = Matrix(H, cfg.mlp_dim);
    return lw;
  };
  // Query/key live on the slowest rotary pair so attention is content-based.
  const std::size_t qk = hd / 2 - 1;
  constexpr float kQ = 3.0f, kK = 3.0f;
  // A token with three unit entries normalizes to 1/sqrt(3/H) per entry.
  const float unit3 = std::sqrt(3.0f / static_cast<float>(H));

  LayerWeights l0 = blank_layer();
  // Head 0: every position attends to group tokens and copies the group id.
  l0.wq(0 * hd + qk, dims::kBias) = kQ;
  l0.wk(0 * hd + qk, dims::kIsGroup) = kK;
  for (std::size_t j = 0; j < dims::kMaxGroups; ++j) {
    l0.wv(0 * hd + j, dims::kGroupId + j) = 1.0f;
    l0.wo(dims::kCopiedGroup + j, 0 * hd + j) = unit3;
  }
  // Head 1: attend to answer-letter markers; the B share becomes the slot flag.
  l0.wq(1 * hd + qk, dims::kBias) = kQ;
  l0.wk(1 * hd + qk, dims::kIsMarker) = kK;
  l0.wv(1 * hd + 0, dims::kMarkerB) = 1.0f;
  l0.wo(dims::kSlotB, 1 * hd + 0) = unit3;
  // MLP: match = sum_j silu(copied_j) * member_j.
  for (std::size_t j = 0; j < dims::kMaxGroups; ++j) {
    l0.w_gate(j, dims::kCopiedGroup + j) = 1.0f;
    l0.w_up(j, dims::kMember + j) = 1.0f;
    l0.w_down(dims::kMatch, j) = 1.0f / 16.0f;
  }

  LayerWeights l1 = blank_layer();
  // Head 0 reads the drug before the B marker, head 1 the drug after it.
  l1.wq(0 * hd + qk, dims::kBias) = kQ;
  l1.wk(0 * hd + qk, dims::kIsDrug) = kK;
  l1.wk(0 * hd + qk, dims::kSlotB) = -4.0f * kK;
  l1.wv(0 * hd + 0, dims::kMatch) = 1.0f;
  l1.wo(dims::kScore, 0 * hd + 0) = 0.25f;
  l1.wq(1 * hd + qk, dims::kBias) = kQ;
  l1.wk(1 * hd + qk, dims::kIsDrug) = kK;
  l1.wk(1 * hd + qk, dims::kSlotB) = 4.0f * kK;
  l1.wk(1 * hd + qk, dims::kBias) = -2.0f * kK;
  l1.wv(1 * hd + 0, dims::kMatch) = 1.0f;
  l1.wo(dims::kScore, 1 * hd + 0) = -0.25f;

  wt.layers = {std::move(l0), std::move(l1)};
  wt.final_norm.assign(H, 1.0f);
  wt.lm_head = Matrix(cfg.vocab_size, H);
  wt.lm_head(tok.single_token(" A"), dims::kScore) = 2.0f;
  wt.lm_head(tok.single_token(" B"), dims::kScore) = -2.0f;
  return w;
}

// ---------------------------------------------------------------------------

struct SplitSignalWorld {
  Model model;
  ProbePromptSet positive;
  ProbePromptSet negative;
  std::size_t signal_offset = 0;
  std::size_t noise_offset = 1;
};

/// Prompts are [filler, filler, class token, noise token, filler] with the
/// group span on positions [2, 4). The class tokens embed to base +/- v; the
/// noise token is drawn per prompt from a shared pool of random embeddings.
inline SplitSignalWorld split_signal_world(std::uint64_t seed, std::size_t n_per_class = 300,
                                           std::size_t noise_pool = 24, std::size_t hidden = 16) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden_dim = hidden;
  cfg.n_heads = 2;
  cfg.n_kv_heads = 1;
  cfg.head_dim = hidden / 2;
  cfg.mlp_dim = hidden;
  const std::size_t kFiller = 0, kClass1 = 1, kClass0 = 2, kNoise0 = 3;
  cfg.vocab_size = kNoise0 + noise_pool;
  cfg.max_seq_len = 16;
  cfg.validate();

  SplitSignalWorld w;
  Model& m = w.model;
  m.config = cfg;
  auto randn = [&](std::size_t r, std::size_t c, float scale) {
    Matrix x(r, c);
    for (auto& v : x.flat()) v = static_cast<float>(rng.normal()) * scale;
    return x;
  };
  m.weights.embed = Matrix(cfg.vocab_size, hidden);
  std::vector<float> base(hidden), v(hidden);
  for (auto& b : base) b = static_cast<float>(rng.normal()) * 0.5f;
  v[0] = 1.0f;  // class direction
  for (std::size_t i = 0; i < hidden; ++i) {
    m.weights.embed(kFiller, i) = static_cast<float>(rng.normal()) * 0.5f;
    m.weights.embed(kClass1, i) = base[i] + v[i];
    m.weights.embed(kClass0, i) = base[i] - v[i];
  }
  for (std::size_t k = 0; k < noise_pool; ++k) {
    for (std::size_t i = 0; i < hidden; ++i) m.weights.embed(kNoise0 + k, i) = static_cast<float>(rng.normal()) * 0.1f;
  }
  LayerWeights lw;
  lw.attn_norm.assign(hidden, 1.0f);
  lw.mlp_norm.assign(hidden, 1.0f);
  lw.wq = randn(hidden, hidden, 0.2f);
  lw.wk = randn(cfg.kv_dim(), hidden, 0.2f);
  lw.wv = randn(cfg.kv_dim(), hidden, 0.2f);
  lw.wo = randn(hidden, hidden, 0.2f);
  lw.w_gate = randn(cfg.mlp_dim, hidden, 0.2f);
  lw.w_up = randn(cfg.mlp_dim, hidden, 0.2f);
  lw.w_down = randn(hidden, cfg.mlp_dim, 0.2f);
  m.weights.layers.push_back(std::move(lw));
  m.weights.final_norm.assign(hidden, 1.0f);
  m.weights.lm_head = randn(cfg.vocab_size, hidden, 0.2f);

  auto make = [&](int label, std::size_t id_base) {
    ProbePromptSet set{label ? "class-1" : "class-0", label, {}};
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto noise = static_cast<TokenId>(kNoise0 + rng.below(noise_pool));
      const auto cls = static_cast<TokenId>(label ? kClass1 : kClass0);
      ProbePrompt p;
      p.prompt_id = id_base + i;
      p.label = label;
      p.group = set.group;
      p.tokens = {kFiller, kFiller, cls, noise, kFiller};
      p.group_span = {2, 4};
      set.prompts.push_back(std::move(p));
    }
    return set;
  };
  w.positive = make(1, 0);
  w.negative = make(0, n_per_class);
  return w;
}

// ---------------------------------------------------------------------------

/// A model whose final logits favour `answer` by `margin` on every input.
inline Model always_answer_model(std::size_t vocab_size, TokenId answer, float margin = 1.0f) {
  require(answer < vocab_size, ErrorKind::kInvalidArgument, "always_answer_model: answer token out of range");
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden_dim = 8;
  cfg.n_heads = 2;
  cfg.n_kv_heads = 2;
  cfg.head_dim = 4;
  cfg.mlp_dim = 8;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = 512;
  cfg.validate();
  Model m;
  m.config = cfg;
  m.weights.embed = Matrix(vocab_size, cfg.hidden_dim);
  for (std::size_t t = 0; t < vocab_size; ++t) m.weights.embed(t, 0) = 1.0f;
  LayerWeights lw;
  lw.attn_norm.assign(cfg.hidden_dim, 1.0f);
  lw.mlp_norm.assign(cfg.hidden_dim, 1.0f);
  lw.wq = Matrix(cfg.hidden_dim, cfg.hidden_dim);
  lw.wk = Matrix(cfg.kv_dim(), cfg.hidden_dim);
  lw.wv = Matrix(cfg.kv_dim(), cfg.hidden_dim);
  lw.wo = Matrix(cfg.hidden_dim, cfg.hidden_dim);
  lw.w_gate = Matrix(cfg.mlp_dim, cfg.hidden_dim);
  lw.w_up = Matrix(cfg.mlp_dim, cfg.hidden_dim);
  lw.w_down = Matrix(cfg.hidden_dim, cfg.mlp_dim);
  m.weights.layers.push_back(std::move(lw));
  m.weights.final_norm.assign(cfg.hidden_dim, 1.0f);
  m.weights.lm_head = Matrix(vocab_size, cfg.hidden_dim);
  m.weights.lm_head(answer, 0) = margin;
  return m;
}

// ---------------------------------------------------------------------------

/// Writes tokenizer, model, dictionary, templates and an experiment config
/// for the planted world into `dir`.
inline void write_planted_world(const PlantedWorld& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "tokenizer.json", std::ios::trunc);
    out << w.tokenizer.to_json().dump(1) << '\n';
  }
  save_model(w.model, dir / "model_config.json", dir / "model.safetensors");
  {
    std::ofstream out(dir / "dictionary.csv", std::ios::trunc);
    out << "drug,group\n";
    for (const auto& [drug, groups] : w.dictionary.entries()) {
      for (const auto& g : groups) out << drug << ',' << g << '\n';
    }
  }
  {
    std::ofstream out(dir / "templates.json", std::ios::trunc);
    out << nlohmann::json(default_templates()).dump(1) << '\n';
  }
}

}  // namespace drugloc::planted
