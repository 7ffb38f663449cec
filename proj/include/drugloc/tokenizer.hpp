// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Byte-level BPE tokenizer with per-token byte offsets.
//
// Vocabulary strings use the GPT-2 byte-to-unicode alphabet (space is "Ġ",
// newline is "Ċ", ...). Internally every token is kept as its raw byte
// string, so offsets are byte offsets into the encoded text.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drugloc/error.hpp"
#include "drugloc/model.hpp"

namespace drugloc {

/// Token index range [start, end).
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
  bool operator==(const TokenSpan&) const = default;
};

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const ByteRange&) const = default;
};

struct Encoding {
  std::vector<TokenId> ids;
  std::vector<ByteRange> offsets;
};

namespace bytelevel {

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

/// Decodes one code point at `i`, advancing it. Returns nullopt on invalid UTF-8.
inline std::optional<std::uint32_t> next_codepoint(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len;
  std::uint32_t cp;
  if (b0 < 0x80) {
    len = 1;
    cp = b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return std::nullopt;
  }
  if (i + len > s.size()) return std::nullopt;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return std::nullopt;
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return cp;
}

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (!next_codepoint(s, i)) return false;
  }
  return true;
}

/// GPT-2 byte -> code point table.
inline const std::array<std::uint32_t, 256>& byte_to_codepoint() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    std::uint32_t next = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<std::uint32_t>(b) : next++;
    return t;
  }();
  return table;
}

inline std::string encode_bytes(std::string_view raw) {
  std::string out;
  for (unsigned char b : raw) append_utf8(out, byte_to_codepoint()[b]);
  return out;
}

/// Inverse mapping; nullopt when a code point is outside the byte alphabet.
inline std::optional<std::string> decode_symbols(std::string_view symbols) {
  static const std::unordered_map<std::uint32_t, unsigned char> inverse = [] {
    std::unordered_map<std::uint32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_to_codepoint()[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < symbols.size()) {
    auto cp = next_codepoint(symbols, i);
    if (!cp) return std::nullopt;
    auto it = inverse.find(*cp);
    if (it == inverse.end()) return std::nullopt;
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

}  // namespace bytelevel

namespace pretokenize {

enum class CharClass { kLetter, kDigit, kSpace, kOther };

inline CharClass classify(unsigned char c) {
  if (c >= 0x80) return CharClass::kLetter;  // non-ASCII treated as letters
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return CharClass::kLetter;
  if (c >= '0' && c <= '9') return CharClass::kDigit;
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return CharClass::kSpace;
  return CharClass::kOther;
}

/// Splits text into byte ranges following the GPT-2 pre-tokenization rules:
/// contractions, optional leading space + letter/digit/symbol runs, and
/// whitespace runs that leave their last character to the next word.
inline std::vector<ByteRange> split(std::string_view s) {
  std::vector<ByteRange> out;
  const std::size_t n = s.size();
  auto run_end = [&](std::size_t j, CharClass cls) {
    while (j < n && classify(static_cast<unsigned char>(s[j])) == cls) ++j;
    return j;
  };
  std::size_t i = 0;
  while (i < n) {
    if (s[i] == '\'') {
      static constexpr std::string_view kSuffixes[] = {"re", "ve", "ll", "s", "t", "m", "d"};
      bool matched = false;
      for (auto suf : kSuffixes) {
        if (s.substr(i + 1, suf.size()) == suf) {
          out.push_back({i, i + 1 + suf.size()});
          i += 1 + suf.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    const CharClass c0 = classify(static_cast<unsigned char>(s[i]));
    if (s[i] == ' ' && i + 1 < n && classify(static_cast<unsigned char>(s[i + 1])) != CharClass::kSpace) {
      const std::size_t end = run_end(i + 1, classify(static_cast<unsigned char>(s[i + 1])));
      out.push_back({i, end});
      i = end;
    } else if (c0 != CharClass::kSpace) {
      const std::size_t end = run_end(i, c0);
      out.push_back({i, end});
      i = end;
    } else {
      const std::size_t end = run_end(i, CharClass::kSpace);
      if (end == n || end - i == 1) {
        out.push_back({i, end});
        i = end;
      } else {
        out.push_back({i, end - 1});
        i = end - 1;
      }
    }
  }
  return out;
}

}  // namespace pretokenize

class Tokenizer {
 public:
  Tokenizer() = default;

  /// `raw_vocab[id]` is the token's raw byte string; merges are raw byte
  /// pairs in priority order. Special tokens match no text and decode to "".
  static Tokenizer from_parts(std::vector<std::string> raw_vocab,
                              const std::vector<std::pair<std::string, std::string>>& merges,
                              const std::vector<std::string>& special_tokens = {},
                              std::optional<std::string> bos_token = std::nullopt) {
    Tokenizer t;
    t.vocab_ = std::move(raw_vocab);
    t.special_.assign(t.vocab_.size(), false);
    for (TokenId id = 0; id < t.vocab_.size(); ++id) {
      if (std::find(special_tokens.begin(), special_tokens.end(), t.vocab_[id]) != special_tokens.end()) {
        t.special_[id] = true;
        t.special_ids_.emplace(t.vocab_[id], id);
        continue;
      }
      require(!t.vocab_[id].empty(), ErrorKind::kSchemaMismatch, "tokenizer: empty vocab entry");
      require(t.ids_.emplace(t.vocab_[id], id).second, ErrorKind::kSchemaMismatch,
              "tokenizer: duplicate vocab entry '" + bytelevel::encode_bytes(t.vocab_[id]) + "'");
    }
    std::size_t rank = 0;
    for (const auto& [a, b] : merges) {
      for (const std::string* part : {&a, &b}) {
        require(t.ids_.contains(*part), ErrorKind::kSchemaMismatch,
                "tokenizer: merge references unknown token '" + bytelevel::encode_bytes(*part) + "'");
      }
      require(t.ids_.contains(a + b), ErrorKind::kSchemaMismatch,
              "tokenizer: merge result '" + bytelevel::encode_bytes(a + b) + "' missing from vocab");
      t.merge_rank_.emplace(merge_key(a, b), rank++);
    }
    t.merges_ = merges;
    if (bos_token) {
      auto it = t.special_ids_.find(*bos_token);
      require(it != t.special_ids_.end(), ErrorKind::kSchemaMismatch,
              "tokenizer: bos_token '" + *bos_token + "' is not a special token");
      t.bos_ = it->second;
    }
    return t;
  }

  /// Reads {"vocab", "merges", "bos_token"?, "special_tokens"?} or the
  /// Hugging Face tokenizer.json layout ({"model": {...}, "added_tokens": [...]}).
  static Tokenizer from_json(const nlohmann::json& j) {
    try {
      const nlohmann::json& body = j.contains("model") ? j.at("model") : j;
      const auto& jv = body.at("vocab");
      std::vector<std::string> symbols;
      if (jv.is_array()) {
        symbols = jv.get<std::vector<std::string>>();
      } else {
        symbols.resize(jv.size());
        std::vector<bool> seen(jv.size(), false);
        for (const auto& [tok, id] : jv.items()) {
          const auto i = id.get<std::size_t>();
          require(i < symbols.size() && !seen[i], ErrorKind::kSchemaMismatch,
                  "tokenizer: vocab ids must be dense and unique");
          seen[i] = true;
          symbols[i] = tok;
        }
      }
      std::vector<std::string> specials = j.value("special_tokens", std::vector<std::string>{});
      if (j.contains("added_tokens")) {
        for (const auto& at : j["added_tokens"]) {
          const auto id = at.at("id").get<std::size_t>();
          const auto content = at.at("content").get<std::string>();
          if (id >= symbols.size()) symbols.resize(id + 1);
          symbols[id] = content;
          specials.push_back(content);
        }
      }
      std::vector<std::string> raw(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (std::find(specials.begin(), specials.end(), symbols[i]) != specials.end()) {
          raw[i] = symbols[i];
          continue;
        }
        auto decoded = bytelevel::decode_symbols(symbols[i]);
        if (!decoded) {
          // Not expressible in the byte alphabet: keep it as a special token.
          specials.push_back(symbols[i]);
          raw[i] = symbols[i];
        } else {
          raw[i] = *decoded;
        }
      }
      std::vector<std::pair<std::string, std::string>> merges;
      for (const auto& m : body.at("merges")) {
        std::string a, b;
        if (m.is_array()) {
          a = m.at(0).get<std::string>();
          b = m.at(1).get<std::string>();
        } else {
          const auto s = m.get<std::string>();
          const auto sp = s.find(' ');
          require(sp != std::string::npos, ErrorKind::kSchemaMismatch, "tokenizer: malformed merge '" + s + "'");
          a = s.substr(0, sp);
          b = s.substr(sp + 1);
        }
        auto ra = bytelevel::decode_symbols(a), rb = bytelevel::decode_symbols(b);
        require(ra && rb, ErrorKind::kSchemaMismatch, "tokenizer: merge outside byte alphabet");
        merges.emplace_back(*ra, *rb);
      }
      std::optional<std::string> bos;
      if (j.contains("bos_token") && j["bos_token"].is_string()) bos = j["bos_token"].get<std::string>();
      return from_parts(std::move(raw), merges, specials, bos);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, std::string("tokenizer: ") + e.what());
    }
  }

  static Tokenizer load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

  nlohmann::json to_json() const {
    nlohmann::json vocab = nlohmann::json::array();
    std::vector<std::string> specials;
    for (TokenId id = 0; id < vocab_.size(); ++id) {
      if (special_[id]) {
        vocab.push_back(vocab_[id]);
        specials.push_back(vocab_[id]);
      } else {
        vocab.push_back(bytelevel::encode_bytes(vocab_[id]));
      }
    }
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [a, b] : merges_) merges.push_back(bytelevel::encode_bytes(a) + " " + bytelevel::encode_bytes(b));
    nlohmann::json j = {{"vocab", vocab}, {"merges", merges}, {"special_tokens", specials}};
    if (bos_) j["bos_token"] = vocab_[*bos_];
    return j;
  }

  std::size_t vocab_size() const { return vocab_.size(); }
  std::optional<TokenId> bos_id() const { return bos_; }
  bool is_special(TokenId id) const { return id < special_.size() && special_[id]; }

  /// Raw bytes of a token (the literal text for special tokens).
  const std::string& token_bytes(TokenId id) const {
    require(id < vocab_.size(), ErrorKind::kInvalidArgument, "token id out of range");
    return vocab_[id];
  }

  std::optional<TokenId> find(std::string_view raw) const {
    auto it = ids_.find(std::string(raw));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  Encoding encode(std::string_view text) const {
    require(bytelevel::valid_utf8(text), ErrorKind::kInvalidArgument, "encode: text is not valid UTF-8");
    Encoding enc;
    for (const ByteRange& chunk : pretokenize::split(text)) encode_chunk(text, chunk, enc);
    return enc;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      require(id < vocab_.size(), ErrorKind::kInvalidArgument, "decode: token id out of range");
      if (!special_[id]) out += vocab_[id];
    }
    return out;
  }

  /// Id of `text` when it encodes to exactly one token.
  TokenId single_token(std::string_view text) const {
    const auto enc = encode(text);
    require(enc.ids.size() == 1, ErrorKind::kInvalidArgument,
            "'" + std::string(text) + "' does not encode to a single token");
    return enc.ids[0];
  }

 private:
  static std::string merge_key(const std::string& a, const std::string& b) {
    std::string k;
    k.reserve(a.size() + b.size() + 1);
    k += a;
    k.push_back('\0');
    k += b;
    return k;
  }

  void encode_chunk(std::string_view text, ByteRange chunk, Encoding& enc) const {
    // Symbols as byte ranges within the chunk.
    std::vector<ByteRange> sym;
    for (std::size_t i = chunk.begin; i < chunk.end; ++i) sym.push_back({i, i + 1});
    auto str = [&](const ByteRange& r) { return std::string(text.substr(r.begin, r.end - r.begin)); };
    while (sym.size() > 1) {
      std::size_t best_rank = std::numeric_limits<std::size_t>::max();
      std::size_t best = 0;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = merge_rank_.find(merge_key(str(sym[i]), str(sym[i + 1])));
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
          best = i;
        }
      }
      if (best_rank == std::numeric_limits<std::size_t>::max()) break;
      // Merge every occurrence of the winning pair, left to right.
      const std::string left = str(sym[best]), right = str(sym[best + 1]);
      std::vector<ByteRange> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && str(sym[i]) == left && str(sym[i + 1]) == right) {
          next.push_back({sym[i].begin, sym[i + 1].end});
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym = std::move(next);
    }
    for (const auto& r : sym) {
      auto it = ids_.find(str(r));
      if (it == ids_.end()) {
        char hex[8];
        std::snprintf(hex, sizeof hex, "0x%02X", static_cast<unsigned char>(text[r.begin]));
        fail(ErrorKind::kInvalidArgument, std::string("encode: byte ") + hex + " not covered by the vocabulary");
      }
      enc.ids.push_back(it->second);
      enc.offsets.push_back(r);
    }
  }

  std::vector<std::string> vocab_;
  std::vector<bool> special_;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<std::string, TokenId> special_ids_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::optional<TokenId> bos_;
};

/// Minimal token range whose byte coverage contains the `occurrence`-th
/// (0-based) match of `needle` in `text`. Tokens that straddle the needle's
/// edges are included.
inline TokenSpan locate_span(std::span<const ByteRange> offsets, std::string_view text, std::string_view needle,
                             std::size_t occurrence = 0) {
  require(!needle.empty(), ErrorKind::kInvalidArgument, "locate_span: empty needle");
  std::size_t pos = text.find(needle);
  for (std::size_t k = 0; k < occurrence && pos != std::string_view::npos; ++k) pos = text.find(needle, pos + 1);
  require(pos != std::string_view::npos, ErrorKind::kNotFound,
          "locate_span: '" + std::string(needle) + "' not found (occurrence " + std::to_string(occurrence) + ")");
  const std::size_t begin = pos, end = pos + needle.size();
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    if (offsets[t].end > begin && offsets[t].begin < end) {
      if (!first) first = t;
      last = t;
    }
  }
  require(first.has_value(), ErrorKind::kNotFound, "locate_span: no token covers the needle");
  return {*first, last + 1};
}

}  // namespace drugloc
