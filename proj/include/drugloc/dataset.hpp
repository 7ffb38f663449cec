// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Drug -> group dictionary ingestion and prompt dataset generation: a
// balanced two-choice benchmark, clean/counterfactual pairs for patching,
// and per-group probe prompt sets.

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drugloc/error.hpp"
#include "drugloc/rng.hpp"
#include "drugloc/tokenizer.hpp"

namespace drugloc {

// ---------------------------------------------------------------------------
// Dictionary

class DrugDictionary {
 public:
  /// Adds one membership. Names are lowercased and trimmed; returns false
  /// for a duplicate.
  bool add(std::string drug, std::string group) {
    drug = normalize(drug);
    group = normalize(group);
    require(!drug.empty() && !group.empty(), ErrorKind::kInvalidArgument, "dictionary: empty name");
    groups_[group].insert(drug);
    return entries_[drug].insert(group).second;
  }

  bool contains(const std::string& drug, const std::string& group) const {
    auto it = entries_.find(drug);
    return it != entries_.end() && it->second.contains(group);
  }

  bool has_group(const std::string& group) const { return groups_.contains(group); }

  const std::set<std::string>& members(const std::string& group) const {
    auto it = groups_.find(group);
    require(it != groups_.end(), ErrorKind::kNotFound, "dictionary: unknown group '" + group + "'");
    return it->second;
  }

  const std::set<std::string>& groups_of(const std::string& drug) const {
    auto it = entries_.find(drug);
    require(it != entries_.end(), ErrorKind::kNotFound, "dictionary: unknown drug '" + drug + "'");
    return it->second;
  }

  std::vector<std::string> drugs() const {
    std::vector<std::string> out;
    for (const auto& [d, _] : entries_) out.push_back(d);
    return out;
  }

  std::vector<std::string> group_names() const {
    std::vector<std::string> out;
    for (const auto& [g, _] : groups_) out.push_back(g);
    return out;
  }

  std::size_t n_drugs() const { return entries_.size(); }
  std::size_t n_groups() const { return groups_.size(); }
  std::size_t n_memberships() const {
    std::size_t n = 0;
    for (const auto& [_, g] : entries_) n += g.size();
    return n;
  }

  const std::map<std::string, std::set<std::string>>& entries() const { return entries_; }
  const std::map<std::string, std::set<std::string>>& groups() const { return groups_; }

  static std::string normalize(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

 private:
  std::map<std::string, std::set<std::string>> entries_;  // drug -> groups
  std::map<std::string, std::set<std::string>> groups_;   // group -> drugs
};

namespace detail {

/// Splits one CSV record, honoring double-quoted fields with "" escapes.
inline std::optional<std::vector<std::string>> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) return std::nullopt;
  return fields;
}

}  // namespace detail

/// CSV with header `drug,group` (one membership per row), or JSON: either an
/// object {group: [drugs...]} or an array of {"drug", "group"} objects.
inline DrugDictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "cannot open dictionary " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  require(content.find_first_not_of(" \t\r\n") != std::string::npos, ErrorKind::kDataset,
          "dictionary " + path.string() + " is empty");

  DrugDictionary dict;
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, path.string() + ": invalid JSON: " + e.what());
    }
    try {
      if (j.is_object()) {
        for (const auto& [group, drugs] : j.items()) {
          for (const auto& d : drugs) dict.add(d.get<std::string>(), group);
        }
      } else {
        std::size_t idx = 0;
        for (const auto& row : j) {
          const auto drug = row.at("drug").get<std::string>();
          const auto group = row.at("group").get<std::string>();
          require(!DrugDictionary::normalize(drug).empty() && !DrugDictionary::normalize(group).empty(),
                  ErrorKind::kSchemaMismatch, path.string() + ": entry " + std::to_string(idx) + ": empty name");
          dict.add(drug, group);
          ++idx;
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, path.string() + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kSchemaMismatch, e.what());
    }
  } else {
    std::istringstream lines(content);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(lines, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      auto fields = detail::split_csv(line);
      const std::string where = path.string() + ":" + std::to_string(line_no);
      require(fields.has_value(), ErrorKind::kSchemaMismatch, where + ": unterminated quote");
      require(fields->size() == 2, ErrorKind::kSchemaMismatch,
              where + ": expected 2 fields, found " + std::to_string(fields->size()));
      if (!header_seen) {
        header_seen = true;
        require(DrugDictionary::normalize((*fields)[0]) == "drug" && DrugDictionary::normalize((*fields)[1]) == "group",
                ErrorKind::kSchemaMismatch, where + ": expected header 'drug,group'");
        continue;
      }
      const auto drug = DrugDictionary::normalize((*fields)[0]);
      const auto group = DrugDictionary::normalize((*fields)[1]);
      require(!drug.empty(), ErrorKind::kSchemaMismatch, where + ": empty drug field");
      require(!group.empty(), ErrorKind::kSchemaMismatch, where + ": empty group field");
      dict.add(drug, group);
    }
  }
  require(dict.n_drugs() > 0, ErrorKind::kDataset, "dictionary " + path.string() + " has no entries");
  return dict;
}

// ---------------------------------------------------------------------------
// Templates and prompt rendering

/// Question phrasings; each contains exactly one "{group}" placeholder.
inline std::vector<std::string> default_templates() {
  return {
      "Which compound belongs to the class of {group}?",
      "Which compound is known to act as {group}?",
      "Which compound would be grouped into {group}?",
      "Which compound falls under {group}?",
      "Which compound is categorized as {group}?",
  };
}

inline constexpr std::string_view kGroupPlaceholder = "{group}";

inline void validate_templates(const std::vector<std::string>& templates) {
  require(!templates.empty(), ErrorKind::kSchemaMismatch, "templates: list is empty");
  for (const auto& t : templates) {
    const auto first = t.find(kGroupPlaceholder);
    require(first != std::string::npos && t.find(kGroupPlaceholder, first + 1) == std::string::npos,
            ErrorKind::kSchemaMismatch, "template '" + t + "' must contain exactly one {group}");
  }
}

inline std::vector<std::string> load_templates(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  std::vector<std::string> out;
  try {
    out = j.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchemaMismatch, path.string() + ": expected a JSON list of strings");
  }
  validate_templates(out);
  return out;
}

enum class Choice : std::uint8_t { kA, kB };

inline char letter(Choice c) { return c == Choice::kA ? 'A' : 'B'; }
inline Choice other(Choice c) { return c == Choice::kA ? Choice::kB : Choice::kA; }
inline Choice choice_from_letter(const std::string& s) {
  require(s == "A" || s == "B", ErrorKind::kSchemaMismatch, "expected answer letter A or B, found '" + s + "'");
  return s == "A" ? Choice::kA : Choice::kB;
}

/// Two-choice prompt with the byte ranges of its parts.
struct RenderedPrompt {
  std::string text;
  ByteRange group;
  ByteRange option_a;    // "\nA) <drug>"
  ByteRange option_b;    // "\nB) <drug>"
  ByteRange answer_cue;  // "\nAnswer:"
};

inline RenderedPrompt render_prompt(const std::string& question_template, const std::string& group,
                                    const std::string& option_a, const std::string& option_b) {
  const auto at = question_template.find(kGroupPlaceholder);
  require(at != std::string::npos, ErrorKind::kInvalidArgument, "template has no {group} placeholder");
  RenderedPrompt r;
  r.text = "Question: " + question_template.substr(0, at);
  r.group.begin = r.text.size();
  r.text += group;
  r.group.end = r.text.size();
  r.text += question_template.substr(at + kGroupPlaceholder.size());
  r.option_a.begin = r.text.size();
  r.text += "\nA) " + option_a;
  r.option_a.end = r.option_b.begin = r.text.size();
  r.text += "\nB) " + option_b;
  r.option_b.end = r.answer_cue.begin = r.text.size();
  r.text += "\nAnswer:";
  r.answer_cue.end = r.text.size();
  return r;
}

inline TokenSpan span_covering(std::span<const ByteRange> offsets, ByteRange range) {
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    if (offsets[t].end > range.begin && offsets[t].begin < range.end) {
      if (!first) first = t;
      last = t;
    }
  }
  require(first.has_value(), ErrorKind::kNotFound, "no token covers the requested byte range");
  return {*first, last + 1};
}

struct TokenizedPrompt {
  std::vector<TokenId> ids;
  std::vector<ByteRange> offsets;
  TokenSpan group_span;
  std::vector<std::string> roles;  // per-token position role
};

/// Role labels: bos, question, span:<k>, option_a, option_b, answer_cue, final.
inline TokenizedPrompt tokenize_prompt(const Tokenizer& tok, const RenderedPrompt& p, bool bos) {
  Encoding enc = tok.encode(p.text);
  TokenizedPrompt out;
  if (bos) {
    require(tok.bos_id().has_value(), ErrorKind::kInvalidArgument, "BOS requested but tokenizer defines no bos_token");
    out.ids.push_back(*tok.bos_id());
    out.offsets.push_back({0, 0});
  }
  out.ids.insert(out.ids.end(), enc.ids.begin(), enc.ids.end());
  out.offsets.insert(out.offsets.end(), enc.offsets.begin(), enc.offsets.end());
  const std::size_t shift = bos ? 1 : 0;
  const TokenSpan raw = span_covering(enc.offsets, p.group);
  out.group_span = {raw.start + shift, raw.end + shift};

  out.roles.resize(out.ids.size());
  for (std::size_t t = 0; t < out.ids.size(); ++t) {
    const std::size_t b = out.offsets[t].begin;
    if (bos && t == 0) {
      out.roles[t] = "bos";
    } else if (out.group_span.contains(t)) {
      out.roles[t] = "span:" + std::to_string(t - out.group_span.start);
    } else if (b >= p.answer_cue.begin) {
      out.roles[t] = "answer_cue";
    } else if (b >= p.option_b.begin) {
      out.roles[t] = "option_b";
    } else if (b >= p.option_a.begin) {
      out.roles[t] = "option_a";
    } else {
      out.roles[t] = "question";
    }
  }
  out.roles.back() = "final";
  return out;
}

struct AnswerTokens {
  TokenId a = 0;
  TokenId b = 0;
  TokenId of(Choice c) const { return c == Choice::kA ? a : b; }
};

/// Answer tokens are the encodings of " A" and " B".
inline AnswerTokens answer_tokens(const Tokenizer& tok) { return {tok.single_token(" A"), tok.single_token(" B")}; }

// ---------------------------------------------------------------------------
// Benchmark

struct TwoChoiceItem {
  std::string prompt;
  std::string option_a;
  std::string option_b;
  Choice correct = Choice::kA;
  std::string group;
  std::size_t template_id = 0;
  // Filled by tokenize_benchmark.
  std::vector<TokenId> tokens;
  AnswerTokens answers;

  const std::string& correct_drug() const { return correct == Choice::kA ? option_a : option_b; }
  const std::string& distractor() const { return correct == Choice::kA ? option_b : option_a; }
};

inline std::vector<std::string> eligible_groups(const DrugDictionary& dict) {
  std::vector<std::string> out;
  for (const auto& [g, members] : dict.groups()) {
    if (!members.empty() && members.size() < dict.n_drugs()) out.push_back(g);
  }
  return out;
}

/// Exactly ceil(n/2) items have the correct answer at A. Item i draws from
/// its own stream derived from (seed, i).
inline std::vector<TwoChoiceItem> generate_benchmark(const DrugDictionary& dict,
                                                     const std::vector<std::string>& templates,
                                                     std::size_t n_items, std::uint64_t seed) {
  validate_templates(templates);
  const auto groups = eligible_groups(dict);
  require(!groups.empty(), ErrorKind::kDataset,
          "benchmark: no group has both a member and a non-member drug to sample a distractor from");
  const auto drugs = dict.drugs();

  std::vector<Choice> positions(n_items, Choice::kB);
  std::fill_n(positions.begin(), (n_items + 1) / 2, Choice::kA);
  Rng(seed).shuffle(std::span<Choice>(positions));

  std::vector<TwoChoiceItem> items;
  items.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    Rng rng = Rng::derive(seed, i);
    const std::string& group = groups[rng.below(groups.size())];
    const auto& members = dict.members(group);
    std::vector<std::string> member_list(members.begin(), members.end());
    std::vector<std::string> outsiders;
    for (const auto& d : drugs) {
      if (!members.contains(d)) outsiders.push_back(d);
    }
    const std::string correct = member_list[rng.below(member_list.size())];
    const std::string distractor = outsiders[rng.below(outsiders.size())];
    TwoChoiceItem item;
    item.group = group;
    item.template_id = rng.below(templates.size());
    item.correct = positions[i];
    item.option_a = item.correct == Choice::kA ? correct : distractor;
    item.option_b = item.correct == Choice::kA ? distractor : correct;
    item.prompt = render_prompt(templates[item.template_id], group, item.option_a, item.option_b).text;
    items.push_back(std::move(item));
  }
  return items;
}

inline void tokenize_benchmark(std::vector<TwoChoiceItem>& items, const Tokenizer& tok, bool bos) {
  const AnswerTokens ans = answer_tokens(tok);
  for (auto& item : items) {
    Encoding enc = tok.encode(item.prompt);
    item.tokens.clear();
    if (bos) {
      require(tok.bos_id().has_value(), ErrorKind::kInvalidArgument, "BOS requested but tokenizer defines no bos_token");
      item.tokens.push_back(*tok.bos_id());
    }
    item.tokens.insert(item.tokens.end(), enc.ids.begin(), enc.ids.end());
    item.answers = ans;
  }
}

// ---------------------------------------------------------------------------
// Counterfactual pairs

struct CounterfactualPair {
  std::size_t id = 0;
  std::string clean_prompt;
  std::string corrupt_prompt;
  std::vector<TokenId> clean_tokens;
  std::vector<TokenId> corrupt_tokens;
  TokenSpan group_span;
  std::string clean_group;
  std::string corrupt_group;
  std::string option_a;
  std::string option_b;
  Choice correct_clean = Choice::kA;
  Choice correct_corrupt = Choice::kB;
  AnswerTokens answers;
  std::size_t final_pos = 0;
  std::size_t template_id = 0;
  std::vector<std::string> roles;

  /// Clean-ordering answer tokens: (clean-correct, clean-incorrect).
  TokenId correct_token() const { return answers.of(correct_clean); }
  TokenId incorrect_token() const { return answers.of(other(correct_clean)); }
};

struct PairRejection {
  std::size_t attempt = 0;
  std::string clean_group;
  std::string corrupt_group;
  std::string option_a;
  std::string option_b;
  std::string reason;  // "token-length mismatch", "alignment mismatch", "same group", "no flip group"
  std::size_t clean_len = 0;
  std::size_t corrupt_len = 0;
};

struct PairBuildResult {
  std::vector<CounterfactualPair> pairs;
  std::vector<PairRejection> rejections;
  std::size_t attempts = 0;
  std::size_t candidates_evaluated = 0;

  double rejection_rate() const {
    return candidates_evaluated ? static_cast<double>(rejections.size()) / static_cast<double>(candidates_evaluated)
                                : 0.0;
  }
};

/// Alignment problems of a pair; empty means every invariant holds.
inline std::vector<std::string> pair_violations(const CounterfactualPair& p) {
  std::vector<std::string> v;
  if (p.clean_tokens.size() != p.corrupt_tokens.size()) {
    v.push_back("length mismatch");
    return v;
  }
  if (p.group_span.start >= p.group_span.end || p.group_span.end > p.clean_tokens.size()) v.push_back("bad span");
  for (std::size_t i = 0; i < p.clean_tokens.size(); ++i) {
    if (!p.group_span.contains(i) && p.clean_tokens[i] != p.corrupt_tokens[i]) {
      v.push_back("token differs outside span at " + std::to_string(i));
    }
  }
  if (p.correct_corrupt != other(p.correct_clean)) v.push_back("answer does not flip");
  if (p.clean_group == p.corrupt_group) v.push_back("same group");
  if (p.final_pos + 1 != p.clean_tokens.size()) v.push_back("final_pos is not the last token");
  if (p.roles.size() != p.clean_tokens.size()) v.push_back("role count mismatch");
  return v;
}

/// Checks one candidate counterfactual group. Returns the rejection reason,
/// or nothing when the pair is index-aligned.
inline std::optional<std::string> check_candidate(const TokenizedPrompt& clean, const TokenizedPrompt& corrupt,
                                                  const std::string& clean_group, const std::string& corrupt_group) {
  if (clean_group == corrupt_group) return "same group";
  if (clean.ids.size() != corrupt.ids.size()) return "token-length mismatch";
  if (clean.group_span != corrupt.group_span) return "alignment mismatch";
  for (std::size_t i = 0; i < clean.ids.size(); ++i) {
    if (!clean.group_span.contains(i) && clean.ids[i] != corrupt.ids[i]) return "alignment mismatch";
  }
  return std::nullopt;
}

struct PairOptions {
  bool bos = false;
  std::size_t max_attempts_per_pair = 200;
};

/// Builds pairs whose clean and counterfactual prompts differ only in the
/// group mention and whose correct answers are opposite. Candidate groups that
/// tokenize to a different length are rejected and logged.
inline PairBuildResult build_counterfactual_pairs(const DrugDictionary& dict, const Tokenizer& tok,
                                                  const std::vector<std::string>& templates, std::size_t n_pairs,
                                                  std::uint64_t seed, const PairOptions& opts = {}) {
  validate_templates(templates);
  require(dict.n_groups() >= 2, ErrorKind::kDataset, "counterfactual pairs need at least 2 groups");
  const auto groups = eligible_groups(dict);
  require(!groups.empty(), ErrorKind::kDataset, "counterfactual pairs: no group admits a distractor");
  const auto drugs = dict.drugs();
  const AnswerTokens ans = answer_tokens(tok);

  std::vector<Choice> positions(n_pairs, Choice::kB);
  std::fill_n(positions.begin(), (n_pairs + 1) / 2, Choice::kA);
  Rng rng(seed);
  rng.shuffle(std::span<Choice>(positions));

  PairBuildResult res;
  const std::size_t max_attempts = opts.max_attempts_per_pair * std::max<std::size_t>(n_pairs, 1);
  while (res.pairs.size() < n_pairs) {
    require(res.attempts < max_attempts, ErrorKind::kDataset,
            "counterfactual pairs: only " + std::to_string(res.pairs.size()) + " of " + std::to_string(n_pairs) +
                " equal-length pairs found after " + std::to_string(res.attempts) + " attempts");
    const std::size_t attempt = res.attempts++;
    const std::string& clean_group = groups[rng.below(groups.size())];
    const auto& members = dict.members(clean_group);
    std::vector<std::string> member_list(members.begin(), members.end());
    std::vector<std::string> outsiders;
    for (const auto& d : drugs) {
      if (!members.contains(d)) outsiders.push_back(d);
    }
    const std::string correct = member_list[rng.below(member_list.size())];
    const std::string distractor = outsiders[rng.below(outsiders.size())];
    const std::size_t template_id = rng.below(templates.size());
    const Choice clean_pos = positions[res.pairs.size()];
    const std::string& option_a = clean_pos == Choice::kA ? correct : distractor;
    const std::string& option_b = clean_pos == Choice::kA ? distractor : correct;

    // Candidate counterfactual groups contain the distractor but not the
    // clean answer, so the correct option flips.
    std::vector<std::string> candidates;
    for (const auto& g : dict.groups_of(distractor)) {
      if (!dict.contains(correct, g)) candidates.push_back(g);
    }
    if (candidates.empty()) {
      res.rejections.push_back({attempt, clean_group, "", option_a, option_b, "no flip group", 0, 0});
      ++res.candidates_evaluated;
      continue;
    }
    rng.shuffle(std::span<std::string>(candidates));

    const RenderedPrompt clean_r = render_prompt(templates[template_id], clean_group, option_a, option_b);
    const TokenizedPrompt clean_t = tokenize_prompt(tok, clean_r, opts.bos);
    for (const auto& corrupt_group : candidates) {
      ++res.candidates_evaluated;
      const RenderedPrompt corrupt_r = render_prompt(templates[template_id], corrupt_group, option_a, option_b);
      const TokenizedPrompt corrupt_t = tokenize_prompt(tok, corrupt_r, opts.bos);
      if (auto reason = check_candidate(clean_t, corrupt_t, clean_group, corrupt_group)) {
        res.rejections.push_back(
            {attempt, clean_group, corrupt_group, option_a, option_b, *reason, clean_t.ids.size(), corrupt_t.ids.size()});
        continue;
      }
      CounterfactualPair p;
      p.id = res.pairs.size();
      p.clean_prompt = clean_r.text;
      p.corrupt_prompt = corrupt_r.text;
      p.clean_tokens = clean_t.ids;
      p.corrupt_tokens = corrupt_t.ids;
      p.group_span = clean_t.group_span;
      p.clean_group = clean_group;
      p.corrupt_group = corrupt_group;
      p.option_a = option_a;
      p.option_b = option_b;
      p.correct_clean = clean_pos;
      p.correct_corrupt = other(clean_pos);
      p.answers = ans;
      p.final_pos = clean_t.ids.size() - 1;
      p.template_id = template_id;
      p.roles = clean_t.roles;
      res.pairs.push_back(std::move(p));
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Probe prompts

struct ProbePrompt {
  std::size_t prompt_id = 0;
  int label = 0;
  std::string group;
  std::string text;
  std::vector<TokenId> tokens;
  TokenSpan group_span;
  std::size_t template_id = 0;
};

struct ProbePromptSet {
  std::string group;
  int label = 0;
  std::vector<ProbePrompt> prompts;
};

/// Two prompt sets, one per group. The first-listed group is the positive
/// class (label 1). Prompt ids are unique across both sets.
inline std::pair<ProbePromptSet, ProbePromptSet> generate_probe_prompts(
    const DrugDictionary& dict, const std::pair<std::string, std::string>& group_pair, const Tokenizer& tok,
    const std::vector<std::string>& templates, std::size_t n_per_group, std::uint64_t seed, bool bos = false,
    std::size_t max_retries = 16) {
  validate_templates(templates);
  for (const auto* g : {&group_pair.first, &group_pair.second}) {
    require(dict.has_group(*g), ErrorKind::kDataset, "probe prompts: group '" + *g + "' not in dictionary");
  }
  require(group_pair.first != group_pair.second, ErrorKind::kInvalidArgument, "probe prompts: groups must differ");
  const auto drugs = dict.drugs();
  require(drugs.size() >= 2, ErrorKind::kDataset, "probe prompts: need at least 2 drugs for the options");

  auto make_set = [&](const std::string& group, int label, std::size_t id_base) {
    ProbePromptSet set{group, label, {}};
    for (std::size_t i = 0; i < n_per_group; ++i) {
      Rng rng = Rng::derive(seed, id_base + i);
      bool ok = false;
      for (std::size_t attempt = 0; attempt <= max_retries && !ok; ++attempt) {
        const std::size_t template_id = rng.below(templates.size());
        const std::size_t a = rng.below(drugs.size());
        std::size_t b = rng.below(drugs.size() - 1);
        if (b >= a) ++b;
        try {
          const RenderedPrompt r = render_prompt(templates[template_id], group, drugs[a], drugs[b]);
          const TokenizedPrompt t = tokenize_prompt(tok, r, bos);
          set.prompts.push_back({id_base + i, label, group, r.text, t.ids, t.group_span, template_id});
          ok = true;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNotFound) throw;
        }
      }
      require(ok, ErrorKind::kDataset, "probe prompts: could not locate the group span after retries");
    }
    return set;
  };
  return {make_set(group_pair.first, 1, 0), make_set(group_pair.second, 0, n_per_group)};
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const TokenSpan& s) { j = {s.start, s.end}; }
inline void from_json(const nlohmann::json& j, TokenSpan& s) {
  s.start = j.at(0).get<std::size_t>();
  s.end = j.at(1).get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const TwoChoiceItem& it) {
  j = {{"prompt", it.prompt},
       {"option_a", it.option_a},
       {"option_b", it.option_b},
       {"correct", std::string(1, letter(it.correct))},
       {"group", it.group},
       {"template_id", it.template_id}};
  if (!it.tokens.empty()) {
    j["tokens"] = it.tokens;
    j["answer_token_a"] = it.answers.a;
    j["answer_token_b"] = it.answers.b;
  }
}
inline void from_json(const nlohmann::json& j, TwoChoiceItem& it) {
  it.prompt = j.at("prompt").get<std::string>();
  it.option_a = j.at("option_a").get<std::string>();
  it.option_b = j.at("option_b").get<std::string>();
  it.correct = choice_from_letter(j.at("correct").get<std::string>());
  it.group = j.at("group").get<std::string>();
  it.template_id = j.value("template_id", std::size_t{0});
  if (j.contains("tokens")) {
    it.tokens = j.at("tokens").get<std::vector<TokenId>>();
    it.answers = {j.at("answer_token_a").get<TokenId>(), j.at("answer_token_b").get<TokenId>()};
  }
}

inline void to_json(nlohmann::json& j, const CounterfactualPair& p) {
  j = {{"id", p.id},
       {"clean_prompt", p.clean_prompt},
       {"corrupt_prompt", p.corrupt_prompt},
       {"clean_tokens", p.clean_tokens},
       {"corrupt_tokens", p.corrupt_tokens},
       {"group_span", p.group_span},
       {"clean_group", p.clean_group},
       {"corrupt_group", p.corrupt_group},
       {"option_a", p.option_a},
       {"option_b", p.option_b},
       {"correct_clean", std::string(1, letter(p.correct_clean))},
       {"correct_corrupt", std::string(1, letter(p.correct_corrupt))},
       {"answer_token_a", p.answers.a},
       {"answer_token_b", p.answers.b},
       {"final_pos", p.final_pos},
       {"template_id", p.template_id},
       {"roles", p.roles}};
}
inline void from_json(const nlohmann::json& j, CounterfactualPair& p) {
  p.id = j.at("id").get<std::size_t>();
  p.clean_prompt = j.value("clean_prompt", "");
  p.corrupt_prompt = j.value("corrupt_prompt", "");
  p.clean_tokens = j.at("clean_tokens").get<std::vector<TokenId>>();
  p.corrupt_tokens = j.at("corrupt_tokens").get<std::vector<TokenId>>();
  p.group_span = j.at("group_span").get<TokenSpan>();
  p.clean_group = j.at("clean_group").get<std::string>();
  p.corrupt_group = j.at("corrupt_group").get<std::string>();
  p.option_a = j.value("option_a", "");
  p.option_b = j.value("option_b", "");
  p.correct_clean = choice_from_letter(j.at("correct_clean").get<std::string>());
  p.correct_corrupt = choice_from_letter(j.at("correct_corrupt").get<std::string>());
  p.answers = {j.at("answer_token_a").get<TokenId>(), j.at("answer_token_b").get<TokenId>()};
  p.final_pos = j.at("final_pos").get<std::size_t>();
  p.template_id = j.value("template_id", std::size_t{0});
  p.roles = j.at("roles").get<std::vector<std::string>>();
}

inline void to_json(nlohmann::json& j, const PairRejection& r) {
  j = {{"attempt", r.attempt},         {"clean_group", r.clean_group}, {"corrupt_group", r.corrupt_group},
       {"option_a", r.option_a},       {"option_b", r.option_b},       {"reason", r.reason},
       {"clean_len", r.clean_len},     {"corrupt_len", r.corrupt_len}};
}

inline void to_json(nlohmann::json& j, const ProbePrompt& p) {
  j = {{"prompt_id", p.prompt_id}, {"label", p.label},           {"group", p.group},
       {"text", p.text},           {"tokens", p.tokens},         {"group_span", p.group_span},
       {"template_id", p.template_id}};
}
inline void from_json(const nlohmann::json& j, ProbePrompt& p) {
  p.prompt_id = j.at("prompt_id").get<std::size_t>();
  p.label = j.at("label").get<int>();
  p.group = j.at("group").get<std::string>();
  p.text = j.value("text", "");
  p.tokens = j.at("tokens").get<std::vector<TokenId>>();
  p.group_span = j.at("group_span").get<TokenSpan>();
  p.template_id = j.value("template_id", std::size_t{0});
}

}  // namespace drugloc
