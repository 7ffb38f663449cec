// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <string>

#include "drugloc/dataset.hpp"
#include "drugloc/planted.hpp"
#include "support/scratch_dir.hpp"

namespace drugloc {
namespace {

using testing::ScratchDir;

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::trunc) << s; }

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  return Error(ErrorKind::kNumerical, "no error");
}

TEST(Dictionary, LoadsCsv) {
  ScratchDir dir("dict");
  write(dir / "d.csv", "drug,group\nergotamine,vasoconstrictor agents\naraldite,adhesives\n");
  const auto d = load_dictionary(dir / "d.csv");
  EXPECT_EQ(d.n_drugs(), 2u);
  EXPECT_EQ(d.n_groups(), 2u);
  EXPECT_TRUE(d.contains("ergotamine", "vasoconstrictor agents"));
}

TEST(Dictionary, NormalizesAndDeduplicates) {
  ScratchDir dir("dict");
  write(dir / "d.csv",
        "drug,group\r\n  Ergotamine ,Vasoconstrictor Agents\r\nergotamine,vasoconstrictor agents\r\n"
        "\"heparin\",\"anticoagulants, injectable\"\r\n");
  const auto d = load_dictionary(dir / "d.csv");
  EXPECT_EQ(d.n_memberships(), 2u);
  EXPECT_TRUE(d.contains("heparin", "anticoagulants, injectable"));
  EXPECT_EQ(d.groups_of("ergotamine"), (std::set<std::string>{"vasoconstrictor agents"}));
}

TEST(Dictionary, RowErrorsCarryLineNumbers) {
  ScratchDir dir("dict");
  write(dir / "d.csv", "drug,group\nergotamine,vasoconstrictor agents\n ,adhesives\n");
  const Error e = error_of([&] { (void)load_dictionary(dir / "d.csv"); });
  EXPECT_EQ(e.kind(), ErrorKind::kSchemaMismatch);
  EXPECT_NE(std::string(e.what()).find("d.csv:3: empty drug field"), std::string::npos) << e.what();

  write(dir / "e.csv", "drug,group\na,b,c\n");
  EXPECT_NE(std::string(error_of([&] { (void)load_dictionary(dir / "e.csv"); }).what()).find(":2:"),
            std::string::npos);
  write(dir / "h.csv", "name,class\na,b\n");
  EXPECT_EQ(error_of([&] { (void)load_dictionary(dir / "h.csv"); }).kind(), ErrorKind::kSchemaMismatch);
}

TEST(Dictionary, EmptyAndMissingFiles) {
  ScratchDir dir("dict");
  write(dir / "empty.csv", "\n  \n");
  EXPECT_EQ(error_of([&] { (void)load_dictionary(dir / "empty.csv"); }).kind(), ErrorKind::kDataset);
  write(dir / "header.csv", "drug,group\n");
  EXPECT_EQ(error_of([&] { (void)load_dictionary(dir / "header.csv"); }).kind(), ErrorKind::kDataset);
  EXPECT_EQ(error_of([&] { (void)load_dictionary(dir / "nope.csv"); }).kind(), ErrorKind::kMissingFile);
}

TEST(Dictionary, LoadsBothJsonLayouts) {
  ScratchDir dir("dict");
  write(dir / "a.json", R"({"vasoconstrictor agents": ["ergotamine", "midodrine"], "adhesives": ["araldite"]})");
  write(dir / "b.json", R"([{"drug": "ergotamine", "group": "vasoconstrictor agents"},
                            {"drug": "Ergotamine", "group": "vasoconstrictor agents"}])");
  EXPECT_EQ(load_dictionary(dir / "a.json").n_drugs(), 3u);
  EXPECT_EQ(load_dictionary(dir / "b.json").n_memberships(), 1u);
  write(dir / "c.json", R"([{"drug": "x"}])");
  EXPECT_EQ(error_of([&] { (void)load_dictionary(dir / "c.json"); }).kind(), ErrorKind::kSchemaMismatch);
}

TEST(Templates, ValidationAndLoading) {
  ScratchDir dir("tpl");
  write(dir / "t.json", R"(["Which drug is one of the {group}?"])");
  EXPECT_EQ(load_templates(dir / "t.json").size(), 1u);
  write(dir / "bad.json", R"(["no placeholder here"])");
  EXPECT_THROW((void)load_templates(dir / "bad.json"), Error);
  EXPECT_EQ(default_templates().size(), 5u);
  EXPECT_NO_THROW(validate_templates(default_templates()));
}

TEST(Render, PromptLayoutAndRanges) {
  const auto r = render_prompt("Which compound belongs to the class of {group}?", "vasoconstrictor agents",
                               "ergotamine", "araldite");
  EXPECT_EQ(r.text,
            "Question: Which compound belongs to the class of vasoconstrictor agents?\nA) ergotamine\nB) araldite\n"
            "Answer:");
  EXPECT_EQ(r.text.substr(r.group.begin, r.group.end - r.group.begin), "vasoconstrictor agents");
  EXPECT_EQ(r.text.substr(r.option_b.begin, r.option_b.end - r.option_b.begin), "\nB) araldite");
  EXPECT_EQ(r.text.substr(r.answer_cue.begin), "\nAnswer:");
}

TEST(Render, TokenRoles) {
  const Tokenizer tok = planted::toy_tokenizer();
  const auto r = render_prompt(default_templates()[0], "vasoconstrictor agents", "ergotamine", "araldite");
  for (bool bos : {false, true}) {
    const auto t = tokenize_prompt(tok, r, bos);
    EXPECT_EQ(t.roles.front(), bos ? "bos" : "question");
    EXPECT_EQ(t.roles.back(), "final");
    EXPECT_EQ(t.group_span.size(), 2u);
    EXPECT_EQ(t.roles[t.group_span.start], "span:0");
    EXPECT_EQ(t.roles[t.group_span.start + 1], "span:1");
    const std::vector<TokenId> span(t.ids.begin() + static_cast<std::ptrdiff_t>(t.group_span.start),
                                    t.ids.begin() + static_cast<std::ptrdiff_t>(t.group_span.end));
    EXPECT_EQ(tok.decode(span), " vasoconstrictor agents");
    std::set<std::string> roles(t.roles.begin(), t.roles.end());
    for (const char* want : {"question", "option_a", "option_b", "answer_cue"}) EXPECT_TRUE(roles.contains(want));
  }
}

TEST(Benchmark, TwoItemsAreOneOfEach) {
  const auto items = generate_benchmark(planted::toy_dictionary(), default_templates(), 2, 5);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_NE(items[0].correct, items[1].correct);
}

TEST(Benchmark, PostconditionsOnLargeSet) {
  const auto dict = planted::toy_dictionary();
  for (std::size_t n : {999u, 1000u}) {
    const auto items = generate_benchmark(dict, default_templates(), n, 77);
    ASSERT_EQ(items.size(), n);
    std::size_t a = 0;
    for (const auto& it : items) {
      a += it.correct == Choice::kA ? 1 : 0;
      EXPECT_TRUE(dict.contains(it.correct_drug(), it.group));
      EXPECT_FALSE(dict.contains(it.distractor(), it.group));
      EXPECT_NE(it.option_a, it.option_b);
    }
    EXPECT_EQ(a, (n + 1) / 2);
  }
}

TEST(Benchmark, SeedDeterminism) {
  const auto dict = planted::toy_dictionary();
  const auto a = generate_benchmark(dict, default_templates(), 300, 9);
  const auto b = generate_benchmark(dict, default_templates(), 300, 9);
  const auto c = generate_benchmark(dict, default_templates(), 300, 10);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  EXPECT_NE(nlohmann::json(a).dump(), nlohmann::json(c).dump());
}

TEST(Benchmark, TooSmallDictionary) {
  DrugDictionary d;
  d.add("a", "g");
  d.add("b", "g");
  EXPECT_EQ(error_of([&] { (void)generate_benchmark(d, default_templates(), 4, 1); }).kind(), ErrorKind::kDataset);
}

TEST(Benchmark, TokenizedItemsRoundTripJson) {
  const Tokenizer tok = planted::toy_tokenizer();
  auto items = generate_benchmark(planted::toy_dictionary(), default_templates(), 20, 3);
  tokenize_benchmark(items, tok, true);
  for (const auto& it : items) {
    EXPECT_EQ(it.tokens.front(), *tok.bos_id());
    EXPECT_EQ(tok.decode(it.tokens), it.prompt);
    const auto back = nlohmann::json(it).get<TwoChoiceItem>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(it));
  }
}

struct ToyPrompts {
  Tokenizer tok = planted::toy_tokenizer();
  DrugDictionary dict = planted::toy_dictionary();

  TokenizedPrompt make(const std::string& group, const std::string& a, const std::string& b) const {
    return tokenize_prompt(tok, render_prompt(default_templates()[0], group, a, b), false);
  }
};

TEST(Pairs, PaperExampleCandidate) {
  const ToyPrompts t;
  const auto clean = t.make("vasoconstrictor agents", "ergotamine", "araldite");
  // araldite belongs to a 2-token group and to a 1-token group.
  EXPECT_EQ(check_candidate(clean, t.make("bronchoconstrictor agents", "ergotamine", "araldite"),
                            "vasoconstrictor agents", "bronchoconstrictor agents"),
            std::nullopt);
  EXPECT_EQ(check_candidate(clean, t.make("adhesives", "ergotamine", "araldite"), "vasoconstrictor agents", "adhesives"),
            std::optional<std::string>("token-length mismatch"));
  EXPECT_EQ(check_candidate(clean, clean, "vasoconstrictor agents", "vasoconstrictor agents"),
            std::optional<std::string>("same group"));
}

TEST(Pairs, ThreeVersusFourTokensIsALengthMismatch) {
  const ToyPrompts t;
  // "adrenergic alpha agonists" is 3 tokens; "central nervous system stimulants" is 4.
  EXPECT_EQ(t.tok.encode(" adrenergic alpha agonists").ids.size(), 3u);
  EXPECT_EQ(t.tok.encode(" central nervous system stimulants").ids.size(), 4u);
  EXPECT_EQ(check_candidate(t.make("adrenergic alpha agonists", "clonidine", "caffeine"),
                            t.make("central nervous system stimulants", "clonidine", "caffeine"),
                            "adrenergic alpha agonists", "central nervous system stimulants"),
            std::optional<std::string>("token-length mismatch"));
}

TEST(Pairs, InvariantsAndCompleteRejectionLog) {
  const ToyPrompts t;
  for (bool bos : {false, true}) {
    PairOptions opts;
    opts.bos = bos;
    const auto res = build_counterfactual_pairs(t.dict, t.tok, default_templates(), 200, 21, opts);
    ASSERT_EQ(res.pairs.size(), 200u);
    std::size_t a = 0;
    for (const auto& p : res.pairs) {
      EXPECT_TRUE(pair_violations(p).empty());
      a += p.correct_clean == Choice::kA ? 1 : 0;
      // The counterfactual group flips the answer.
      const std::string& clean_right = p.correct_clean == Choice::kA ? p.option_a : p.option_b;
      const std::string& clean_wrong = p.correct_clean == Choice::kA ? p.option_b : p.option_a;
      EXPECT_TRUE(t.dict.contains(clean_right, p.clean_group));
      EXPECT_TRUE(t.dict.contains(clean_wrong, p.corrupt_group));
      EXPECT_FALSE(t.dict.contains(clean_right, p.corrupt_group));
      EXPECT_EQ(t.tok.decode(p.clean_tokens), p.clean_prompt);
      EXPECT_EQ(t.tok.decode(p.corrupt_tokens), p.corrupt_prompt);
    }
    EXPECT_EQ(a, 100u);
    // Every evaluated candidate is either accepted or logged.
    EXPECT_EQ(res.candidates_evaluated, res.pairs.size() + res.rejections.size());
    std::set<std::string> reasons;
    for (const auto& r : res.rejections) {
      reasons.insert(r.reason);
      if (r.reason == "token-length mismatch") {
        EXPECT_NE(r.clean_len, r.corrupt_len);
      }
    }
    EXPECT_TRUE(reasons.contains("token-length mismatch"));
  }
}

TEST(Pairs, SeedDeterminism) {
  const ToyPrompts t;
  const auto a = build_counterfactual_pairs(t.dict, t.tok, default_templates(), 30, 4);
  const auto b = build_counterfactual_pairs(t.dict, t.tok, default_templates(), 30, 4);
  EXPECT_EQ(nlohmann::json(a.pairs).dump(), nlohmann::json(b.pairs).dump());
  EXPECT_EQ(nlohmann::json(a.rejections).dump(), nlohmann::json(b.rejections).dump());
  for (const auto& p : a.pairs) EXPECT_EQ(nlohmann::json(nlohmann::json(p).get<CounterfactualPair>()), nlohmann::json(p));
}

TEST(Pairs, ImpossiblePairingReportsAttemptCount) {
  const ToyPrompts t;
  DrugDictionary d;
  d.add("ergotamine", "vasoconstrictor agents");
  d.add("araldite", "adhesives");
  PairOptions opts;
  opts.max_attempts_per_pair = 5;
  const Error e = error_of([&] { (void)build_counterfactual_pairs(d, t.tok, default_templates(), 2, 1, opts); });
  EXPECT_EQ(e.kind(), ErrorKind::kDataset);
  EXPECT_NE(std::string(e.what()).find("after 10 attempts"), std::string::npos) << e.what();
  DrugDictionary one;
  one.add("a", "g");
  EXPECT_EQ(error_of([&] { (void)build_counterfactual_pairs(one, t.tok, default_templates(), 1, 1); }).kind(),
            ErrorKind::kDataset);
}

TEST(ProbePrompts, LabelsIdsAndSpans) {
  const ToyPrompts t;
  const auto [pos, neg] = generate_probe_prompts(
      t.dict, {"adrenergic alpha agonists", "adrenergic alpha antagonists"}, t.tok, default_templates(), 40, 8);
  ASSERT_EQ(pos.prompts.size(), 40u);
  ASSERT_EQ(neg.prompts.size(), 40u);
  std::set<std::size_t> ids;
  std::set<std::size_t> templates_used;
  for (const auto* set : {&pos, &neg}) {
    for (const auto& p : set->prompts) {
      EXPECT_EQ(p.label, set == &pos ? 1 : 0);
      EXPECT_TRUE(ids.insert(p.prompt_id).second);
      const std::string other = set == &pos ? "antagonists" : " agonists";
      EXPECT_EQ(p.text.find(other), std::string::npos);
      const std::vector<TokenId> span(p.tokens.begin() + static_cast<std::ptrdiff_t>(p.group_span.start),
                                      p.tokens.begin() + static_cast<std::ptrdiff_t>(p.group_span.end));
      EXPECT_EQ(t.tok.decode(span), " " + set->group);
      templates_used.insert(p.template_id);
      EXPECT_EQ(nlohmann::json(nlohmann::json(p).get<ProbePrompt>()), nlohmann::json(p));
    }
  }
  EXPECT_GT(templates_used.size(), 1u);
  EXPECT_THROW((void)generate_probe_prompts(t.dict, {"nope", "adhesives"}, t.tok, default_templates(), 2, 1), Error);
}

TEST(ProbePrompts, OnePerGroupGivesTwoPrompts) {
  const ToyPrompts t;
  const auto [pos, neg] = generate_probe_prompts(
      t.dict, {"central nervous system stimulants", "central nervous system depressants"}, t.tok, default_templates(),
      1, 3);
  ASSERT_EQ(pos.prompts.size() + neg.prompts.size(), 2u);
  EXPECT_EQ(pos.prompts[0].label, 1);
  EXPECT_EQ(neg.prompts[0].label, 0);
  EXPECT_NE(pos.prompts[0].text.find("stimulants"), std::string::npos);
  EXPECT_NE(neg.prompts[0].text.find("depressants"), std::string::npos);
}

}  // namespace
}  // namespace drugloc
