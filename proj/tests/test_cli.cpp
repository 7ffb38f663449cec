// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <regex>

#include "drugloc/commands.hpp"
#include "support/cli_runner.hpp"
#include "support/scratch_dir.hpp"

namespace drugloc {
namespace {

using testing::CliResult;
using testing::ScratchDir;

CliResult cli(const std::vector<std::string>& args) { return testing::run_cli(DRUGLOC_CLI_PATH, args); }

TEST(Config, StrictParsingAndPathResolution) {
  const auto j = nlohmann::json::parse(R"({"tokenizer": "tok.json", "seed": 7, "radius": 2, "probe_groups": ["a", "b"]})");
  const auto c = config_from_json(j, "/data/exp");
  EXPECT_EQ(c.tokenizer, "/data/exp/tok.json");
  EXPECT_EQ(*c.seed, 7u);
  EXPECT_EQ(c.radius, 2u);
  EXPECT_EQ(c.n_pairs, 200u);
  auto kind = [](const char* text) {
    try {
      (void)config_from_json(nlohmann::json::parse(text), "/");
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kNumerical;
  };
  EXPECT_EQ(kind(R"({"radios": 2})"), ErrorKind::kMalformedConfig);
  EXPECT_EQ(kind(R"({"radius": "two"})"), ErrorKind::kMalformedConfig);
  EXPECT_EQ(kind(R"([1, 2])"), ErrorKind::kMalformedConfig);
}

TEST(Config, FlagOverridesAreTyped) {
  EXPECT_EQ(parse_override("radius", "3"), 3);
  EXPECT_EQ(parse_override("C", "0.01"), 0.01);
  EXPECT_EQ(parse_override("bos", "true"), true);
  EXPECT_EQ(parse_override("layers", "pre0,1"), nlohmann::json::array({"pre0", "1"}));
  EXPECT_EQ(parse_override("probe_groups", "a, b|c"), nlohmann::json::array({"a, b", "c"}));
  EXPECT_THROW((void)parse_override("radius", "-1"), Error);
  EXPECT_THROW((void)parse_override("bos", "maybe"), Error);
  EXPECT_THROW((void)parse_override("nope", "1"), Error);
}

TEST(Config, HashIgnoresOutputLocations) {
  const auto a = load_experiment_config(std::nullopt, {{"seed", "1"}, {"output_dir", "/tmp/a"}});
  const auto b = load_experiment_config(std::nullopt, {{"seed", "1"}, {"output_dir", "/tmp/b"}, {"threads", "4"}});
  const auto c = load_experiment_config(std::nullopt, {{"seed", "2"}});
  EXPECT_EQ(provenance_for(a).config_hash, provenance_for(b).config_hash);
  EXPECT_NE(provenance_for(a).config_hash, provenance_for(c).config_hash);
  EXPECT_EQ(provenance_for(c).seed, 2u);
}

/// The whole toy pipeline, run once for the suite.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new ScratchDir("cli");
    results = new std::map<std::string, CliResult>;
    (*results)["make-toy"] = cli({"make-toy", "--output-dir", dir->path().string()});
    for (const char* cmd : {"gen-dataset", "eval", "patch-resid", "patch-mlp", "probe"}) {
      (*results)[cmd] = cli({cmd, "--config", config()});
    }
  }
  static void TearDownTestSuite() {
    delete results;
    delete dir;
  }
  static std::string config() { return (dir->path() / "experiment.json").string(); }
  static nlohmann::json read(const std::string& rel) { return read_json_file(dir->path() / rel); }

  static ScratchDir* dir;
  static std::map<std::string, CliResult>* results;
};
ScratchDir* Pipeline::dir = nullptr;
std::map<std::string, CliResult>* Pipeline::results = nullptr;

TEST_F(Pipeline, EveryStageSucceeds) {
  for (const auto& [cmd, r] : *results) {
    EXPECT_EQ(r.exit_code, 0) << cmd << ": " << r.out;
    EXPECT_EQ(r.json()["status"], "ok") << cmd;
  }
  for (const char* f : {"benchmark.jsonl", "pairs.jsonl", "pair_rejections.jsonl", "probe_prompts.jsonl", "eval.json",
                        "eval_items.csv", "patch_resid/aggregate.json", "patch_resid/aggregate.csv",
                        "patch_resid/summary.json", "patch_mlp/aggregate.json", "probe_report.json",
                        "probe_report.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir->path() / f)) << f;
  }
}

TEST_F(Pipeline, ResultsOnThePlantedModel) {
  EXPECT_EQ(read("eval.json")["accuracy"], 1.0);
  const auto resid = results->at("patch-resid").json();
  EXPECT_EQ(resid["invalid_pairs"], 0);
  EXPECT_NEAR(resid["avg_max_span"].get<double>(), 1.0, 1e-3);
  EXPECT_NEAR(resid["avg_max_final"].get<double>(), 0.0, 1e-3);
  const auto probe = read("probe_report.json");
  EXPECT_EQ(probe["positive_group"], "adrenergic alpha agonists");
  bool found = false;
  for (const auto& r : probe["results"]) {
    if (r["layer"] == "pre0" && r["mode"] == "sum_pooled") {
      EXPECT_EQ(r["test_accuracy"]["mean"], 1.0);
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST_F(Pipeline, HottestRenderedCellIsInTheGroupSpan) {
  const auto r = cli({"render", "--input", (dir->path() / "patch_resid/aggregate.json").string()});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const std::string svg = read_text(dir->path() / "patch_resid/aggregate.svg");
  const std::regex cell(R"re(class="cell"[^>]*data-layer="(\d+)" data-position="(\d+)" data-value="([^"]+)")re");
  double best = -INFINITY;
  std::size_t best_col = 0, n_cells = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell); it != std::sregex_iterator(); ++it, ++n_cells) {
    const double v = std::stod((*it)[3]);
    if (v > best) {
      best = v;
      best_col = std::stoul((*it)[2]);
    }
  }
  const auto roles = read("patch_resid/aggregate.json")["roles"].get<std::vector<std::string>>();
  EXPECT_EQ(n_cells, 2 * roles.size());
  ASSERT_LT(best_col, roles.size());
  EXPECT_EQ(roles[best_col].rfind("span:", 0), 0u) << roles[best_col];
}

TEST_F(Pipeline, RendersPairGridsAndProbeCurves) {
  const auto out = dir->path() / "curve.svg";
  auto r = cli({"render", "--input", (dir->path() / "probe_report.json").string(), "--output", out.string()});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(read_text(out).find("<polyline class=\"test\""), std::string::npos);
  r = cli({"render", "--input", (dir->path() / "patch_mlp/pair_0.json").string()});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(read_text(dir->path() / "patch_mlp/pair_0.svg").find("class=\"cell\""), std::string::npos);
}

TEST_F(Pipeline, RerunsAreByteIdentical) {
  ScratchDir other("cli_rerun");
  const std::string out = other.path().string();
  ASSERT_EQ(cli({"gen-dataset", "--config", config(), "--output-dir", out}).exit_code, 0);
  ASSERT_EQ(cli({"eval", "--config", config(), "--output-dir", out, "--threads", "2"}).exit_code, 0);
  for (const char* f : {"benchmark.jsonl", "pairs.jsonl", "pair_rejections.jsonl", "eval.json", "eval_items.csv"}) {
    EXPECT_EQ(read_text(dir->path() / f), read_text(other.path() / f)) << f;
  }
}

TEST_F(Pipeline, DistinctExitCodesPerFailure) {
  ScratchDir bad("cli_bad");
  auto r = cli({"eval", "--config", (bad.path() / "absent.json").string()});
  EXPECT_EQ(r.exit_code, 4);
  EXPECT_EQ(r.json()["error"], "missing_file");

  write_atomic(bad / "typo.json", R"({"radios": 5})");
  r = cli({"eval", "--config", (bad / "typo.json").string()});
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_EQ(r.json()["error"], "malformed_config");

  write_atomic(bad / "pairs.jsonl", "{\"id\": \"not a pair\"}\n");
  r = cli({"patch-resid", "--config", config(), "--data-dir", bad.path().string(), "--output-dir",
           bad.path().string()});
  EXPECT_EQ(r.exit_code, 5);
  EXPECT_EQ(r.json()["error"], "schema_mismatch");

  r = cli({"eval", "--config", config(), "--radius", "five"});
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(cli({"eval", "--no-such-flag"}).exit_code, 2);
  EXPECT_EQ(cli({"probe", "--config", config(), "--layers", "7", "--data-dir", dir->path().string(),
                 "--output-dir", bad.path().string()}).exit_code, 2);
  EXPECT_EQ(cli({"gen-dataset", "--config", config(), "--probe-groups", "nope|adhesives", "--output-dir",
                 bad.path().string()}).exit_code,
            8);
}

}  // namespace
}  // namespace drugloc
