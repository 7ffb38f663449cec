// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline commands behind the drugloc CLI. Each command reads an
// ExperimentConfig, writes its outputs atomically under output_dir and
// returns a one-line JSON summary.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "drugloc/dataset.hpp"
#include "drugloc/error.hpp"
#include "drugloc/model.hpp"
#include "drugloc/patching.hpp"
#include "drugloc/planted.hpp"
#include "drugloc/probe.hpp"
#include "drugloc/report.hpp"
#include "drugloc/tokenizer.hpp"

namespace drugloc {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::string model_config;
  std::string model_weights;
  std::string tokenizer;
  std::string dictionary;
  std::string templates;  // empty: built-in phrasings
  std::string output_dir = "out";
  std::string data_dir;   // where dataset files are read; empty: output_dir
  std::optional<std::uint64_t> seed;
  std::size_t n_items = 1000;
  std::size_t n_pairs = 200;
  std::size_t max_pairs = 0;  // 0: every pair in pairs.jsonl
  std::size_t radius = 5;
  double C = 1e-3;
  std::size_t n_folds = 5;
  std::size_t n_per_group = 300;
  bool bos = false;
  std::vector<std::string> probe_groups;  // positive group first
  std::vector<std::string> layers;        // probe layers; empty: all
  std::optional<std::size_t> token_offset;
  std::size_t threads = 1;
  std::string input;   // render
  std::string output;  // render

  fs::path data_path() const { return data_dir.empty() ? fs::path(output_dir) : fs::path(data_dir); }
};

namespace config_keys {
inline const std::vector<std::string> kPaths = {"model_config", "model_weights", "tokenizer", "dictionary",
                                                "templates",    "output_dir",    "data_dir",  "input",
                                                "output"};
// Output locations do not change results, so they stay out of the hash.
inline const std::vector<std::string> kUnhashed = {"output_dir", "data_dir", "input", "output", "threads"};
}  // namespace config_keys

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model_config", c.model_config},
          {"model_weights", c.model_weights},
          {"tokenizer", c.tokenizer},
          {"dictionary", c.dictionary},
          {"templates", c.templates},
          {"output_dir", c.output_dir},
          {"data_dir", c.data_dir},
          {"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)},
          {"n_items", c.n_items},
          {"n_pairs", c.n_pairs},
          {"max_pairs", c.max_pairs},
          {"radius", c.radius},
          {"C", c.C},
          {"n_folds", c.n_folds},
          {"n_per_group", c.n_per_group},
          {"bos", c.bos},
          {"probe_groups", c.probe_groups},
          {"layers", c.layers},
          {"token_offset", c.token_offset ? nlohmann::json(*c.token_offset) : nlohmann::json(nullptr)},
          {"threads", c.threads},
          {"input", c.input},
          {"output", c.output}};
}

/// Strict parse: unknown keys and wrong types are config errors. Relative
/// paths resolve against `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base) {
  require(j.is_object(), ErrorKind::kMalformedConfig, "experiment config must be a JSON object");
  const nlohmann::json defaults = to_json(ExperimentConfig{});
  for (const auto& [k, v] : j.items()) {
    require(defaults.contains(k), ErrorKind::kMalformedConfig, "experiment config: unknown key '" + k + "'");
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kMalformedConfig, std::string("experiment config: key '") + key + "' has the wrong type");
    }
  };
  get("model_config", c.model_config);
  get("model_weights", c.model_weights);
  get("tokenizer", c.tokenizer);
  get("dictionary", c.dictionary);
  get("templates", c.templates);
  get("output_dir", c.output_dir);
  get("data_dir", c.data_dir);
  std::uint64_t seed = 0;
  if (j.contains("seed") && !j.at("seed").is_null()) {
    get("seed", seed);
    c.seed = seed;
  }
  get("n_items", c.n_items);
  get("n_pairs", c.n_pairs);
  get("max_pairs", c.max_pairs);
  get("radius", c.radius);
  get("C", c.C);
  get("n_folds", c.n_folds);
  get("n_per_group", c.n_per_group);
  get("bos", c.bos);
  get("probe_groups", c.probe_groups);
  get("layers", c.layers);
  if (j.contains("token_offset") && !j.at("token_offset").is_null()) {
    std::size_t off = 0;
    get("token_offset", off);
    c.token_offset = off;
  }
  get("threads", c.threads);
  get("input", c.input);
  get("output", c.output);

  for (std::string* p : {&c.model_config, &c.model_weights, &c.tokenizer, &c.dictionary, &c.templates, &c.output_dir,
                         &c.data_dir, &c.input, &c.output}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

/// Parses a flag value according to the JSON type of the config key.
inline nlohmann::json parse_override(const std::string& key, const std::string& value) {
  const nlohmann::json defaults = to_json(ExperimentConfig{});
  require(defaults.contains(key), ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
  const auto& d = defaults.at(key);
  if (key == "seed" || key == "token_offset" || d.is_number_unsigned() || d.is_number_integer()) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(value, &used);
      require(used == value.size() && value.find('-') == std::string::npos, ErrorKind::kInvalidArgument, "");
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, "--" + key + " expects a non-negative integer, got '" + value + "'");
    }
  }
  if (d.is_number_float()) {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      require(used == value.size(), ErrorKind::kInvalidArgument, "");
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, "--" + key + " expects a number, got '" + value + "'");
    }
  }
  if (d.is_boolean()) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    fail(ErrorKind::kInvalidArgument, "--" + key + " expects true or false, got '" + value + "'");
  }
  if (d.is_array()) {
    // Group names may contain commas, so group lists split on '|'.
    const char sep = key == "probe_groups" ? '|' : ',';
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= value.size()) {
      const auto comma = value.find(sep, start);
      const auto end = comma == std::string::npos ? value.size() : comma;
      if (end > start) parts.push_back(value.substr(start, end - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return parts;
  }
  return value;
}

struct LoadedConfig {
  ExperimentConfig config;
  nlohmann::json raw;  // file contents merged with overrides, as given
};

/// Loads an optional config file and applies flag overrides on top.
inline LoadedConfig load_experiment_config(const std::optional<fs::path>& file,
                                           const std::map<std::string, std::string>& overrides) {
  nlohmann::json raw = nlohmann::json::object();
  fs::path base = fs::current_path();
  if (file) {
    require(fs::exists(*file), ErrorKind::kMissingFile, "config file not found: " + file->string());
    raw = read_json_file(*file);
    require(raw.is_object(), ErrorKind::kMalformedConfig, file->string() + ": experiment config must be an object");
    base = fs::absolute(*file).parent_path();
  }
  ExperimentConfig cfg = config_from_json(raw, base);
  nlohmann::json merged = to_json(cfg);
  for (const auto& [k, v] : overrides) {
    nlohmann::json parsed = parse_override(k, v);
    raw[k] = parsed;
    if (std::find(config_keys::kPaths.begin(), config_keys::kPaths.end(), k) != config_keys::kPaths.end()) {
      parsed = fs::absolute(v).lexically_normal().string();
    }
    merged[k] = parsed;
  }
  return {config_from_json(merged, fs::current_path()), raw};
}

inline Provenance provenance_for(const LoadedConfig& lc) {
  nlohmann::json hashed = lc.raw;
  for (const auto& k : config_keys::kUnhashed) hashed.erase(k);
  return {config_hash(hashed), lc.config.seed.value_or(0), kToolVersion};
}

// ---------------------------------------------------------------------------

namespace detail {

inline void require_path(const std::string& value, const char* key) {
  require(!value.empty(), ErrorKind::kMalformedConfig, std::string("config is missing '") + key + "'");
  require(fs::exists(value), ErrorKind::kMissingFile, std::string(key) + " not found: " + value);
}

inline std::uint64_t require_seed(const ExperimentConfig& c) {
  require(c.seed.has_value(), ErrorKind::kMalformedConfig, "config is missing 'seed' (seeds must be explicit)");
  return *c.seed;
}

inline Model load_config_model(const ExperimentConfig& c) {
  require_path(c.model_config, "model_config");
  require_path(c.model_weights, "model_weights");
  return load_model(c.model_config, c.model_weights);
}

inline std::vector<std::string> config_templates(const ExperimentConfig& c) {
  if (c.templates.empty()) return default_templates();
  require_path(c.templates, "templates");
  return load_templates(c.templates);
}

inline fs::path data_file(const ExperimentConfig& c, const char* name) {
  const fs::path p = c.data_path() / name;
  require(fs::exists(p), ErrorKind::kMissingFile, std::string(name) + " not found in " + c.data_path().string() +
                                                      " (run gen-dataset first)");
  return p;
}

template <typename T>
std::vector<nlohmann::json> as_json_rows(const std::vector<T>& v) {
  std::vector<nlohmann::json> out;
  out.reserve(v.size());
  for (const auto& x : v) out.emplace_back(x);
  return out;
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t k) { return Rng::derive(seed, k).next(); }

inline std::vector<CounterfactualPair> load_pairs(const ExperimentConfig& c, const Model& model) {
  auto pairs = read_jsonl_as<CounterfactualPair>(data_file(c, "pairs.jsonl"));
  require(!pairs.empty(), ErrorKind::kDataset, "pairs.jsonl holds no pairs");
  if (c.max_pairs > 0 && pairs.size() > c.max_pairs) pairs.resize(c.max_pairs);
  for (const auto& p : pairs) {
    const auto v = pair_violations(p);
    require(v.empty(), ErrorKind::kSchemaMismatch, "pair " + std::to_string(p.id) + ": " + (v.empty() ? "" : v[0]));
    for (TokenId t : p.clean_tokens) {
      require(t < model.config.vocab_size, ErrorKind::kSchemaMismatch,
              "pair " + std::to_string(p.id) + " has token ids outside the model vocabulary");
    }
  }
  return pairs;
}

}  // namespace detail

/// Writes the planted toy world and an experiment config pointing at it.
inline nlohmann::json cmd_make_toy(const ExperimentConfig& c) {
  const fs::path dir = c.output_dir;
  const auto world = planted::planted_world();
  fs::create_directories(dir);
  write_atomic(dir / "tokenizer.json", world.tokenizer.to_json().dump(1) + "\n");
  write_atomic(dir / "model_config.json", nlohmann::json(world.model.config).dump(2) + "\n");
  {
    const fs::path tmp = dir / "model.safetensors.tmp";
    safetensors::write_file(tmp, to_tensors(world.model));
    fs::rename(tmp, dir / "model.safetensors");
  }
  std::string csv = "drug,group\n";
  for (const auto& [drug, groups] : world.dictionary.entries()) {
    for (const auto& g : groups) csv += csv_escape(drug) + "," + csv_escape(g) + "\n";
  }
  write_atomic(dir / "dictionary.csv", csv);
  write_atomic(dir / "templates.json", nlohmann::json(default_templates()).dump(1) + "\n");
  const nlohmann::json experiment = {
      {"model_config", "model_config.json"},
      {"model_weights", "model.safetensors"},
      {"tokenizer", "tokenizer.json"},
      {"dictionary", "dictionary.csv"},
      {"templates", "templates.json"},
      {"output_dir", "."},
      {"seed", c.seed.value_or(20240917)},
      {"n_items", 200},
      {"n_pairs", 24},
      {"radius", 5},
      {"C", 1e-3},
      {"n_folds", 5},
      {"n_per_group", 60},
      {"bos", true},
      {"probe_groups", {"adrenergic alpha agonists", "adrenergic alpha antagonists"}}};
  write_atomic(dir / "experiment.json", experiment.dump(2) + "\n");
  return {{"command", "make-toy"},
          {"status", "ok"},
          {"output_dir", dir.string()},
          {"vocab_size", world.tokenizer.vocab_size()},
          {"n_groups", world.dictionary.n_groups()},
          {"n_drugs", world.dictionary.n_drugs()}};
}

inline nlohmann::json cmd_gen_dataset(const ExperimentConfig& c, const Provenance& prov) {
  const std::uint64_t seed = detail::require_seed(c);
  detail::require_path(c.tokenizer, "tokenizer");
  detail::require_path(c.dictionary, "dictionary");
  const Tokenizer tok = Tokenizer::load(c.tokenizer);
  const DrugDictionary dict = load_dictionary(c.dictionary);
  const auto templates = detail::config_templates(c);
  const fs::path out = c.output_dir;

  auto items = generate_benchmark(dict, templates, c.n_items, detail::substream(seed, 0));
  tokenize_benchmark(items, tok, c.bos);
  write_atomic(out / "benchmark.jsonl", to_jsonl(prov, detail::as_json_rows(items)));

  PairOptions po;
  po.bos = c.bos;
  const auto built = build_counterfactual_pairs(dict, tok, templates, c.n_pairs, detail::substream(seed, 1), po);
  write_atomic(out / "pairs.jsonl", to_jsonl(prov, detail::as_json_rows(built.pairs)));
  write_atomic(out / "pair_rejections.jsonl", to_jsonl(prov, detail::as_json_rows(built.rejections)));

  nlohmann::json summary = {{"command", "gen-dataset"},
                            {"status", "ok"},
                            {"n_items", items.size()},
                            {"n_pairs", built.pairs.size()},
                            {"n_rejections", built.rejections.size()},
                            {"rejection_rate", built.rejection_rate()},
                            {"bos", c.bos}};
  if (!c.probe_groups.empty()) {
    require(c.probe_groups.size() == 2, ErrorKind::kMalformedConfig, "probe_groups must name exactly two groups");
    const auto [pos, neg] = generate_probe_prompts(dict, {c.probe_groups[0], c.probe_groups[1]}, tok, templates,
                                                   c.n_per_group, detail::substream(seed, 2), c.bos);
    std::vector<nlohmann::json> rows = detail::as_json_rows(pos.prompts);
    for (const auto& p : neg.prompts) rows.emplace_back(p);
    write_atomic(out / "probe_prompts.jsonl", to_jsonl(prov, rows));
    summary["n_probe_prompts"] = rows.size();
  }
  summary["provenance"] = prov;
  return summary;
}

inline nlohmann::json cmd_eval(const ExperimentConfig& c, const Provenance& prov) {
  const Model model = detail::load_config_model(c);
  const auto items = read_jsonl_as<TwoChoiceItem>(detail::data_file(c, "benchmark.jsonl"));
  require(!items.empty(), ErrorKind::kDataset, "benchmark.jsonl holds no items");
  const EvalReport rep = evaluate_two_choice(model, items, {c.threads});
  const fs::path out = c.output_dir;
  write_atomic(out / "eval.json", eval_to_json(rep, c.bos, prov).dump(2) + "\n");
  write_atomic(out / "eval_items.csv", eval_items_csv(rep, items, prov));
  return {{"command", "eval"},        {"status", "ok"},         {"accuracy", rep.accuracy},
          {"n_items", items.size()}, {"n_correct", rep.n_correct}, {"provenance", prov}};
}

inline nlohmann::json run_patch_command(const ExperimentConfig& c, const Provenance& prov, GridKind kind) {
  const Model model = detail::load_config_model(c);
  const auto pairs = detail::load_pairs(c, model);
  const fs::path out = fs::path(c.output_dir) / (kind == GridKind::kResidPre ? "patch_resid" : "patch_mlp");
  std::vector<PatchGrid> grids;
  std::vector<std::vector<std::string>> roles;
  std::size_t invalid_pairs = 0;
  for (const auto& pair : pairs) {
    const PairRun run = run_pair(model, pair);
    PatchGrid g = kind == GridKind::kResidPre ? patch_resid_grid(model, pair, run, {c.threads})
                                              : patch_mlp_window_grid(model, pair, run, c.radius, {c.threads});
    if (!run.measured.valid()) ++invalid_pairs;
    const std::string stem = "pair_" + std::to_string(pair.id);
    write_atomic(out / (stem + ".json"), grid_to_json(g, pair, prov).dump() + "\n");
    write_atomic(out / (stem + ".csv"), grid_to_csv(g, pair.roles, prov));
    grids.push_back(std::move(g));
    roles.push_back(pair.roles);
  }
  const auto [agg, summary] = aggregate_grids(grids, roles);
  nlohmann::json agg_json = aggregate_to_json(agg, prov);
  if (kind == GridKind::kMlpWindow) agg_json["radius"] = c.radius;
  write_atomic(out / "aggregate.json", agg_json.dump() + "\n");
  write_atomic(out / "aggregate.csv", aggregate_to_csv(agg, prov));
  nlohmann::json sj = summary_to_json(summary, kind, prov);
  if (kind == GridKind::kMlpWindow) sj["radius"] = c.radius;
  write_atomic(out / "summary.json", sj.dump(2) + "\n");
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"command", kind == GridKind::kResidPre ? "patch-resid" : "patch-mlp"},
          {"status", "ok"},
          {"n_pairs", pairs.size()},
          {"invalid_pairs", invalid_pairs},
          {"avg_max_span", opt(summary.avg_max_span)},
          {"avg_max_final", opt(summary.avg_max_final)},
          {"provenance", prov}};
}

inline nlohmann::json cmd_patch_resid(const ExperimentConfig& c, const Provenance& prov) {
  return run_patch_command(c, prov, GridKind::kResidPre);
}

inline nlohmann::json cmd_patch_mlp(const ExperimentConfig& c, const Provenance& prov) {
  return run_patch_command(c, prov, GridKind::kMlpWindow);
}

inline nlohmann::json cmd_probe(const ExperimentConfig& c, const Provenance& prov) {
  const std::uint64_t seed = detail::require_seed(c);
  const Model model = detail::load_config_model(c);
  const auto prompts = read_jsonl_as<ProbePrompt>(detail::data_file(c, "probe_prompts.jsonl"));
  ProbePromptSet pos, neg;
  pos.label = 1;
  neg.label = 0;
  for (const auto& p : prompts) {
    require(p.label == 0 || p.label == 1, ErrorKind::kSchemaMismatch, "probe prompt labels must be 0 or 1");
    ProbePromptSet& set = p.label == 1 ? pos : neg;
    if (set.prompts.empty()) set.group = p.group;
    require(p.group == set.group, ErrorKind::kSchemaMismatch, "probe prompts mix groups within one label");
    set.prompts.push_back(p);
  }
  require(!pos.prompts.empty() && !neg.prompts.empty(), ErrorKind::kDataset,
          "probe_prompts.jsonl must hold prompts for both labels");
  SweepOptions so;
  if (c.layers.empty()) {
    so.layers = all_probe_layers(model.config);
  } else {
    for (const auto& l : c.layers) so.layers.push_back(ProbeLayer::parse(l));
  }
  so.token_offset = c.token_offset;
  ProbeConfig pc;
  pc.C = c.C;
  pc.n_folds = c.n_folds;
  pc.seed = detail::substream(seed, 3);
  const ProbeReport rep = run_probe_sweep(model, pos, neg, so, pc);
  const fs::path out = c.output_dir;
  write_atomic(out / "probe_report.json", probe_report_to_json(rep, prov).dump(2) + "\n");
  write_atomic(out / "probe_report.csv", probe_report_to_csv(rep, prov));
  double best = 0.0;
  std::string best_at;
  for (const auto& r : rep.results) {
    if (r.test_accuracy.mean > best || best_at.empty()) {
      best = r.test_accuracy.mean;
      best_at = r.layer.name() + "/" + to_string(r.mode);
    }
  }
  return {{"command", "probe"},
          {"status", "ok"},
          {"positive_group", rep.positive_group},
          {"negative_group", rep.negative_group},
          {"n_results", rep.results.size()},
          {"best_test_accuracy", best},
          {"best_at", best_at},
          {"provenance", prov}};
}

/// Renders a grid, aggregate or probe report JSON file to SVG.
inline nlohmann::json cmd_render(const ExperimentConfig& c) {
  detail::require_path(c.input, "input");
  const nlohmann::json doc = read_json_file(c.input);
  require(doc.is_object() && doc.contains("type"), ErrorKind::kSchemaMismatch,
          c.input + ": not a drugloc report (no 'type' field)");
  Provenance prov;
  if (doc.contains("provenance")) {
    try {
      prov = doc.at("provenance").get<Provenance>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, c.input + ": bad provenance: " + e.what());
    }
  }
  const std::string type = doc.at("type").is_string() ? doc.at("type").get<std::string>() : "";
  std::string svg_text;
  if (type == "probe_report") {
    svg_text = render_probe_curve_svg(doc, prov);
  } else {
    svg_text = render_heatmap_svg(heatmap_from_json(doc), prov);
  }
  fs::path out = c.output;
  if (out.empty()) out = fs::path(c.input).replace_extension(".svg");
  write_atomic(out, svg_text);
  return {{"command", "render"}, {"status", "ok"}, {"input", c.input}, {"output", out.string()}, {"type", type}};
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"make-toy", "gen-dataset", "eval", "patch-resid",
                                                 "patch-mlp", "probe",       "render"};
  return names;
}

inline nlohmann::json run_command(const std::string& name, const LoadedConfig& lc) {
  const ExperimentConfig& c = lc.config;
  const Provenance prov = provenance_for(lc);
  if (name == "make-toy") return cmd_make_toy(c);
  if (name == "gen-dataset") return cmd_gen_dataset(c, prov);
  if (name == "eval") return cmd_eval(c, prov);
  if (name == "patch-resid") return cmd_patch_resid(c, prov);
  if (name == "patch-mlp") return cmd_patch_mlp(c, prov);
  if (name == "probe") return cmd_probe(c, prov);
  if (name == "render") return cmd_render(c);
  fail(ErrorKind::kInvalidArgument, "unknown command '" + name + "'");
}

}  // namespace drugloc
