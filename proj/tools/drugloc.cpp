// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "drugloc/commands.hpp"

namespace {

struct FlagSpec {
  const char* key;
  const char* help;
};

constexpr FlagSpec kFlags[] = {
    {"model_config", "model config JSON"},
    {"model_weights", "safetensors file or directory of shards"},
    {"tokenizer", "tokenizer JSON"},
    {"dictionary", "drug,group CSV or JSON dictionary"},
    {"templates", "JSON list of question templates with {group}"},
    {"output_dir", "directory for outputs"},
    {"data_dir", "directory holding dataset files (default: output_dir)"},
    {"seed", "random seed"},
    {"n_items", "benchmark size"},
    {"n_pairs", "number of counterfactual pairs"},
    {"max_pairs", "patch at most this many pairs (0: all)"},
    {"radius", "MLP window radius"},
    {"C", "inverse L2 strength of the probe"},
    {"n_folds", "cross-validation folds"},
    {"n_per_group", "probe prompts per group"},
    {"bos", "prepend the BOS token (true/false)"},
    {"probe_groups", "positive|negative group names"},
    {"layers", "probe layers, e.g. pre0,0,1 (default: all)"},
    {"token_offset", "restrict token probes to this span offset"},
    {"threads", "worker threads (0: all cores)"},
    {"input", "render: input JSON"},
    {"output", "render: output SVG"},
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& ch : s) {
    if (ch == '_') ch = '-';
  }
  return "--" + s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drugloc: localize drug-group knowledge in Llama-style models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", drugloc::kToolVersion);

  std::optional<std::string> config_file;
  std::map<std::string, std::map<std::string, std::string>> values;
  for (const auto& name : drugloc::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option_function<std::string>(
        "--config", [&](const std::string& v) { config_file = v; }, "experiment config JSON");
    for (const auto& f : kFlags) {
      sub->add_option_function<std::string>(
          flag_name(f.key), [&values, name, key = std::string(f.key)](const std::string& v) { values[name][key] = v; },
          f.help);
    }
  }

  std::string command;
  try {
    app.parse(argc, argv);
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : drugloc::exit_code_for(drugloc::ErrorKind::kInvalidArgument);
  }

  try {
    std::optional<std::filesystem::path> file;
    if (config_file) file = *config_file;
    const auto lc = drugloc::load_experiment_config(file, values[command]);
    std::cout << drugloc::run_command(command, lc).dump() << std::endl;
    return 0;
  } catch (const drugloc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::cout << nlohmann::json{{"command", command},
                                {"status", "error"},
                                {"error", drugloc::to_string(e.kind())},
                                {"message", e.what()}}
                     .dump()
              << std::endl;
    return drugloc::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::cout << nlohmann::json{{"command", command}, {"status", "error"}, {"error", "internal"}, {"message", e.what()}}
                     .dump()
              << std::endl;
    return 1;
  }
}
