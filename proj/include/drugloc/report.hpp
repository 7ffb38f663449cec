// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Output files: provenance, atomic writes, JSON-lines, grid and probe
// tables, and SVG rendering of patch heatmaps and probe curves.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "drugloc/error.hpp"
#include "drugloc/patching.hpp"
#include "drugloc/probe.hpp"

namespace drugloc {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Provenance

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;

  bool operator==(const Provenance&) const = default;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical (key-sorted, compact) JSON form of a config.
inline std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

inline void to_json(nlohmann::json& j, const Provenance& p) {
  j = {{"config_hash", p.config_hash}, {"seed", p.seed}, {"tool_version", p.tool_version}};
}
inline void from_json(const nlohmann::json& j, Provenance& p) {
  p.config_hash = j.at("config_hash").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.tool_version = j.at("tool_version").get<std::string>();
}

// ---------------------------------------------------------------------------
// Files

/// Writes through a sibling temp file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write " + tmp.string());
    out << content;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::kMissingFile, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail(ErrorKind::kMissingFile, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline constexpr const char* kProvenanceKey = "__provenance__";

/// One JSON object per line; the first line carries provenance.
inline std::string to_jsonl(const Provenance& prov, const std::vector<nlohmann::json>& rows) {
  std::string out = nlohmann::json{{kProvenanceKey, prov}}.dump() + "\n";
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

struct JsonLines {
  std::optional<Provenance> provenance;
  std::vector<nlohmann::json> rows;
};

inline JsonLines read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "cannot open " + path.string());
  JsonLines out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, path.string() + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    require(j.is_object(), ErrorKind::kSchemaMismatch,
            path.string() + ":" + std::to_string(lineno) + ": expected a JSON object");
    if (j.contains(kProvenanceKey)) {
      try {
        out.provenance = j.at(kProvenanceKey).get<Provenance>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kSchemaMismatch, path.string() + ": bad provenance line: " + e.what());
      }
      continue;
    }
    out.rows.push_back(std::move(j));
  }
  return out;
}

/// Converts every row of a JSON-lines file, mapping field errors to
/// schema-mismatch errors that name the line.
template <typename T>
std::vector<T> read_jsonl_as(const std::filesystem::path& path) {
  const JsonLines lines = read_jsonl(path);
  std::vector<T> out;
  out.reserve(lines.rows.size());
  for (std::size_t i = 0; i < lines.rows.size(); ++i) {
    try {
      out.push_back(lines.rows[i].get<T>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kSchemaMismatch, path.string() + ": record " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kSchemaMismatch, path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

inline std::string csv_provenance_line(const Provenance& prov) {
  return "# provenance: " + nlohmann::json(prov).dump() + "\n";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Shortest decimal text that round-trips a double.
inline std::string fmt_num(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Patch grids

inline nlohmann::json measured_json(const MeasuredRun& m) {
  return {{"ld_clean", m.ld_clean},
          {"ld_star", m.ld_star},
          {"correct_token", m.correct_token},
          {"incorrect_token", m.incorrect_token},
          {"valid", m.valid()}};
}

inline nlohmann::json grid_to_json(const PatchGrid& g, const CounterfactualPair& pair, const Provenance& prov) {
  nlohmann::json metric = nlohmann::json::array(), ld = nlohmann::json::array();
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    nlohmann::json mrow = nlohmann::json::array(), lrow = nlohmann::json::array();
    for (std::size_t p = 0; p < g.seq_len; ++p) {
      const auto& c = g.at(l, p);
      mrow.push_back(c.metric ? nlohmann::json(*c.metric) : nlohmann::json(nullptr));
      lrow.push_back(c.ld_pt);
    }
    metric.push_back(std::move(mrow));
    ld.push_back(std::move(lrow));
  }
  return {{"type", "patch_grid"},
          {"provenance", prov},
          {"kind", to_string(g.kind)},
          {"tag", g.tag},
          {"n_layers", g.n_layers},
          {"seq_len", g.seq_len},
          {"radius", g.radius},
          {"pair",
           {{"id", pair.id},
            {"clean_group", pair.clean_group},
            {"corrupt_group", pair.corrupt_group},
            {"option_a", pair.option_a},
            {"option_b", pair.option_b},
            {"correct_clean", std::string(1, letter(pair.correct_clean))},
            {"group_span", pair.group_span},
            {"template_id", pair.template_id}}},
          {"measured", measured_json(g.measured)},
          {"roles", pair.roles},
          {"invalid_cells", g.invalid_count()},
          {"metric", std::move(metric)},
          {"ld_pt", std::move(ld)}};
}

inline std::string grid_to_csv(const PatchGrid& g, const std::vector<std::string>& roles, const Provenance& prov) {
  require(roles.size() == g.seq_len, ErrorKind::kSchemaMismatch, "grid_to_csv: role count does not match grid");
  std::string out = csv_provenance_line(prov) + "layer,position,role,metric,valid,ld_pt\n";
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t p = 0; p < g.seq_len; ++p) {
      const auto& c = g.at(l, p);
      out += std::to_string(l) + "," + std::to_string(p) + "," + csv_escape(roles[p]) + "," +
             (c.metric ? fmt_num(*c.metric) : std::string()) + "," + (c.metric ? "1" : "0") + "," + fmt_num(c.ld_pt) +
             "\n";
    }
  }
  return out;
}

inline nlohmann::json aggregate_to_json(const AggregateGrid& a, const Provenance& prov) {
  nlohmann::json metric = nlohmann::json::array(), count = nlohmann::json::array();
  for (std::size_t l = 0; l < a.n_layers; ++l) {
    nlohmann::json mrow = nlohmann::json::array(), crow = nlohmann::json::array();
    for (std::size_t r = 0; r < a.roles.size(); ++r) {
      const auto v = a.at(l, r);
      mrow.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
      crow.push_back(a.count[l * a.roles.size() + r]);
    }
    metric.push_back(std::move(mrow));
    count.push_back(std::move(crow));
  }
  return {{"type", "aggregate_grid"},
          {"provenance", prov},
          {"kind", to_string(a.kind)},
          {"tag", "aggregate"},
          {"n_layers", a.n_layers},
          {"seq_len", a.roles.size()},
          {"n_grids", a.n_grids},
          {"invalid_cells", a.invalid_cells},
          {"roles", a.roles},
          {"metric", std::move(metric)},
          {"count", std::move(count)}};
}

inline nlohmann::json summary_to_json(const AggregateSummary& s, GridKind kind, const Provenance& prov) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"type", "patch_summary"},
          {"provenance", prov},
          {"kind", to_string(kind)},
          {"avg_max_span", opt(s.avg_max_span)},
          {"avg_max_final", opt(s.avg_max_final)},
          {"pairs_used_span", s.pairs_used_span},
          {"pairs_used_final", s.pairs_used_final},
          {"invalid_cells", s.invalid_cells}};
}

inline std::string aggregate_to_csv(const AggregateGrid& a, const Provenance& prov) {
  std::string out = csv_provenance_line(prov) + "layer,role,metric,valid,count\n";
  for (std::size_t l = 0; l < a.n_layers; ++l) {
    for (std::size_t r = 0; r < a.roles.size(); ++r) {
      const auto v = a.at(l, r);
      out += std::to_string(l) + "," + csv_escape(a.roles[r]) + "," + (v ? fmt_num(*v) : std::string()) + "," +
             (v ? "1" : "0") + "," + std::to_string(a.count[l * a.roles.size() + r]) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline nlohmann::json eval_to_json(const EvalReport& r, bool bos, const Provenance& prov) {
  std::size_t ties = 0;
  for (const auto& it : r.items) ties += it.predicted ? 0 : 1;
  return {{"type", "eval_report"},  {"provenance", prov},   {"accuracy", r.accuracy},
          {"n_correct", r.n_correct}, {"n_items", r.items.size()}, {"ties", ties},
          {"bos", bos}};
}

inline std::string eval_items_csv(const EvalReport& r, const std::vector<TwoChoiceItem>& items,
                                  const Provenance& prov) {
  std::string out = csv_provenance_line(prov) + "index,group,correct,predicted,logit_a,logit_b,logit_diff,is_correct\n";
  for (const auto& rec : r.items) {
    const auto& it = items[rec.index];
    out += std::to_string(rec.index) + "," + csv_escape(it.group) + "," + letter(it.correct) + "," +
           (rec.predicted ? std::string(1, letter(*rec.predicted)) : std::string("tie")) + "," +
           fmt_num(rec.logit_a) + "," + fmt_num(rec.logit_b) + "," + fmt_num(rec.logit_diff) + "," +
           (rec.correct ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe reports

inline nlohmann::json mean_std_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
}

inline nlohmann::json probe_report_to_json(const ProbeReport& r, const Provenance& prov) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& res : r.results) {
    rows.push_back({{"layer", res.layer.name()},
                    {"mode", to_string(res.mode)},
                    {"strategy", to_string(res.strategy)},
                    {"n_examples", res.n_examples},
                    {"test_accuracy", mean_std_json(res.test_accuracy)},
                    {"train_accuracy", mean_std_json(res.train_accuracy)},
                    {"test_f1", mean_std_json(res.test_f1)},
                    {"train_f1", mean_std_json(res.train_f1)},
                    {"test_roc_auc", mean_std_json(res.test_auc)},
                    {"train_roc_auc", mean_std_json(res.train_auc)},
                    {"unconverged_folds", res.unconverged_folds}});
  }
  return {{"type", "probe_report"},
          {"provenance", prov},
          {"positive_group", r.positive_group},
          {"negative_group", r.negative_group},
          {"C", r.config.C},
          {"n_folds", r.config.n_folds},
          {"tolerance", r.config.tolerance},
          {"max_iterations", r.config.max_iterations},
          {"standardized", false},
          {"std_ddof", 0},
          {"token_offset", r.token_offset ? nlohmann::json(*r.token_offset) : nlohmann::json(nullptr)},
          {"results", std::move(rows)}};
}

inline std::string probe_report_to_csv(const ProbeReport& r, const Provenance& prov) {
  std::string out = csv_provenance_line(prov) +
                    "layer,mode,strategy,n_examples,"
                    "test_accuracy_mean,test_accuracy_std,train_accuracy_mean,train_accuracy_std,"
                    "test_f1_mean,test_f1_std,train_f1_mean,train_f1_std,"
                    "test_roc_auc_mean,test_roc_auc_std,train_roc_auc_mean,train_roc_auc_std\n";
  auto ms = [](const MeanStd& m) {
    if (m.n == 0) return std::string(",");
    return fmt_num(m.mean) + "," + fmt_num(m.std);
  };
  for (const auto& res : r.results) {
    out += res.layer.name() + "," + to_string(res.mode) + "," + to_string(res.strategy) + "," +
           std::to_string(res.n_examples) + "," + ms(res.test_accuracy) + "," + ms(res.train_accuracy) + "," +
           ms(res.test_f1) + "," + ms(res.train_f1) + "," + ms(res.test_auc) + "," + ms(res.train_auc) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace svg {

struct Rgb {
  int r, g, b;
};

inline constexpr Rgb kNegative{0x21, 0x66, 0xac};
inline constexpr Rgb kNeutral{0xf7, 0xf7, 0xf7};
inline constexpr Rgb kPositive{0xb2, 0x18, 0x2b};

inline std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

/// Diverging scale on [-1, 1], clamped, white at 0.
inline std::string color_for(double v) {
  v = std::clamp(v, -1.0, 1.0);
  const Rgb end = v >= 0 ? kPositive : kNegative;
  const double t = std::abs(v);
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  return hex({mix(kNeutral.r, end.r), mix(kNeutral.g, end.g), mix(kNeutral.b, end.b)});
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string comment(const Provenance& prov) {
  return "<!-- provenance: " + nlohmann::json(prov).dump() + " -->\n";
}

}  // namespace svg

struct Heatmap {
  std::string title;
  std::size_t n_layers = 0;
  std::vector<std::string> columns;            // role labels along x
  std::vector<std::optional<double>> values;   // [layer][column]
};

/// Layer x position heatmap; layer 0 at the bottom. Invalid cells are drawn
/// unfilled and out-of-range values carry a marker.
inline std::string render_heatmap_svg(const Heatmap& h, const Provenance& prov) {
  require(h.values.size() == h.n_layers * h.columns.size(), ErrorKind::kSchemaMismatch,
          "render_heatmap_svg: value count does not match layers x columns");
  constexpr int kCell = 22, kLeft = 60, kTop = 40, kBottom = 110, kLegend = 90;
  const int width = kLeft + static_cast<int>(h.columns.size()) * kCell + kLegend;
  const int height = kTop + static_cast<int>(h.n_layers) * kCell + kBottom;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << svg::comment(prov);
  s << "<text x=\"" << kLeft << "\" y=\"20\" font-size=\"13\">" << svg::escape(h.title) << "</text>\n";
  for (std::size_t l = 0; l < h.n_layers; ++l) {
    const int y = kTop + static_cast<int>(h.n_layers - 1 - l) * kCell;
    s << "<text class=\"ylabel\" x=\"" << kLeft - 6 << "\" y=\"" << y + kCell / 2 + 4
      << "\" text-anchor=\"end\">" << l << "</text>\n";
    for (std::size_t c = 0; c < h.columns.size(); ++c) {
      const int x = kLeft + static_cast<int>(c) * kCell;
      const auto& v = h.values[l * h.columns.size() + c];
      if (!v) {
        s << "<rect class=\"invalid\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\""
          << kCell << "\" fill=\"none\" stroke=\"#999999\" stroke-dasharray=\"2,2\"/>\n";
        continue;
      }
      s << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kCell
        << "\" fill=\"" << svg::color_for(*v) << "\" data-layer=\"" << l << "\" data-position=\"" << c
        << "\" data-value=\"" << fmt_num(*v) << "\"/>\n";
      if (*v < -1.0 || *v > 1.0) {
        s << "<circle class=\"oor\" cx=\"" << x + kCell / 2 << "\" cy=\"" << y + kCell / 2
          << "\" r=\"3\" fill=\"#000000\"/>\n";
      }
    }
  }
  const int axis_y = kTop + static_cast<int>(h.n_layers) * kCell;
  for (std::size_t c = 0; c < h.columns.size(); ++c) {
    const int x = kLeft + static_cast<int>(c) * kCell + kCell / 2;
    s << "<text class=\"xlabel\" transform=\"translate(" << x << "," << axis_y + 8
      << ") rotate(60)\">" << svg::escape(h.columns[c]) << "</text>\n";
  }
  s << "<text x=\"14\" y=\"" << kTop + static_cast<int>(h.n_layers) * kCell / 2
    << "\" transform=\"rotate(-90 14," << kTop + static_cast<int>(h.n_layers) * kCell / 2
    << ")\" text-anchor=\"middle\">layer</text>\n";
  // Legend: -1 at the bottom, +1 at the top.
  const int lx = kLeft + static_cast<int>(h.columns.size()) * kCell + 20;
  constexpr int kSteps = 20, kStepH = 5;
  for (int i = 0; i <= kSteps; ++i) {
    const double v = 1.0 - 2.0 * i / kSteps;
    s << "<rect class=\"legend\" x=\"" << lx << "\" y=\"" << kTop + i * kStepH << "\" width=\"12\" height=\""
      << kStepH << "\" fill=\"" << svg::color_for(v) << "\"/>\n";
  }
  s << "<text x=\"" << lx + 16 << "\" y=\"" << kTop + 6 << "\">1</text>\n";
  s << "<text x=\"" << lx + 16 << "\" y=\"" << kTop + kSteps * kStepH / 2 + 4 << "\">0</text>\n";
  s << "<text x=\"" << lx + 16 << "\" y=\"" << kTop + kSteps * kStepH + 4 << "\">-1</text>\n";
  s << "</svg>\n";
  return s.str();
}

/// Heatmap from a grid or aggregate JSON document.
inline Heatmap heatmap_from_json(const nlohmann::json& j) {
  Heatmap h;
  try {
    const std::string type = j.at("type").get<std::string>();
    require(type == "patch_grid" || type == "aggregate_grid", ErrorKind::kSchemaMismatch,
            "heatmap: unsupported document type '" + type + "'");
    h.n_layers = j.at("n_layers").get<std::size_t>();
    h.columns = j.at("roles").get<std::vector<std::string>>();
    h.title = j.at("kind").get<std::string>() + " " + j.value("tag", std::string());
    const auto& m = j.at("metric");
    require(m.is_array() && m.size() == h.n_layers, ErrorKind::kSchemaMismatch, "heatmap: metric rows != n_layers");
    for (const auto& row : m) {
      require(row.is_array() && row.size() == h.columns.size(), ErrorKind::kSchemaMismatch,
              "heatmap: metric row length != number of roles");
      for (const auto& v : row) {
        h.values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchemaMismatch, std::string("heatmap: ") + e.what());
  }
  return h;
}

/// Per-layer test (solid) and train (dashed) accuracy for each feature mode.
inline std::string render_probe_curve_svg(const nlohmann::json& report, const Provenance& prov) {
  struct Series {
    std::string mode;
    std::vector<double> test, train;
  };
  std::vector<std::string> layers;
  std::vector<Series> series;
  std::string title;
  try {
    require(report.at("type").get<std::string>() == "probe_report", ErrorKind::kSchemaMismatch,
            "probe curve: not a probe report");
    title = report.at("positive_group").get<std::string>() + " vs " + report.at("negative_group").get<std::string>();
    for (const auto& r : report.at("results")) {
      const auto layer = r.at("layer").get<std::string>();
      const auto mode = r.at("mode").get<std::string>();
      if (std::find(layers.begin(), layers.end(), layer) == layers.end()) layers.push_back(layer);
      auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.mode == mode; });
      if (it == series.end()) {
        series.push_back({mode, {}, {}});
        it = series.end() - 1;
      }
      it->test.push_back(r.at("test_accuracy").at("mean").get<double>());
      it->train.push_back(r.at("train_accuracy").at("mean").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchemaMismatch, std::string("probe curve: ") + e.what());
  }
  for (const auto& s : series) {
    require(s.test.size() == layers.size(), ErrorKind::kSchemaMismatch,
            "probe curve: mode '" + s.mode + "' does not cover every layer");
  }
  constexpr int kLeft = 50, kTop = 40, kW = 420, kH = 220;
  const std::array<const char*, 4> colors = {"#b2182b", "#2166ac", "#1b7837", "#762a83"};
  auto px = [&](std::size_t i) {
    return kLeft + (layers.size() > 1 ? static_cast<double>(i) * kW / static_cast<double>(layers.size() - 1) : kW / 2.0);
  };
  auto py = [&](double v) { return kTop + (1.0 - std::clamp(v, 0.0, 1.0)) * kH; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kW + 140 << "\" height=\"" << kTop + kH + 50
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << svg::comment(prov);
  s << "<text x=\"" << kLeft << "\" y=\"20\" font-size=\"13\">" << svg::escape(title) << "</text>\n";
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW << "\" height=\"" << kH
    << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  for (double v : {0.0, 0.5, 1.0}) {
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt_num(py(v) + 3) << "\" text-anchor=\"end\">" << fmt_num(v)
      << "</text>\n";
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    s << "<text class=\"xlabel\" x=\"" << fmt_num(px(i)) << "\" y=\"" << kTop + kH + 14 << "\" text-anchor=\"middle\">"
      << svg::escape(layers[i]) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % colors.size()];
    for (int pass = 0; pass < 2; ++pass) {
      const auto& ys = pass == 0 ? series[k].test : series[k].train;
      s << "<polyline class=\"" << (pass == 0 ? "test" : "train") << "\" data-mode=\"" << svg::escape(series[k].mode)
        << "\" fill=\"none\" stroke=\"" << color << "\"" << (pass == 1 ? " stroke-dasharray=\"4,3\"" : "")
        << " points=\"";
      for (std::size_t i = 0; i < ys.size(); ++i) s << (i ? " " : "") << fmt_num(px(i)) << "," << fmt_num(py(ys[i]));
      s << "\"/>\n";
    }
    s << "<text x=\"" << kLeft + kW + 10 << "\" y=\"" << kTop + 12 + 14 * static_cast<int>(k) << "\" fill=\"" << color
      << "\">" << svg::escape(series[k].mode) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace drugloc
