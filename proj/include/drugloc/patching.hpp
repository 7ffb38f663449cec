// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Activation patching over counterfactual pairs: clean, counterfactual and
// patched runs, the normalized logit-difference metric, residual-stream and
// windowed-MLP grids, aggregation by token role, and two-choice evaluation.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "drugloc/dataset.hpp"
#include "drugloc/error.hpp"
#include "drugloc/model.hpp"

namespace drugloc {

inline constexpr double kMetricEpsilon = 1e-6;

/// (ld_pt - ld_star) / (ld_cl - ld_star); nullopt when the denominator is
/// below kMetricEpsilon in magnitude.
inline std::optional<double> normalized_metric(double ld_pt, double ld_cl, double ld_star) {
  require(std::isfinite(ld_pt) && std::isfinite(ld_cl) && std::isfinite(ld_star), ErrorKind::kNumerical,
          "normalized_metric: non-finite input");
  const double den = ld_cl - ld_star;
  if (std::abs(den) < kMetricEpsilon) return std::nullopt;
  return (ld_pt - ld_star) / den;
}

struct MeasuredRun {
  double ld_clean = 0.0;
  double ld_star = 0.0;
  TokenId correct_token = 0;    // clean-correct answer
  TokenId incorrect_token = 0;  // clean-incorrect answer

  bool valid() const { return std::abs(ld_clean - ld_star) >= kMetricEpsilon; }
};

struct PairRun {
  MeasuredRun measured;
  ActivationCache clean_cache;
  ActivationCache corrupt_cache;
};

/// Clean and counterfactual passes. Both logit differences use the clean
/// answer ordering, so a flipped answer gives a negative ld_star.
inline PairRun run_pair(const Model& model, const CounterfactualPair& pair) {
  const auto sites = all_patch_sites(model.config);
  require(pair.clean_tokens.size() == pair.corrupt_tokens.size(), ErrorKind::kInvalidArgument,
          "run_pair: clean and counterfactual token lengths differ");
  RunOutput clean = forward(model, pair.clean_tokens, sites);
  RunOutput corrupt = forward(model, pair.corrupt_tokens, sites);
  PairRun r{{}, std::move(*clean.cache), std::move(*corrupt.cache)};
  r.measured.correct_token = pair.correct_token();
  r.measured.incorrect_token = pair.incorrect_token();
  r.measured.ld_clean = logit_diff(clean, r.measured.correct_token, r.measured.incorrect_token);
  r.measured.ld_star = logit_diff(corrupt, r.measured.correct_token, r.measured.incorrect_token);
  return r;
}

/// Rows `positions` of a cached activation.
inline Matrix gather_rows(const Matrix& act, const std::vector<std::size_t>& positions) {
  Matrix out(positions.size(), act.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    std::copy(act.row(positions[i]).begin(), act.row(positions[i]).end(), out.row(i).begin());
  }
  return out;
}

inline Intervention patch_from(const ActivationCache& source, HookSite site, std::vector<std::size_t> positions) {
  Matrix rows = gather_rows(source.at(site), positions);
  return {site, std::move(positions), std::move(rows)};
}

struct PatchResult {
  double ld_pt = 0.0;
  std::optional<double> metric;
};

/// Counterfactual tokens run with `interventions`, scored against `run`.
inline PatchResult patched_metric(const Model& model, const CounterfactualPair& pair, const MeasuredRun& run,
                                  std::span<const Intervention> interventions) {
  const RunOutput out = forward(model, pair.corrupt_tokens, {}, interventions);
  PatchResult r;
  r.ld_pt = logit_diff(out, run.correct_token, run.incorrect_token);
  r.metric = normalized_metric(r.ld_pt, run.ld_clean, run.ld_star);
  return r;
}

enum class GridKind : std::uint8_t { kResidPre, kMlpWindow };

inline const char* to_string(GridKind k) { return k == GridKind::kResidPre ? "resid_pre" : "mlp_window"; }

struct PatchCell {
  std::optional<double> metric;
  double ld_pt = 0.0;
};

struct PatchGrid {
  GridKind kind = GridKind::kResidPre;
  std::size_t n_layers = 0;
  std::size_t seq_len = 0;
  std::size_t radius = 0;  // mlp_window only
  std::string tag;         // pair id or aggregate tag
  MeasuredRun measured;
  std::vector<PatchCell> cells;  // row-major [layer][position]

  PatchCell& at(std::size_t layer, std::size_t pos) { return cells[layer * seq_len + pos]; }
  const PatchCell& at(std::size_t layer, std::size_t pos) const { return cells[layer * seq_len + pos]; }

  std::size_t invalid_count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const PatchCell& c) { return !c.metric; }));
  }
};

struct GridOptions {
  std::size_t threads = 1;  // 0 = hardware concurrency
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
/// only its own output slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline PatchGrid empty_grid(GridKind kind, const Model& model, const CounterfactualPair& pair, const MeasuredRun& m) {
  PatchGrid g;
  g.kind = kind;
  g.n_layers = model.config.n_layers;
  g.seq_len = pair.corrupt_tokens.size();
  g.tag = "pair-" + std::to_string(pair.id);
  g.measured = m;
  g.cells.resize(g.n_layers * g.seq_len);
  return g;
}

}  // namespace detail

/// One cell per (layer, position): the counterfactual run with resid_pre at
/// that layer and position replaced from the clean cache. Every cell is
/// flagged invalid when the pair's denominator is degenerate.
inline PatchGrid patch_resid_grid(const Model& model, const CounterfactualPair& pair, const PairRun& run,
                                  const GridOptions& opts = {}) {
  PatchGrid g = detail::empty_grid(GridKind::kResidPre, model, pair, run.measured);
  if (!run.measured.valid()) return g;
  detail::parallel_for(g.cells.size(), opts.threads, [&](std::size_t idx) {
    const std::size_t layer = idx / g.seq_len, pos = idx % g.seq_len;
    const Intervention iv = patch_from(run.clean_cache, HookSite::resid_pre(layer), {pos});
    const PatchResult r = patched_metric(model, pair, run.measured, std::span(&iv, 1));
    g.cells[idx] = {r.metric, r.ld_pt};
  });
  return g;
}

inline PatchGrid patch_resid_grid(const Model& model, const CounterfactualPair& pair, const GridOptions& opts = {}) {
  return patch_resid_grid(model, pair, run_pair(model, pair), opts);
}

/// Whole-span resid_pre patch at one layer (all group-span positions jointly).
inline PatchResult patch_resid_span(const Model& model, const CounterfactualPair& pair, const PairRun& run,
                                    std::size_t layer) {
  std::vector<std::size_t> positions;
  for (std::size_t p = pair.group_span.start; p < pair.group_span.end; ++p) positions.push_back(p);
  const Intervention iv = patch_from(run.clean_cache, HookSite::resid_pre(layer), positions);
  return patched_metric(model, pair, run.measured, std::span(&iv, 1));
}

/// Inclusive layer window [center - radius, center + radius], clipped to the model.
inline std::pair<std::size_t, std::size_t> mlp_window(std::size_t center, std::size_t radius, std::size_t n_layers) {
  require(center < n_layers, ErrorKind::kInvalidArgument, "mlp_window: center layer out of range");
  const std::size_t lo = center >= radius ? center - radius : 0;
  const std::size_t hi = std::min(n_layers - 1, center + radius);
  return {lo, hi};
}

/// Cell (L, p): mlp_out at every layer of the window around L replaced at
/// position p from the clean cache.
inline PatchGrid patch_mlp_window_grid(const Model& model, const CounterfactualPair& pair, const PairRun& run,
                                       std::size_t radius = 5, const GridOptions& opts = {}) {
  PatchGrid g = detail::empty_grid(GridKind::kMlpWindow, model, pair, run.measured);
  g.radius = radius;
  if (!run.measured.valid()) return g;
  detail::parallel_for(g.cells.size(), opts.threads, [&](std::size_t idx) {
    const std::size_t center = idx / g.seq_len, pos = idx % g.seq_len;
    const auto [lo, hi] = mlp_window(center, radius, g.n_layers);
    std::vector<Intervention> ivs;
    for (std::size_t l = lo; l <= hi; ++l) ivs.push_back(patch_from(run.clean_cache, HookSite::mlp_out(l), {pos}));
    const PatchResult r = patched_metric(model, pair, run.measured, ivs);
    g.cells[idx] = {r.metric, r.ld_pt};
  });
  return g;
}

inline PatchGrid patch_mlp_window_grid(const Model& model, const CounterfactualPair& pair, std::size_t radius = 5,
                                       const GridOptions& opts = {}) {
  return patch_mlp_window_grid(model, pair, run_pair(model, pair), radius, opts);
}

// ---------------------------------------------------------------------------
// Aggregation

/// Column order for role-aggregated grids.
inline int role_rank(const std::string& role) {
  if (role == "bos") return 0;
  if (role == "question") return 1;
  if (role.rfind("span:", 0) == 0) return 100 + std::stoi(role.substr(5));
  if (role == "option_a") return 10000;
  if (role == "option_b") return 10001;
  if (role == "answer_cue") return 10002;
  if (role == "final") return 10003;
  return 20000;
}

struct AggregateGrid {
  GridKind kind = GridKind::kResidPre;
  std::size_t n_layers = 0;
  std::vector<std::string> roles;                // columns
  std::vector<std::optional<double>> mean;       // [layer][role]
  std::vector<std::size_t> count;                // valid cells pooled per [layer][role]
  std::size_t n_grids = 0;
  std::size_t invalid_cells = 0;

  std::optional<double> at(std::size_t layer, std::size_t role) const { return mean[layer * roles.size() + role]; }
};

struct AggregateSummary {
  std::optional<double> avg_max_span;   // mean over pairs of max over (layer, span cells)
  std::optional<double> avg_max_final;  // mean over pairs of max over the final-position column
  std::size_t pairs_used_span = 0;
  std::size_t pairs_used_final = 0;
  std::size_t invalid_cells = 0;
};

/// `roles[i]` labels each position of `grids[i]`. Cells are pooled by
/// (layer, role); group-span tokens keep their offset within the span.
inline std::pair<AggregateGrid, AggregateSummary> aggregate_grids(const std::vector<PatchGrid>& grids,
                                                                  const std::vector<std::vector<std::string>>& roles) {
  require(!grids.empty(), ErrorKind::kInvalidArgument, "aggregate_grids: empty input");
  require(grids.size() == roles.size(), ErrorKind::kInvalidArgument, "aggregate_grids: one role list per grid");
  const GridKind kind = grids.front().kind;
  const std::size_t n_layers = grids.front().n_layers;

  std::vector<std::string> columns;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    require(grids[i].kind == kind && grids[i].n_layers == n_layers, ErrorKind::kSchemaMismatch,
            "aggregate_grids: grids differ in site kind or layer count");
    require(roles[i].size() == grids[i].seq_len, ErrorKind::kSchemaMismatch,
            "aggregate_grids: role list length does not match grid " + grids[i].tag);
    for (const auto& r : roles[i]) {
      if (std::find(columns.begin(), columns.end(), r) == columns.end()) columns.push_back(r);
    }
  }
  std::stable_sort(columns.begin(), columns.end(),
                   [](const std::string& a, const std::string& b) { return role_rank(a) < role_rank(b); });
  std::map<std::string, std::size_t> col_index;
  for (std::size_t c = 0; c < columns.size(); ++c) col_index[columns[c]] = c;

  AggregateGrid agg;
  agg.kind = kind;
  agg.n_layers = n_layers;
  agg.roles = columns;
  agg.n_grids = grids.size();
  std::vector<double> sum(n_layers * columns.size(), 0.0);
  agg.count.assign(n_layers * columns.size(), 0);

  AggregateSummary summary;
  double span_total = 0.0, final_total = 0.0;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& g = grids[i];
    std::optional<double> span_max, final_max;
    for (std::size_t l = 0; l < n_layers; ++l) {
      for (std::size_t p = 0; p < g.seq_len; ++p) {
        const auto& cell = g.at(l, p);
        if (!cell.metric) {
          ++agg.invalid_cells;
          continue;
        }
        const std::string& role = roles[i][p];
        const std::size_t k = l * columns.size() + col_index[role];
        sum[k] += *cell.metric;
        ++agg.count[k];
        if (role.rfind("span:", 0) == 0) span_max = std::max(span_max.value_or(*cell.metric), *cell.metric);
        if (role == "final") final_max = std::max(final_max.value_or(*cell.metric), *cell.metric);
      }
    }
    if (span_max) {
      span_total += *span_max;
      ++summary.pairs_used_span;
    }
    if (final_max) {
      final_total += *final_max;
      ++summary.pairs_used_final;
    }
  }
  agg.mean.resize(sum.size());
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (agg.count[k]) agg.mean[k] = sum[k] / static_cast<double>(agg.count[k]);
  }
  if (summary.pairs_used_span) summary.avg_max_span = span_total / static_cast<double>(summary.pairs_used_span);
  if (summary.pairs_used_final) summary.avg_max_final = final_total / static_cast<double>(summary.pairs_used_final);
  summary.invalid_cells = agg.invalid_cells;
  return {agg, summary};
}

// ---------------------------------------------------------------------------
// Two-choice evaluation

struct ItemRecord {
  std::size_t index = 0;
  double logit_a = 0.0;
  double logit_b = 0.0;
  double logit_diff = 0.0;  // correct minus incorrect
  std::optional<Choice> predicted;  // nullopt on a tie
  bool correct = false;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t n_correct = 0;
  std::vector<ItemRecord> items;
};

/// Prediction is the option whose answer token has the larger logit at the
/// final position; ties count as incorrect.
inline EvalReport evaluate_two_choice(const Model& model, const std::vector<TwoChoiceItem>& items,
                                      const GridOptions& opts = {}) {
  require(!items.empty(), ErrorKind::kInvalidArgument, "evaluate_two_choice: no items");
  EvalReport rep;
  rep.items.resize(items.size());
  detail::parallel_for(items.size(), opts.threads, [&](std::size_t i) {
    const auto& item = items[i];
    require(!item.tokens.empty(), ErrorKind::kInvalidArgument, "evaluate_two_choice: item " + std::to_string(i) + " is not tokenized");
    const RunOutput out = forward(model, item.tokens);
    const auto last = out.logits.row(out.logits.rows() - 1);
    require(item.answers.a < last.size() && item.answers.b < last.size(), ErrorKind::kInvalidArgument,
            "evaluate_two_choice: answer token out of range");
    ItemRecord rec;
    rec.index = i;
    rec.logit_a = last[item.answers.a];
    rec.logit_b = last[item.answers.b];
    if (rec.logit_a != rec.logit_b) rec.predicted = rec.logit_a > rec.logit_b ? Choice::kA : Choice::kB;
    rec.correct = rec.predicted && *rec.predicted == item.correct;
    rec.logit_diff = item.correct == Choice::kA ? rec.logit_a - rec.logit_b : rec.logit_b - rec.logit_a;
    rep.items[i] = rec;
  });
  for (const auto& r : rep.items) rep.n_correct += r.correct ? 1 : 0;
  rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(items.size());
  return rep;
}

}  // namespace drugloc
