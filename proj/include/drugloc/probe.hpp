// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Linear probes over group-span activations: feature extraction, an
// L2-regularized logistic regression solver, leakage-safe fold plans, and
// accuracy / F1 / ROC-AUC reporting per layer.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "drugloc/dataset.hpp"
#include "drugloc/error.hpp"
#include "drugloc/model.hpp"
#include "drugloc/rng.hpp"

namespace drugloc {

/// "pre0" is the residual stream before block 0 (the token embeddings);
/// layer L is the residual stream leaving block L.
struct ProbeLayer {
  bool pre0 = false;
  std::size_t layer = 0;

  static ProbeLayer embedding() { return {true, 0}; }
  static ProbeLayer block(std::size_t l) { return {false, l}; }

  HookSite site() const { return pre0 ? HookSite::resid_pre(0) : HookSite::resid_post(layer); }
  std::string name() const { return pre0 ? "pre0" : std::to_string(layer); }
  auto operator<=>(const ProbeLayer&) const = default;

  static ProbeLayer parse(const std::string& s) {
    if (s == "pre0") return embedding();
    try {
      std::size_t used = 0;
      const auto v = std::stoul(s, &used);
      if (used == s.size()) return block(v);
    } catch (const std::exception&) {
    }
    fail(ErrorKind::kInvalidArgument, "probe layer must be 'pre0' or a layer index, got '" + s + "'");
  }
};

enum class FeatureMode : std::uint8_t { kToken, kSumPooled };

inline const char* to_string(FeatureMode m) { return m == FeatureMode::kToken ? "token" : "sum_pooled"; }

struct ProbeExample {
  std::vector<double> features;
  int label = 0;
  std::size_t prompt_id = 0;
  ProbeLayer layer;
  FeatureMode mode = FeatureMode::kToken;
  std::optional<std::size_t> token_offset;  // token mode only
};

/// Token mode: one example per span token. Sum-pooled: one example whose
/// features are the elementwise sum over the span.
inline std::vector<ProbeExample> extract_span_features(const Matrix& activations, TokenSpan span, ProbeLayer layer,
                                                       FeatureMode mode, int label, std::size_t prompt_id) {
  require(span.end > span.start, ErrorKind::kInvalidArgument, "extract_span_features: empty span");
  require(span.end <= activations.rows(), ErrorKind::kInvalidArgument,
          "extract_span_features: span exceeds the cached sequence");
  std::vector<ProbeExample> out;
  if (mode == FeatureMode::kToken) {
    for (std::size_t p = span.start; p < span.end; ++p) {
      auto row = activations.row(p);
      out.push_back({std::vector<double>(row.begin(), row.end()), label, prompt_id, layer, mode, p - span.start});
    }
  } else {
    std::vector<double> pooled(activations.cols(), 0.0);
    for (std::size_t p = span.start; p < span.end; ++p) {
      auto row = activations.row(p);
      for (std::size_t i = 0; i < row.size(); ++i) pooled[i] += row[i];
    }
    out.push_back({std::move(pooled), label, prompt_id, layer, mode, std::nullopt});
  }
  for (const auto& ex : out) {
    for (double v : ex.features) require(std::isfinite(v), ErrorKind::kNumerical, "extract_span_features: non-finite feature");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

struct ProbeConfig {
  double C = 1e-3;
  std::size_t n_folds = 5;
  double tolerance = 1e-8;
  std::size_t max_iterations = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    require(C > 0.0 && std::isfinite(C), ErrorKind::kInvalidArgument, "probe config: C must be positive");
    require(n_folds >= 2, ErrorKind::kInvalidArgument, "probe config: n_folds must be >= 2");
    require(tolerance > 0.0, ErrorKind::kInvalidArgument, "probe config: tolerance must be positive");
  }
};

/// Row-major [n x d] design matrix.
struct DesignMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> x;

  const double* row(std::size_t i) const { return x.data() + i * d; }

  static DesignMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    DesignMatrix m;
    m.n = rows.size();
    m.d = rows.empty() ? 0 : rows[0].size();
    m.x.reserve(m.n * m.d);
    for (const auto& r : rows) {
      require(r.size() == m.d, ErrorKind::kInvalidArgument, "design matrix rows differ in length");
      m.x.insert(m.x.end(), r.begin(), r.end());
    }
    return m;
  }
};

struct LogRegModel {
  std::vector<double> w;
  double b = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;  // max-norm at exit
  std::vector<double> objective_history;

  double score(const double* x) const {
    double z = b;
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
    return z;
  }
};

namespace detail {

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// f(w, b) = 0.5 * |w|^2 + C * sum_i log(1 + exp(-s_i (w.x_i + b))), s_i in {-1, +1}.
/// `params` holds w followed by b; the gradient is written to `grad` when non-null.
inline double logreg_objective(const DesignMatrix& X, std::span<const int> y, double C, std::span<const double> params,
                               std::vector<double>* grad = nullptr) {
  const std::size_t d = X.d;
  double f = 0.0;
  for (std::size_t i = 0; i < d; ++i) f += 0.5 * params[i] * params[i];
  if (grad) {
    grad->assign(d + 1, 0.0);
    for (std::size_t i = 0; i < d; ++i) (*grad)[i] = params[i];
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < X.n; ++r) {
    const double* x = X.row(r);
    double z = params[d];
    for (std::size_t i = 0; i < d; ++i) z += params[i] * x[i];
    const double s = y[r] == 1 ? 1.0 : -1.0;
    loss += detail::softplus(-s * z);
    if (grad) {
      const double coef = -C * s * detail::sigmoid(-s * z);
      for (std::size_t i = 0; i < d; ++i) (*grad)[i] += coef * x[i];
      (*grad)[d] += coef;
    }
  }
  return f + C * loss;
}

/// Deterministic L-BFGS with monotone backtracking line search. Stops when
/// the gradient max-norm drops below the tolerance or at max_iterations
/// (reported through `converged`).
inline LogRegModel train_logreg(const DesignMatrix& X, std::span<const int> y, const ProbeConfig& cfg) {
  cfg.validate();
  require(X.n == y.size() && X.n > 0, ErrorKind::kInvalidArgument, "train_logreg: X and y sizes differ");
  bool has0 = false, has1 = false;
  for (int v : y) {
    require(v == 0 || v == 1, ErrorKind::kInvalidArgument, "train_logreg: labels must be 0 or 1");
    (v == 1 ? has1 : has0) = true;
  }
  require(has0 && has1, ErrorKind::kInvalidArgument, "train_logreg: need examples of both classes");

  const std::size_t dim = X.d + 1;
  constexpr std::size_t kMemory = 10;
  std::vector<double> theta(dim, 0.0), grad, next(dim), next_grad;
  double f = logreg_objective(X, y, cfg.C, theta, &grad);
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;

  auto max_norm = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  LogRegModel model;
  model.objective_history.push_back(f);
  std::size_t it = 0;
  for (; it < cfg.max_iterations; ++it) {
    if (max_norm(grad) < cfg.tolerance) break;
    // Two-loop recursion for the search direction.
    std::vector<double> q = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], q);
      for (std::size_t i = 0; i < dim; ++i) q[i] -= alpha[k] * y_hist[k][i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    } else {
      gamma = 1.0 / std::max(1.0, std::sqrt(dot(grad, grad)));
    }
    for (double& v : q) v *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], q);
      for (std::size_t i = 0; i < dim; ++i) q[i] += (alpha[k] - beta) * s_hist[k][i];
    }
    std::vector<double> dir(dim);
    for (std::size_t i = 0; i < dim; ++i) dir[i] = -q[i];
    double slope = dot(grad, dir);
    if (slope >= 0) {  // not a descent direction: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      const double g = 1.0 / std::max(1.0, std::sqrt(dot(grad, grad)));
      for (std::size_t i = 0; i < dim; ++i) dir[i] = -g * grad[i];
      slope = dot(grad, dir);
    }

    double step = 1.0;
    double f_next = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < dim; ++i) next[i] = theta[i] + step * dir[i];
      f_next = logreg_objective(X, y, cfg.C, next, &next_grad);
      if (f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(dim), yv(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] = next[i] - theta[i];
      yv[i] = next_grad[i] - grad[i];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-16) {
      if (s_hist.size() == kMemory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
    }
    theta = next;
    grad = next_grad;
    f = f_next;
    model.objective_history.push_back(f);
  }
  model.iterations = it;
  model.gradient_norm = max_norm(grad);
  model.converged = model.gradient_norm < cfg.tolerance;
  model.w.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(X.d));
  model.b = theta[X.d];
  return model;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> roc_auc;  // nullopt when labels are single-class
};

/// Pairwise AUC (ties count one half) via midranks; exact in integer arithmetic.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size() && !scores.empty(), ErrorKind::kInvalidArgument, "roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives, with midranks for ties (ranks 1-based).
  std::int64_t rank2_pos = 0, n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);  // (i+1) + j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank2_pos += twice_mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const auto n_neg = static_cast<std::int64_t>(scores.size()) - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::kInvalidArgument, "roc_auc: labels contain a single class");
  const std::int64_t u2 = rank2_pos - n_pos * (n_pos + 1);  // 2U
  return static_cast<double>(u2) / static_cast<double>(2 * n_pos * n_neg);
}

/// Accuracy at threshold score > 0, F1 of the positive class (0 when it is
/// undefined), and AUC when both classes are present.
inline Metrics eval_metrics(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size() && !scores.empty(), ErrorKind::kInvalidArgument, "eval_metrics: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  bool has0 = false, has1 = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] > 0 ? 1 : 0;
    correct += pred == labels[i];
    tp += pred == 1 && labels[i] == 1;
    fp += pred == 1 && labels[i] == 0;
    fn += pred == 0 && labels[i] == 1;
    (labels[i] == 1 ? has1 : has0) = true;
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
  const std::size_t denom = 2 * tp + fp + fn;
  m.f1 = denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  if (has0 && has1) m.roc_auc = roc_auc(scores, labels);
  return m;
}

// ---------------------------------------------------------------------------
// Fold plans

enum class FoldStrategy : std::uint8_t { kStratified, kStratifiedGroup };

inline const char* to_string(FoldStrategy s) {
  return s == FoldStrategy::kStratified ? "stratified" : "stratified_group";
}

struct FoldPlan {
  FoldStrategy strategy = FoldStrategy::kStratified;
  std::vector<std::vector<std::size_t>> test;   // per fold, sorted
  std::vector<std::vector<std::size_t>> train;  // per fold, sorted
};

namespace detail {

inline FoldPlan finish_plan(FoldStrategy strategy, const std::vector<std::size_t>& fold_of, std::size_t n_folds) {
  FoldPlan plan;
  plan.strategy = strategy;
  plan.test.resize(n_folds);
  plan.train.resize(n_folds);
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    for (std::size_t f = 0; f < n_folds; ++f) (f == fold_of[i] ? plan.test : plan.train)[f].push_back(i);
  }
  for (std::size_t f = 0; f < n_folds; ++f) {
    require(!plan.test[f].empty(), ErrorKind::kInvalidArgument, "make_folds: fold " + std::to_string(f) + " is empty");
  }
  return plan;
}

}  // namespace detail

/// Stratified plans deal each class's shuffled examples round-robin over the
/// folds. Grouped plans keep every group on one side of each split and place
/// groups (largest first) into the fold that best evens out per-label counts.
inline FoldPlan make_folds(std::span<const int> labels, std::optional<std::span<const std::size_t>> groups,
                           FoldStrategy strategy, std::size_t n_folds, std::uint64_t seed) {
  require(n_folds >= 2, ErrorKind::kInvalidArgument, "make_folds: n_folds must be >= 2");
  require(n_folds <= labels.size(), ErrorKind::kInvalidArgument, "make_folds: more folds than examples");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  for (const auto& [label, idx] : by_label) {
    require(idx.size() >= n_folds, ErrorKind::kInvalidArgument,
            "make_folds: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                " examples, fewer than n_folds=" + std::to_string(n_folds));
  }
  Rng rng(seed);
  std::vector<std::size_t> fold_of(labels.size(), 0);

  if (strategy == FoldStrategy::kStratified) {
    std::size_t k = 0;
    for (auto& [label, idx] : by_label) {
      rng.shuffle(std::span<std::size_t>(idx));
      for (std::size_t i : idx) fold_of[i] = k++ % n_folds;
    }
    return detail::finish_plan(strategy, fold_of, n_folds);
  }

  require(groups.has_value() && groups->size() == labels.size(), ErrorKind::kInvalidArgument,
          "make_folds: grouped strategy needs one group key per example");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[(*groups)[i]].push_back(i);
  require(n_folds <= members.size(), ErrorKind::kInvalidArgument,
          "make_folds: more folds than groups (" + std::to_string(members.size()) + ")");

  std::vector<int> label_values;
  for (const auto& [l, _] : by_label) label_values.push_back(l);
  const std::size_t n_labels = label_values.size();
  auto label_index = [&](int l) {
    return static_cast<std::size_t>(std::find(label_values.begin(), label_values.end(), l) - label_values.begin());
  };
  std::vector<double> label_totals(n_labels);
  for (std::size_t c = 0; c < n_labels; ++c) label_totals[c] = static_cast<double>(by_label[label_values[c]].size());

  struct Group {
    std::vector<std::size_t> idx;
    std::vector<double> counts;
  };
  std::vector<Group> order;
  for (auto& [key, idx] : members) {
    Group g{idx, std::vector<double>(n_labels, 0.0)};
    for (std::size_t i : idx) g.counts[label_index(labels[i])] += 1.0;
    order.push_back(std::move(g));
  }
  rng.shuffle(std::span<Group>(order));
  std::stable_sort(order.begin(), order.end(), [](const Group& a, const Group& b) { return a.idx.size() > b.idx.size(); });

  std::vector<std::vector<double>> fold_counts(n_folds, std::vector<double>(n_labels, 0.0));
  std::vector<std::size_t> fold_size(n_folds, 0);
  auto imbalance = [&](std::size_t candidate, const Group& g) {
    // Mean over labels of the std across folds of the fold's share of that label.
    double total = 0.0;
    for (std::size_t c = 0; c < n_labels; ++c) {
      std::vector<double> share(n_folds);
      for (std::size_t f = 0; f < n_folds; ++f) {
        share[f] = (fold_counts[f][c] + (f == candidate ? g.counts[c] : 0.0)) / label_totals[c];
      }
      const double mean = std::accumulate(share.begin(), share.end(), 0.0) / static_cast<double>(n_folds);
      double var = 0.0;
      for (double s : share) var += (s - mean) * (s - mean);
      total += std::sqrt(var / static_cast<double>(n_folds));
    }
    return total / static_cast<double>(n_labels);
  };
  for (const Group& g : order) {
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < n_folds; ++f) {
      const double score = imbalance(f, g);
      if (score < best_score - 1e-12 || (std::abs(score - best_score) <= 1e-12 && fold_size[f] < fold_size[best])) {
        best = f;
        best_score = score;
      }
    }
    for (std::size_t c = 0; c < n_labels; ++c) fold_counts[best][c] += g.counts[c];
    fold_size[best] += g.idx.size();
    for (std::size_t i : g.idx) fold_of[i] = best;
  }
  return detail::finish_plan(strategy, fold_of, n_folds);
}

// ---------------------------------------------------------------------------
// Sweep

inline FoldStrategy strategy_for(FeatureMode mode) {
  return mode == FeatureMode::kSumPooled ? FoldStrategy::kStratified : FoldStrategy::kStratifiedGroup;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std over folds
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(var / static_cast<double>(v.size()));
  return m;
}

struct ProbeResult {
  ProbeLayer layer;
  FeatureMode mode = FeatureMode::kToken;
  FoldStrategy strategy = FoldStrategy::kStratified;
  std::size_t n_examples = 0;
  MeanStd test_accuracy, train_accuracy, test_f1, train_f1, test_auc, train_auc;
  std::size_t unconverged_folds = 0;
};

struct ProbeReport {
  std::string positive_group;
  std::string negative_group;
  ProbeConfig config;
  std::optional<std::size_t> token_offset;
  std::vector<ProbeResult> results;

  const ProbeResult& find(ProbeLayer layer, FeatureMode mode) const {
    for (const auto& r : results) {
      if (r.layer == layer && r.mode == mode) return r;
    }
    fail(ErrorKind::kNotFound, "probe report has no entry for layer " + layer.name() + " mode " + to_string(mode));
  }
};

/// Cross-validated probe on one feature set.
inline ProbeResult cross_validate(const std::vector<ProbeExample>& examples, FeatureMode mode, const ProbeConfig& cfg) {
  require(!examples.empty(), ErrorKind::kInvalidArgument, "cross_validate: no examples");
  std::vector<int> labels;
  std::vector<std::size_t> groups;
  for (const auto& e : examples) {
    labels.push_back(e.label);
    groups.push_back(e.prompt_id);
  }
  const FoldStrategy strategy = strategy_for(mode);
  const FoldPlan plan =
      strategy == FoldStrategy::kStratified
          ? make_folds(labels, std::nullopt, strategy, cfg.n_folds, cfg.seed)
          : make_folds(labels, std::span<const std::size_t>(groups), strategy, cfg.n_folds, cfg.seed);

  auto subset = [&](const std::vector<std::size_t>& idx) {
    DesignMatrix X;
    X.n = idx.size();
    X.d = examples[0].features.size();
    X.x.reserve(X.n * X.d);
    std::vector<int> y;
    for (std::size_t i : idx) {
      X.x.insert(X.x.end(), examples[i].features.begin(), examples[i].features.end());
      y.push_back(examples[i].label);
    }
    return std::pair{std::move(X), std::move(y)};
  };
  auto score_all = [](const LogRegModel& m, const DesignMatrix& X) {
    std::vector<double> s(X.n);
    for (std::size_t i = 0; i < X.n; ++i) s[i] = m.score(X.row(i));
    return s;
  };

  ProbeResult res;
  res.layer = examples[0].layer;
  res.mode = mode;
  res.strategy = strategy;
  res.n_examples = examples.size();
  std::vector<double> te_acc, tr_acc, te_f1, tr_f1, te_auc, tr_auc;
  for (std::size_t f = 0; f < plan.test.size(); ++f) {
    const auto [Xtr, ytr] = subset(plan.train[f]);
    const auto [Xte, yte] = subset(plan.test[f]);
    const LogRegModel m = train_logreg(Xtr, ytr, cfg);
    if (!m.converged) ++res.unconverged_folds;
    const Metrics tr = eval_metrics(score_all(m, Xtr), ytr);
    const Metrics te = eval_metrics(score_all(m, Xte), yte);
    tr_acc.push_back(tr.accuracy);
    te_acc.push_back(te.accuracy);
    tr_f1.push_back(tr.f1);
    te_f1.push_back(te.f1);
    if (tr.roc_auc) tr_auc.push_back(*tr.roc_auc);
    if (te.roc_auc) te_auc.push_back(*te.roc_auc);
  }
  res.test_accuracy = mean_std(te_acc);
  res.train_accuracy = mean_std(tr_acc);
  res.test_f1 = mean_std(te_f1);
  res.train_f1 = mean_std(tr_f1);
  res.test_auc = mean_std(te_auc);
  res.train_auc = mean_std(tr_auc);
  return res;
}

struct SweepOptions {
  std::vector<ProbeLayer> layers;
  std::vector<FeatureMode> modes = {FeatureMode::kToken, FeatureMode::kSumPooled};
  std::optional<std::size_t> token_offset;  // restrict token-mode examples to one span offset
};

/// Every probe layer of a model: pre0 followed by each block output.
inline std::vector<ProbeLayer> all_probe_layers(const ModelConfig& cfg) {
  std::vector<ProbeLayer> out{ProbeLayer::embedding()};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) out.push_back(ProbeLayer::block(l));
  return out;
}

inline ProbeReport run_probe_sweep(const Model& model, const ProbePromptSet& positive, const ProbePromptSet& negative,
                                   const SweepOptions& opts, const ProbeConfig& cfg) {
  cfg.validate();
  require(!positive.prompts.empty() && !negative.prompts.empty(), ErrorKind::kInvalidArgument,
          "run_probe_sweep: empty prompt set");
  require(!opts.layers.empty() && !opts.modes.empty(), ErrorKind::kInvalidArgument,
          "run_probe_sweep: no layers or modes selected");
  std::set<HookSite> sites;
  for (const auto& l : opts.layers) {
    require(l.pre0 || l.layer < model.config.n_layers, ErrorKind::kInvalidArgument,
            "run_probe_sweep: layer " + l.name() + " out of range");
    sites.insert(l.site());
  }

  std::map<std::pair<ProbeLayer, FeatureMode>, std::vector<ProbeExample>> features;
  for (const ProbePromptSet* set : {&positive, &negative}) {
    for (const auto& prompt : set->prompts) {
      const RunOutput out = forward(model, prompt.tokens, sites);
      for (const auto& layer : opts.layers) {
        for (FeatureMode mode : opts.modes) {
          auto ex = extract_span_features(out.cache->at(layer.site()), prompt.group_span, layer, mode, set->label,
                                          prompt.prompt_id);
          auto& bucket = features[{layer, mode}];
          for (auto& e : ex) {
            if (mode == FeatureMode::kToken && opts.token_offset && e.token_offset != opts.token_offset) continue;
            bucket.push_back(std::move(e));
          }
        }
      }
    }
  }

  ProbeReport rep;
  rep.positive_group = positive.group;
  rep.negative_group = negative.group;
  rep.config = cfg;
  rep.token_offset = opts.token_offset;
  for (const auto& layer : opts.layers) {
    for (FeatureMode mode : opts.modes) {
      rep.results.push_back(cross_validate(features[{layer, mode}], mode, cfg));
    }
  }
  return rep;
}

}  // namespace drugloc
