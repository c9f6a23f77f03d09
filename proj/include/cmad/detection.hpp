#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cmad/data.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"
#include "cmad/objective.hpp"
#include "cmad/training.hpp"

namespace cmad {

// Anything that maps each modality into a shared space, row by row.
template <class M>
concept CrossModalModel = requires(const M& m, const Matrix& x) {
  { m.embed_a(x) } -> std::convertible_to<Matrix>;
  { m.embed_b(x) } -> std::convertible_to<Matrix>;
};

struct DetectionConfig {
  double epsilon = 0.3;

  void validate() const {
    if (!(epsilon >= -1.0 && epsilon <= 1.0)) throw ArgumentError("epsilon must be in [-1, 1]");
  }
};

template <CrossModalModel M>
double score(const M& model, std::span<const double> x_a, std::span<const double> x_b) {
  const Matrix za = model.embed_a(io::row_vector(x_a));
  const Matrix zb = model.embed_b(io::row_vector(x_b));
  return cosine_similarity(za.row(0), zb.row(0));
}

struct Detection {
  double score = 0.0;
  bool flagged = false;
};

// Cross-modal similarity of every pair. Rows are embedded one batch per modality.
template <CrossModalModel M>
std::vector<double> pair_scores(const M& model, std::span<const EvalPair> pairs, const Dataset& d) {
  std::vector<std::size_t> ia, ib;
  for (const auto& p : pairs) {
    if (p.index_a >= d.size() || p.index_b >= d.size()) throw ArgumentError("detect: pair references a missing row");
    ia.push_back(p.index_a);
    ib.push_back(p.index_b);
  }
  const Matrix za = model.embed_a(select_rows(d.mod_a, ia));
  const Matrix zb = model.embed_b(select_rows(d.mod_b, ib));
  std::vector<double> s(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) s[k] = cosine_similarity(za.row(k), zb.row(k));
  return s;
}

// Anomalous iff score < epsilon; a score equal to epsilon is normal.
inline std::vector<Detection> threshold(std::span<const double> scores, double epsilon) {
  std::vector<Detection> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back({s, s < epsilon});
  return out;
}

template <CrossModalModel M>
std::vector<Detection> detect(const M& model, std::span<const EvalPair> pairs, const Dataset& d,
                              const DetectionConfig& cfg) {
  return threshold(pair_scores(model, pairs, d), cfg.epsilon);
}

// Anomalous is the positive class. Undefined ratios are NaN with the flag cleared.
struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = std::numeric_limits<double>::quiet_NaN();
  double recall = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  bool precision_defined = false;
  bool recall_defined = false;
  bool accuracy_defined = false;

  std::size_t total() const { return tp + fp + tn + fn; }
  std::size_t flagged() const { return tp + fp; }
};

inline Metrics confusion_and_metrics(const std::vector<bool>& flags, std::span<const Truth> truths) {
  if (flags.size() != truths.size()) {
    throw ArgumentError("confusion_and_metrics: " + std::to_string(flags.size()) + " flags vs " +
                        std::to_string(truths.size()) + " truths");
  }
  Metrics m;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const bool anomalous = truths[i] == Truth::anomalous;
    if (flags[i]) {
      (anomalous ? m.tp : m.fp)++;
    } else {
      (anomalous ? m.fn : m.tn)++;
    }
  }
  auto ratio = [](std::size_t num, std::size_t den, double& out, bool& defined) {
    defined = den > 0;
    if (defined) out = static_cast<double>(num) / static_cast<double>(den);
  };
  ratio(m.tp, m.tp + m.fp, m.precision, m.precision_defined);
  ratio(m.tp, m.tp + m.fn, m.recall, m.recall_defined);
  ratio(m.tp + m.tn, m.total(), m.accuracy, m.accuracy_defined);
  return m;
}

inline Metrics evaluate(std::span<const Detection> detections, std::span<const EvalPair> pairs) {
  std::vector<bool> flags;
  std::vector<Truth> truths;
  for (const auto& d : detections) flags.push_back(d.flagged);
  for (const auto& p : pairs) truths.push_back(p.truth);
  return confusion_and_metrics(flags, truths);
}

// ---------------------------------------------------------------------------
// (gamma, epsilon) grid

struct SweepRow {
  double gamma = 0.0;
  double epsilon = 0.0;
  Metrics metrics;
};

inline std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int k = -4; k <= 5; ++k) g.push_back(k / 10.0);
  return g;
}

inline std::vector<double> default_epsilon_grid() {
  std::vector<double> e;
  for (int k = -2; k <= 7; ++k) e.push_back(k / 10.0);
  return e;
}

// Seed used for the model at gamma-grid position `cell`.
inline std::uint64_t sweep_cell_seed(std::uint64_t seed, std::size_t cell) { return seed ^ static_cast<std::uint64_t>(cell); }

// One model per gamma, evaluated at every epsilon without retraining.
inline std::vector<SweepRow> sweep(const Dataset& train, const Dataset& test, std::span<const EvalPair> pairs,
                                   const TrainConfig& base, std::span<const double> gamma_grid,
                                   std::span<const double> epsilon_grid) {
  if (gamma_grid.empty() || epsilon_grid.empty()) throw ArgumentError("sweep: grids must be non-empty");
  for (double e : epsilon_grid) DetectionConfig{e}.validate();
  std::vector<SweepRow> rows;
  for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
    TrainConfig cfg = base;
    cfg.contrastive.gamma = gamma_grid[g];
    cfg.seed = sweep_cell_seed(base.seed, g);
    const TrainedModel model = train_cmad(train, cfg);
    const auto scores = pair_scores(model, pairs, test);
    for (double eps : epsilon_grid) rows.push_back({gamma_grid[g], eps, evaluate(threshold(scores, eps), pairs)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV outputs

inline std::string format_metric(double v, bool defined) { return defined ? io::format_double(v) : "nan"; }

inline std::string metrics_csv_header() { return "gamma,epsilon,tp,fp,tn,fn,precision,recall,accuracy\n"; }

inline std::string metrics_csv_row(double gamma, double epsilon, const Metrics& m) {
  return io::format_double(gamma) + "," + io::format_double(epsilon) + "," + std::to_string(m.tp) + "," +
         std::to_string(m.fp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fn) + "," +
         format_metric(m.precision, m.precision_defined) + "," + format_metric(m.recall, m.recall_defined) + "," +
         format_metric(m.accuracy, m.accuracy_defined) + "\n";
}

inline std::string format_metrics_csv(std::span<const SweepRow> rows) {
  std::string out = metrics_csv_header();
  for (const auto& r : rows) out += metrics_csv_row(r.gamma, r.epsilon, r.metrics);
  return out;
}

inline std::string format_scores_csv(std::span<const Detection> detections, std::span<const EvalPair> pairs) {
  if (detections.size() != pairs.size()) throw ArgumentError("format_scores_csv: length mismatch");
  std::string out = "pair_index,score,truth,flagged\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out += std::to_string(i) + "," + io::format_double(detections[i].score) + "," +
           (pairs[i].truth == Truth::anomalous ? "anomalous" : "consistent") + "," +
           (detections[i].flagged ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace cmad
