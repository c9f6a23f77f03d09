#include <gtest/gtest.h>

#include <cmath>

#include "cmad/detection.hpp"

using namespace cmad;

namespace {

struct IdentityModel {
  Matrix embed_a(const Matrix& x) const { return x; }
  Matrix embed_b(const Matrix& x) const { return x; }
};

Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  std::vector<bool> flags;
  std::vector<Truth> truths;
  auto add = [&](std::size_t n, bool f, Truth t) {
    for (std::size_t i = 0; i < n; ++i) {
      flags.push_back(f);
      truths.push_back(t);
    }
  };
  add(tp, true, Truth::anomalous);
  add(fp, true, Truth::consistent);
  add(tn, false, Truth::consistent);
  add(fn, false, Truth::anomalous);
  return confusion_and_metrics(flags, truths);
}

struct Bench {
  Dataset train, test;
  std::vector<EvalPair> pairs;
  TrainConfig cfg;
};

Bench separable(std::uint64_t seed) {
  Rng rng(seed);
  SyntheticOptions o;
  o.num_classes = 5;
  o.per_class = 120;
  o.noise = 0.1;
  Bench b;
  std::tie(b.train, b.test) = split_train_test(gen_synthetic(o, rng), 0.2, rng);
  b.pairs = inject_anomalies(b.test, 60, rng);
  b.cfg.arch_a = {20, 32, 16};
  b.cfg.arch_b = {20, 32, 16};
  b.cfg.epochs = 10;
  b.cfg.seed = seed;
  return b;
}

}  // namespace

TEST(Score, IdentityEncoders) {
  const IdentityModel m;
  const Vector x = {1.5, -2, 0.25};
  EXPECT_NEAR(score(m, x, x), 1.0, 1e-15);
  EXPECT_EQ(score(m, Vector{1, 0, 0}, Vector{0, 3, 0}), 0.0);
  const Vector y = {0.5, 1, 2};
  const Vector x3 = {4.5, -6, 0.75};
  EXPECT_NEAR(score(m, x3, y), score(m, x, y), 1e-15);
}

TEST(Score, TrainedModelIsEvalMode) {
  Rng rng(1);
  SyntheticOptions o;
  o.per_class = 20;
  const Dataset d = gen_synthetic(o, rng);
  TrainConfig c;
  c.arch_a = {20, 16, 8};
  c.arch_b = {20, 16, 8};
  c.epochs = 1;
  const auto m = train_cmad(d, c);
  const double s = score(m, d.mod_a.row(0), d.mod_b.row(0));
  EXPECT_EQ(s, score(m, d.mod_a.row(0), d.mod_b.row(0)));
  EXPECT_EQ(s, cosine_similarity(m.embed_a(select_rows(d.mod_a, std::vector<std::size_t>{0})).row(0),
                                 m.embed_b(select_rows(d.mod_b, std::vector<std::size_t>{0})).row(0)));
  EXPECT_THROW(score(m, Vector(19, 0.0), d.mod_b.row(0)), ArgumentError);
}

TEST(Detect, ExtremeThresholds) {
  Rng rng(2);
  SyntheticOptions o;
  o.per_class = 10;
  o.d_a = o.d_b = 6;
  const Dataset d = gen_synthetic(o, rng);
  const auto pairs = inject_anomalies(d, 10, rng);
  const IdentityModel m;
  for (const auto& r : detect(m, pairs, d, {-1.1})) EXPECT_FALSE(r.flagged);
  for (const auto& r : detect(m, pairs, d, {1.1})) EXPECT_TRUE(r.flagged);
}

TEST(Detect, BoundaryIsNormal) {
  const std::vector<double> s = {0.3, 0.2999999, 0.3000001};
  const auto r = threshold(s, 0.3);
  EXPECT_FALSE(r[0].flagged);
  EXPECT_TRUE(r[1].flagged);
  EXPECT_FALSE(r[2].flagged);
}

TEST(Detect, ThresholdMonotone) {
  Rng rng(3);
  std::vector<double> s(500);
  for (auto& v : s) v = 2 * rng.uniform() - 1;
  for (int t = 0; t < 50; ++t) {
    double e1 = 2 * rng.uniform() - 1, e2 = 2 * rng.uniform() - 1;
    if (e1 > e2) std::swap(e1, e2);
    const auto a = threshold(s, e1), b = threshold(s, e2);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (a[i].flagged) {
        EXPECT_TRUE(b[i].flagged);
      }
  }
}

TEST(Detect, RejectsMissingRow) {
  Rng rng(2);
  SyntheticOptions o;
  o.per_class = 2;
  const Dataset d = gen_synthetic(o, rng);
  const std::vector<EvalPair> bad = {{0, d.size(), Truth::anomalous}};
  EXPECT_THROW(detect(IdentityModel{}, bad, d, {}), ArgumentError);
}

TEST(Metrics, WorkedExample) {
  const auto m = from_counts(90, 10, 70, 30);
  EXPECT_NEAR(m.precision, 0.9, 1e-15);
  EXPECT_NEAR(m.recall, 0.75, 1e-15);
  EXPECT_NEAR(m.accuracy, 0.8, 1e-15);
  EXPECT_EQ(m.total(), 200u);
}

TEST(Metrics, AllCorrect) {
  const auto m = from_counts(5, 0, 7, 0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Metrics, NothingFlagged) {
  const auto m = from_counts(0, 0, 7, 4);
  EXPECT_FALSE(m.precision_defined);
  EXPECT_TRUE(std::isnan(m.precision));
  EXPECT_TRUE(m.recall_defined);
  EXPECT_EQ(m.recall, 0.0);
  const auto empty = from_counts(0, 0, 0, 0);
  EXPECT_FALSE(empty.accuracy_defined);
  EXPECT_FALSE(empty.recall_defined);
}

TEST(Metrics, Identities) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto m = from_counts(rng.uniform_index(50), rng.uniform_index(50), rng.uniform_index(50), rng.uniform_index(50));
    if (m.precision_defined) {
      EXPECT_NEAR(m.precision * static_cast<double>(m.tp + m.fp), static_cast<double>(m.tp), 1e-9);
    }
    if (m.recall_defined) {
      EXPECT_NEAR(m.recall * static_cast<double>(m.tp + m.fn), static_cast<double>(m.tp), 1e-9);
    }
    if (m.accuracy_defined) {
      EXPECT_NEAR(m.accuracy * static_cast<double>(m.total()), static_cast<double>(m.tp + m.tn), 1e-9);
    }
  }
}

TEST(Metrics, LengthMismatch) {
  const std::vector<Truth> t = {Truth::anomalous};
  EXPECT_THROW(confusion_and_metrics({true, false}, t), ArgumentError);
}

TEST(Csv, MetricsAndScores) {
  const auto m = from_counts(0, 0, 3, 1);
  const std::vector<SweepRow> rows = {{0.3, -0.2, m}};
  EXPECT_EQ(format_metrics_csv(rows), "gamma,epsilon,tp,fp,tn,fn,precision,recall,accuracy\n0.3,-0.2,0,0,3,1,nan,0,0.75\n");
  const std::vector<Detection> det = {{0.5, false}, {-0.25, true}};
  const std::vector<EvalPair> pairs = {{0, 0, Truth::consistent}, {1, 2, Truth::anomalous}};
  EXPECT_EQ(format_scores_csv(det, pairs), "pair_index,score,truth,flagged\n0,0.5,consistent,0\n1,-0.25,anomalous,1\n");
}

TEST(Sweep, GridShapeAndValidation) {
  const auto g = default_gamma_grid();
  const auto e = default_epsilon_grid();
  ASSERT_EQ(g.size(), 10u);
  ASSERT_EQ(e.size(), 10u);
  EXPECT_DOUBLE_EQ(g.front(), -0.4);
  EXPECT_DOUBLE_EQ(g.back(), 0.5);
  EXPECT_DOUBLE_EQ(e.front(), -0.2);
  EXPECT_DOUBLE_EQ(e.back(), 0.7);
  Bench b = separable(1);
  EXPECT_THROW(sweep(b.train, b.test, b.pairs, b.cfg, std::vector<double>{}, e), ArgumentError);
  EXPECT_THROW(sweep(b.train, b.test, b.pairs, b.cfg, g, std::vector<double>{2.0}), ArgumentError);
}

TEST(Sweep, SingleCellMatchesStandaloneRun) {
  Bench b = separable(5);
  const std::vector<double> g = {0.2}, e = {0.3};
  const auto rows = sweep(b.train, b.test, b.pairs, b.cfg, g, e);
  ASSERT_EQ(rows.size(), 1u);
  TrainConfig c = b.cfg;
  c.contrastive.gamma = 0.2;
  c.seed = sweep_cell_seed(b.cfg.seed, 0);
  const auto model = train_cmad(b.train, c);
  const auto m = evaluate(detect(model, b.pairs, b.test, {0.3}), b.pairs);
  EXPECT_EQ(format_metrics_csv(rows), format_metrics_csv(std::vector<SweepRow>{{0.2, 0.3, m}}));
}

TEST(Sweep, FlaggedMonotoneAndSmallEpsilonPrecise) {
  Bench b = separable(9);
  const std::vector<double> g = {-0.2, 0.3}, e = {0.0, 0.3, 0.6};
  const auto rows = sweep(b.train, b.test, b.pairs, b.cfg, g, e);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t gi = 0; gi < g.size(); ++gi) {
    for (std::size_t ei = 1; ei < e.size(); ++ei)
      EXPECT_LE(rows[gi * 3 + ei - 1].metrics.flagged(), rows[gi * 3 + ei].metrics.flagged());
    const auto& lo = rows[gi * 3].metrics;
    const auto& hi = rows[gi * 3 + 2].metrics;
    // nothing flagged at the small threshold makes precision vacuous
    if (lo.precision_defined && hi.precision_defined) {
      EXPECT_GE(lo.precision, hi.precision);
    }
  }
  EXPECT_EQ(format_metrics_csv(rows), format_metrics_csv(sweep(b.train, b.test, b.pairs, b.cfg, g, e)));
}
