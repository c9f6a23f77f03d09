#include <gtest/gtest.h>

#include <cmath>

#include "cmad/data.hpp"
#include "cmad/objective.hpp"
#include "gradcheck.hpp"
#include "objective_oracle.hpp"

using namespace cmad;

namespace {

PairEmbeddings random_pairs(Rng& rng, std::size_t n, std::size_t r) {
  return {gaussian_sample(rng, n, r, 0, 1), gaussian_sample(rng, n, r, 0, 1)};
}

}  // namespace

TEST(Cosine, ClosedForms) {
  EXPECT_NEAR(cosine_similarity(Vector{2, -1, 3}, Vector{2, -1, 3}), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 5}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vector{1, 0}, Vector{1, 1}), 0.70710678118654752, 1e-15);
  EXPECT_THROW(cosine_similarity(Vector{1}, Vector{1, 2}), ArgumentError);
}

TEST(Cosine, ZeroNormGuard) {
  EXPECT_EQ(cosine_similarity(Vector{0, 0}, Vector{1, 1}), 0.0);
  EXPECT_EQ(cosine_similarity(Vector{1e-13, 0}, Vector{1, 1}), 0.0);
}

TEST(Cosine, ScaleInvariance) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    Vector a(5), b(5);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double alpha = 0.01 + 10 * rng.uniform(), beta = 0.01 + 10 * rng.uniform();
    Vector sa = a, sb = b;
    for (auto& v : sa) v *= alpha;
    for (auto& v : sb) v *= beta;
    EXPECT_NEAR(cosine_similarity(sa, sb), cosine_similarity(a, b), 1e-12);
  }
}

TEST(Terms, ClosedForms) {
  EXPECT_EQ(positive_term(1), 0);
  EXPECT_EQ(positive_term(0), 1);
  EXPECT_EQ(positive_term(-1), 2);
  EXPECT_NEAR(negative_term(0.5, 0.3), 0.2, 1e-15);
  EXPECT_EQ(negative_term(0.3, 0.3), 0);
  EXPECT_EQ(negative_term(-0.2, 0.3), 0);
  EXPECT_EQ(negative_term(1, 0), 1);
}

TEST(BatchLoss, Examples) {
  ContrastiveConfig cfg;
  PairEmbeddings same{Matrix::from_rows({{1, 2}, {3, -1}}), Matrix::from_rows({{1, 2}, {3, -1}})};
  EXPECT_NEAR(batch_loss(same, {}, cfg), 0.0, 1e-15);
  PairEmbeddings far{Matrix::from_rows({{1, 0}, {0, 1}}), Matrix::from_rows({{0, 1}, {-1, 0}})};
  EXPECT_EQ(batch_loss({}, far, cfg), 0.0);
  // cos = 0.5 for both
  const double s = std::sqrt(3.0) / 2.0;
  PairEmbeddings half{Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.5, s}})};
  cfg.gamma = 0.3;
  cfg.lambda_neg = 1.0;
  EXPECT_NEAR(batch_loss(half, half, cfg), 0.7, 1e-12);
}

TEST(BatchLoss, NonNegativeAndSymmetric) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    ContrastiveConfig cfg;
    cfg.gamma = 2 * rng.uniform() - 1;
    const auto pos = random_pairs(rng, 4, 3);
    const auto neg = random_pairs(rng, 5, 3);
    const double l = batch_loss(pos, neg, cfg);
    EXPECT_GE(l, 0.0);
    EXPECT_EQ(l, batch_loss({pos.b, pos.a}, {neg.b, neg.a}, cfg));
  }
}

TEST(BatchLoss, ZeroIffConditionsHold) {
  ContrastiveConfig cfg;
  cfg.gamma = 0.3;
  PairEmbeddings pos{Matrix::from_rows({{1, 1}}), Matrix::from_rows({{2, 2}})};
  PairEmbeddings neg{Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 3}})};  // cos ~ 0.316 > 0.3
  EXPECT_GT(batch_loss(pos, neg, cfg), 0.0);
  neg.b = Matrix::from_rows({{1, 4}});  // cos ~ 0.243
  EXPECT_NEAR(batch_loss(pos, neg, cfg), 0.0, 1e-15);
}

TEST(BatchLossGrad, StationaryAtIdenticalPositive) {
  PairEmbeddings pos{Matrix::from_rows({{0.6, 0.8}}), Matrix::from_rows({{0.6, 0.8}})};
  const auto g = batch_loss_grad(pos, {}, {});
  for (double v : g.pos.a.data()) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : g.pos.b.data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(BatchLossGrad, InactiveHingeAndZeroVectors) {
  ContrastiveConfig cfg;
  PairEmbeddings neg{Matrix::from_rows({{1, 0}, {0, 0}}), Matrix::from_rows({{-1, 1}, {1, 1}})};
  PairEmbeddings pos{Matrix::from_rows({{0, 0}}), Matrix::from_rows({{1, 1}})};
  const auto g = batch_loss_grad(pos, neg, cfg);
  EXPECT_EQ(max_abs(g.neg.a), 0.0);
  EXPECT_EQ(max_abs(g.neg.b), 0.0);
  EXPECT_EQ(max_abs(g.pos.a), 0.0);
  EXPECT_EQ(max_abs(g.pos.b), 0.0);
}

TEST(BatchLossGrad, KinkTakesZeroBranch) {
  ContrastiveConfig cfg;
  cfg.gamma = 0.0;
  PairEmbeddings neg{Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 1}})};
  const auto g = batch_loss_grad({}, neg, cfg);
  EXPECT_EQ(max_abs(g.neg.a), 0.0);
}

TEST(BatchLossGrad, LossMatchesBatchLoss) {
  Rng rng(5);
  ContrastiveConfig cfg;
  cfg.lambda_neg = 0.7;
  const auto pos = random_pairs(rng, 6, 4);
  const auto neg = random_pairs(rng, 9, 4);
  EXPECT_EQ(batch_loss_grad(pos, neg, cfg).loss, batch_loss(pos, neg, cfg));
}

// 100 random batches, r in {2, 5, 10}, checked against central differences.
TEST(BatchLossGrad, MatchesFiniteDifferences) {
  Rng rng(7);
  const std::size_t dims[] = {2, 5, 10};
  double worst = 0.0;
  int checked = 0;
  while (checked < 100) {
    const std::size_t r = dims[checked % 3];
    ContrastiveConfig cfg;
    cfg.gamma = 1.6 * rng.uniform() - 0.8;
    cfg.lambda_neg = 0.5 + rng.uniform();
    auto pos = random_pairs(rng, 1 + rng.uniform_index(4), r);
    auto neg = random_pairs(rng, 1 + rng.uniform_index(6), r);
    // the hinge is not differentiable at its kink; keep negatives clear of it
    bool near_kink = false;
    for (std::size_t k = 0; k < neg.size(); ++k)
      near_kink |= std::abs(cosine_similarity(neg.a.row(k), neg.b.row(k)) - cfg.gamma) < 1e-4;
    if (near_kink) continue;
    ++checked;
    const auto g = batch_loss_grad(pos, neg, cfg);
    auto f = [&] { return batch_loss(pos, neg, cfg); };
    for (auto [m, gm] : {std::pair{&pos.a, &g.pos.a}, {&pos.b, &g.pos.b}, {&neg.a, &g.neg.a}, {&neg.b, &g.neg.b}}) {
      const auto num = central_differences(m->data(), f);
      worst = std::max(worst, max_relative_error(gm->data(), num, 1e-4));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(LinearObjective, ZeroProjectorsGiveSetSize) {
  Rng rng(1);
  SyntheticOptions o;
  o.per_class = 4;
  o.d_a = 4;
  o.d_b = 3;
  const Dataset d = gen_synthetic(o, rng);
  const LinearProjector u{Matrix(4, 2)}, v{Matrix(3, 2)};
  const std::vector<IndexPair> s = {{0, 0}, {1, 1}, {2, 2}};
  const std::vector<IndexPair> n = {{0, 5}, {3, 7}};
  ContrastiveConfig cfg;
  cfg.lambda_reg = 123;
  EXPECT_EQ(linear_objective(u, v, d, s, n, cfg), 3.0);
}

TEST(LinearObjective, IdentityOnEqualModalities) {
  Rng rng(2);
  SyntheticOptions o;
  o.per_class = 3;
  o.d_a = o.d_b = 4;
  Dataset d = gen_synthetic(o, rng);
  d.mod_b = d.mod_a;
  const LinearProjector u{Matrix::identity(4)};
  const std::vector<IndexPair> s = {{0, 0}, {4, 4}, {9, 9}};
  ContrastiveConfig cfg;
  cfg.lambda_reg = 0;
  EXPECT_NEAR(linear_objective(u, u, d, s, {}, cfg), 0.0, 1e-14);
}

// Independent straight-line evaluation on 100 random instances.
TEST(LinearObjective, MatchesStraightLineOracle) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_objective_instance(rng);
    const double lib = linear_objective(inst.u, inst.v, inst.data, inst.positives, inst.negatives, inst.cfg);
    const double ref = oracle_linear_objective(inst);
    EXPECT_NEAR(lib, ref, 1e-12) << t;
    EXPECT_NEAR(batch_loss(inst.pos, inst.neg, inst.cfg), oracle_batch_loss(inst), 1e-12) << t;
  }
}

TEST(LinearObjective, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    auto inst = random_objective_instance(rng);
    bool near_kink = false;
    for (const auto& [a, b] : inst.negatives) {
      const Vector za = linear_forward(inst.data.mod_a.row(a), inst.u);
      const Vector zb = linear_forward(inst.data.mod_b.row(b), inst.v);
      near_kink |= std::abs(cosine_similarity(za, zb) - inst.cfg.gamma) < 1e-4;
    }
    if (near_kink) continue;
    const auto g = linear_objective_grad(inst.u, inst.v, inst.data, inst.positives, inst.negatives, inst.cfg);
    EXPECT_NEAR(g.value, linear_objective(inst.u, inst.v, inst.data, inst.positives, inst.negatives, inst.cfg), 1e-12);
    auto f = [&] { return linear_objective(inst.u, inst.v, inst.data, inst.positives, inst.negatives, inst.cfg); };
    EXPECT_LT(max_relative_error(g.grad_u.data(), central_differences(inst.u.weight.data(), f), 1e-4), 1e-6);
    EXPECT_LT(max_relative_error(g.grad_v.data(), central_differences(inst.v.weight.data(), f), 1e-4), 1e-6);
  }
}

TEST(ContrastiveConfig, Validation) {
  ContrastiveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.lambda_neg = -1;
  EXPECT_THROW(c.validate(), ArgumentError);
}
