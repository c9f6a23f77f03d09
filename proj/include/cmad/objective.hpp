#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmad/data.hpp"
#include "cmad/encoders.hpp"
#include "cmad/errors.hpp"
#include "cmad/numerics.hpp"

namespace cmad {

// Norms below this are treated as zero: similarity 0, gradient 0.
inline constexpr double kZeroNorm = 1e-12;

struct ContrastiveConfig {
  double gamma = 0.3;       // margin on negative-pair similarity
  double lambda_neg = 1.0;  // weight of the negative hinge sum
  double lambda_reg = 1e-3; // Frobenius penalty, linear model only

  void validate() const {
    if (!(gamma >= -1.0 && gamma <= 1.0)) throw ArgumentError("gamma must be in [-1, 1]");
    if (!(lambda_neg >= 0.0)) throw ArgumentError("lambda_neg must be >= 0");
    if (!(lambda_reg >= 0.0)) throw ArgumentError("lambda_reg must be >= 0");
  }
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ArgumentError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()) + " differ");
  }
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// d cos(a, b) / d a, scaled by `weight` and added into `out`.
inline void add_cosine_gradient(std::span<const double> a, std::span<const double> b, double weight,
                                std::span<double> out) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < kZeroNorm || nb < kZeroNorm || weight == 0.0) return;
  const double c = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  const double self = c / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += weight * (b[i] * inv - self * a[i]);
}

inline double positive_term(double f) { return 1.0 - f; }

inline double negative_term(double f, double gamma) { return std::max(0.0, f - gamma); }

// Row-aligned embeddings of pairs: row k of `a` pairs with row k of `b`.
struct PairEmbeddings {
  Matrix a;
  Matrix b;

  std::size_t size() const { return a.rows(); }
};

namespace detail {

inline void check_pairs(const PairEmbeddings& p, const char* what) {
  if (p.a.rows() != p.b.rows()) throw ArgumentError(std::string(what) + ": pair sides have different counts");
  if (p.a.rows() > 0 && p.a.cols() != p.b.cols()) {
    throw ArgumentError(std::string(what) + ": embedding dimensions differ");
  }
}

}  // namespace detail

// Sum over positives of (1 - cos) plus lambda_neg * sum over negatives of max(0, cos - gamma).
inline double batch_loss(const PairEmbeddings& pos, const PairEmbeddings& neg, const ContrastiveConfig& cfg) {
  detail::check_pairs(pos, "batch_loss positives");
  detail::check_pairs(neg, "batch_loss negatives");
  double pos_sum = 0.0;
  for (std::size_t k = 0; k < pos.size(); ++k) pos_sum += positive_term(cosine_similarity(pos.a.row(k), pos.b.row(k)));
  double neg_sum = 0.0;
  for (std::size_t k = 0; k < neg.size(); ++k)
    neg_sum += negative_term(cosine_similarity(neg.a.row(k), neg.b.row(k)), cfg.gamma);
  return pos_sum + cfg.lambda_neg * neg_sum;
}

struct BatchLossGrad {
  double loss = 0.0;
  PairEmbeddings pos;  // gradients, same shapes as the inputs
  PairEmbeddings neg;
  double mean_pos_cos = 0.0;
  double mean_neg_cos = 0.0;
};

// Exact gradient of batch_loss with respect to every embedding row. The hinge
// at cos == gamma takes the inactive (zero) branch.
inline BatchLossGrad batch_loss_grad(const PairEmbeddings& pos, const PairEmbeddings& neg,
                                     const ContrastiveConfig& cfg) {
  detail::check_pairs(pos, "batch_loss_grad positives");
  detail::check_pairs(neg, "batch_loss_grad negatives");
  BatchLossGrad g;
  g.pos = {Matrix(pos.a.rows(), pos.a.cols()), Matrix(pos.b.rows(), pos.b.cols())};
  g.neg = {Matrix(neg.a.rows(), neg.a.cols()), Matrix(neg.b.rows(), neg.b.cols())};
  double pos_sum = 0.0, neg_sum = 0.0, pos_cos = 0.0, neg_cos = 0.0;
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double c = cosine_similarity(pos.a.row(k), pos.b.row(k));
    pos_cos += c;
    pos_sum += positive_term(c);
    add_cosine_gradient(pos.a.row(k), pos.b.row(k), -1.0, g.pos.a.row(k));
    add_cosine_gradient(pos.b.row(k), pos.a.row(k), -1.0, g.pos.b.row(k));
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    const double c = cosine_similarity(neg.a.row(k), neg.b.row(k));
    neg_cos += c;
    neg_sum += negative_term(c, cfg.gamma);
    if (c > cfg.gamma) {
      add_cosine_gradient(neg.a.row(k), neg.b.row(k), cfg.lambda_neg, g.neg.a.row(k));
      add_cosine_gradient(neg.b.row(k), neg.a.row(k), cfg.lambda_neg, g.neg.b.row(k));
    }
  }
  g.loss = pos_sum + cfg.lambda_neg * neg_sum;
  g.mean_pos_cos = pos.size() ? pos_cos / static_cast<double>(pos.size()) : 0.0;
  g.mean_neg_cos = neg.size() ? neg_cos / static_cast<double>(neg.size()) : 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Linear model objective

using IndexPair = std::pair<std::size_t, std::size_t>;  // (row in mod_a, row in mod_b)

namespace detail {

inline PairEmbeddings project_pairs(const LinearProjector& u, const LinearProjector& v, const Dataset& data,
                                    std::span<const IndexPair> pairs) {
  std::vector<std::size_t> ia, ib;
  for (const auto& [a, b] : pairs) {
    ia.push_back(a);
    ib.push_back(b);
  }
  return {linear_forward(select_rows(data.mod_a, ia), u), linear_forward(select_rows(data.mod_b, ib), v)};
}

inline void check_linear(const LinearProjector& u, const LinearProjector& v, const Dataset& data) {
  if (u.input_dim() != data.dim_a() || v.input_dim() != data.dim_b()) {
    throw ArgumentError("linear objective: projector input dims do not match the dataset");
  }
  if (u.output_dim() != v.output_dim()) throw ArgumentError("linear objective: projectors disagree on r");
}

}  // namespace detail

// Positive terms + lambda_neg * hinge terms + lambda_reg * (|U|_F^2 + |V|_F^2).
inline double linear_objective(const LinearProjector& u, const LinearProjector& v, const Dataset& data,
                               std::span<const IndexPair> positives, std::span<const IndexPair> negatives,
                               const ContrastiveConfig& cfg) {
  detail::check_linear(u, v, data);
  const double fit = batch_loss(detail::project_pairs(u, v, data, positives),
                                detail::project_pairs(u, v, data, negatives), cfg);
  const double nu = frobenius_norm(u.weight);
  const double nv = frobenius_norm(v.weight);
  return fit + cfg.lambda_reg * (nu * nu + nv * nv);
}

struct LinearObjectiveGrad {
  double value = 0.0;
  Matrix grad_u;
  Matrix grad_v;
};

inline LinearObjectiveGrad linear_objective_grad(const LinearProjector& u, const LinearProjector& v,
                                                 const Dataset& data, std::span<const IndexPair> positives,
                                                 std::span<const IndexPair> negatives, const ContrastiveConfig& cfg) {
  detail::check_linear(u, v, data);
  const auto pos = detail::project_pairs(u, v, data, positives);
  const auto neg = detail::project_pairs(u, v, data, negatives);
  const auto g = batch_loss_grad(pos, neg, cfg);
  LinearObjectiveGrad out;
  out.grad_u = (2.0 * cfg.lambda_reg) * u.weight;
  out.grad_v = (2.0 * cfg.lambda_reg) * v.weight;
  auto accumulate = [](Matrix& grad, const Matrix& x, std::size_t row, std::span<const double> gz) {
    auto xr = x.row(row);
    for (std::size_t i = 0; i < xr.size(); ++i) {
      if (xr[i] == 0.0) continue;
      auto gr = grad.row(i);
      for (std::size_t j = 0; j < gz.size(); ++j) gr[j] += xr[i] * gz[j];
    }
  };
  for (std::size_t k = 0; k < positives.size(); ++k) {
    accumulate(out.grad_u, data.mod_a, positives[k].first, g.pos.a.row(k));
    accumulate(out.grad_v, data.mod_b, positives[k].second, g.pos.b.row(k));
  }
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    accumulate(out.grad_u, data.mod_a, negatives[k].first, g.neg.a.row(k));
    accumulate(out.grad_v, data.mod_b, negatives[k].second, g.neg.b.row(k));
  }
  const double nu = frobenius_norm(u.weight);
  const double nv = frobenius_norm(v.weight);
  out.value = g.loss + cfg.lambda_reg * (nu * nu + nv * nv);
  return out;
}

}  // namespace cmad
