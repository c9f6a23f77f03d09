#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cmad/data.hpp"
#include "cmad/encoders.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"
#include "cmad/objective.hpp"

namespace cmad {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double neg_ratio = 1.0;
  ContrastiveConfig contrastive;
  AdamConfig adam;
  std::vector<std::size_t> arch_a;
  std::vector<std::size_t> arch_b;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  double cross_class_positive_ratio = 0.25;
  // When false, biases stay at zero so a single-layer encoder is a pure projection.
  bool train_bias = true;

  void validate() const {
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(neg_ratio > 0.0)) throw ArgumentError("neg_ratio must be > 0");
    if (!(cross_class_positive_ratio >= 0.0 && cross_class_positive_ratio <= 1.0)) {
      throw ArgumentError("cross_class_positive_ratio must be in [0, 1]");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout must be in [0, 1)");
    if (!(adam.lr > 0.0)) throw ArgumentError("lr must be > 0");
    if (arch_a.size() < 2 || arch_b.size() < 2) throw ArgumentError("architectures need at least 2 dimensions");
    if (arch_a.back() != arch_b.back()) throw ArgumentError("arch_a and arch_b must end in the same embedding width");
    contrastive.validate();
  }
};

struct PairBatch {
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_pos_cos = 0.0;
  double mean_neg_cos = 0.0;

  bool operator==(const EpochStats&) const = default;
};

// Frozen dual encoder. Scoring always runs the encoders in eval mode.
struct TrainedModel {
  MlpEncoder encoder_a;
  MlpEncoder encoder_b;
  TrainConfig config;
  std::vector<EpochStats> trace;

  Matrix embed_a(const Matrix& x) const { return embed(x, encoder_a); }
  Matrix embed_b(const Matrix& x) const { return embed(x, encoder_b); }
};

// Rows of each modality grouped by label, used for same-class cross-index positives.
class PairSampler {
 public:
  explicit PairSampler(const Dataset& d) : data_(d) {
    d.validate();
    if (!detail::has_cross_label_pair(d)) {
      throw InfeasibleError("sample_pairs: dataset has a single class, negatives cannot be drawn");
    }
    by_class_b_.resize(static_cast<std::size_t>(d.num_classes));
    for (std::size_t i = 0; i < d.size(); ++i) {
      by_class_b_[static_cast<std::size_t>(d.labels_b[i])].push_back(i);
      if (d.labels_a[i] == d.labels_b[i]) aligned_.push_back(i);
    }
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!by_class_b_[static_cast<std::size_t>(d.labels_a[i])].empty()) has_partner_.push_back(i);
    if (has_partner_.empty()) throw InfeasibleError("sample_pairs: no row of modality A has a same-class partner in B");
  }

  PairBatch sample(std::size_t batch_size, double neg_ratio, double cross_ratio, Rng& rng) const {
    PairBatch b;
    const std::size_t n = data_.size();
    const auto n_cross = static_cast<std::size_t>(std::llround(cross_ratio * static_cast<double>(batch_size)));
    const std::size_t n_aligned = batch_size - std::min(n_cross, batch_size);
    for (std::size_t k = 0; k < n_aligned; ++k) {
      if (aligned_.empty()) {
        b.positives.push_back(cross_positive(rng));
      } else {
        const std::size_t i = aligned_[rng.uniform_index(aligned_.size())];
        b.positives.emplace_back(i, i);
      }
    }
    for (std::size_t k = n_aligned; k < batch_size; ++k) b.positives.push_back(cross_positive(rng));
    const auto n_neg = static_cast<std::size_t>(std::ceil(neg_ratio * static_cast<double>(batch_size)));
    for (std::size_t k = 0; k < n_neg; ++k) {
      std::size_t i, j;
      do {
        i = rng.uniform_index(n);
        j = rng.uniform_index(n);
      } while (data_.labels_a[i] == data_.labels_b[j]);
      b.negatives.emplace_back(i, j);
    }
    return b;
  }

 private:
  IndexPair cross_positive(Rng& rng) const {
    const std::size_t i = has_partner_[rng.uniform_index(has_partner_.size())];
    const auto& same = by_class_b_[static_cast<std::size_t>(data_.labels_a[i])];
    if (same.size() == 1) return {i, same[0]};
    std::size_t j;
    do {
      j = same[rng.uniform_index(same.size())];
    } while (j == i);
    return {i, j};
  }

  const Dataset& data_;
  std::vector<std::vector<std::size_t>> by_class_b_;
  std::vector<std::size_t> aligned_;
  std::vector<std::size_t> has_partner_;
};

inline PairBatch sample_pairs(const Dataset& d, std::size_t batch_size, double neg_ratio, double cross_ratio,
                              Rng& rng) {
  return PairSampler(d).sample(batch_size, neg_ratio, cross_ratio, rng);
}

// Seeds for the two encoder initialisations, derived from the run seed.
inline std::pair<std::uint64_t, std::uint64_t> encoder_seeds(std::uint64_t seed) {
  Rng r(seed);
  const std::uint64_t a = r.next_u64();
  const std::uint64_t b = r.next_u64();
  return {a, b};
}

namespace detail {

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

inline Matrix row_range(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()), count * m.cols(), out.data().begin());
  return out;
}

}  // namespace detail

// Batch-mean contrastive loss of a dual encoder and its gradient with respect to
// every parameter of both encoders. Rows [0, n_pos) of xa/xb are positive pairs,
// the remaining rows negatives.
struct DualLossGrad {
  double loss = 0.0;
  MlpGradients grad_a;
  MlpGradients grad_b;
  double mean_pos_cos = 0.0;
  double mean_neg_cos = 0.0;
};

inline DualLossGrad dual_loss_grad(const MlpEncoder& enc_a, const MlpEncoder& enc_b, const Matrix& xa,
                                   const Matrix& xb, std::size_t n_pos, const ContrastiveConfig& cfg, Mode mode,
                                   Rng* dropout_rng) {
  if (xa.rows() != xb.rows() || n_pos > xa.rows()) throw ArgumentError("dual_loss_grad: row counts disagree");
  const std::size_t total = xa.rows();
  const std::size_t n_neg = total - n_pos;
  auto [za, cache_a] = mlp_forward(xa, enc_a, mode, dropout_rng);
  auto [zb, cache_b] = mlp_forward(xb, enc_b, mode, dropout_rng);
  const PairEmbeddings pos{detail::row_range(za, 0, n_pos), detail::row_range(zb, 0, n_pos)};
  const PairEmbeddings neg{detail::row_range(za, n_pos, n_neg), detail::row_range(zb, n_pos, n_neg)};
  const BatchLossGrad g = batch_loss_grad(pos, neg, cfg);
  const double scale = total ? 1.0 / static_cast<double>(total) : 0.0;
  DualLossGrad out;
  out.loss = g.loss * scale;
  out.grad_a = mlp_backward(scale * detail::stack_rows(g.pos.a, g.neg.a), cache_a, enc_a).params;
  out.grad_b = mlp_backward(scale * detail::stack_rows(g.pos.b, g.neg.b), cache_b, enc_b).params;
  out.mean_pos_cos = g.mean_pos_cos;
  out.mean_neg_cos = g.mean_neg_cos;
  return out;
}

// Mini-batch training of both encoders on the contrastive objective with Adam.
// Each step uses the batch-mean loss; an epoch has ceil(N / batch_size) steps.
inline TrainedModel train_cmad(const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  d.validate();
  if (cfg.arch_a.front() != d.dim_a() || cfg.arch_b.front() != d.dim_b()) {
    throw ArgumentError("train_cmad: architecture input widths (" + std::to_string(cfg.arch_a.front()) + ", " +
                        std::to_string(cfg.arch_b.front()) + ") do not match dataset dims (" +
                        std::to_string(d.dim_a()) + ", " + std::to_string(d.dim_b()) + ")");
  }
  const auto [seed_a, seed_b] = encoder_seeds(cfg.seed);
  TrainedModel model;
  model.config = cfg;
  model.encoder_a = init_params(cfg.arch_a, seed_a, cfg.dropout_rate);
  model.encoder_b = init_params(cfg.arch_b, seed_b, cfg.dropout_rate);
  if (cfg.epochs == 0) return model;

  const PairSampler sampler(d);
  Rng master(cfg.seed ^ 0x5DEECE66DULL);
  Rng pair_rng = master.fork(1);
  Rng dropout_rng = master.fork(2);
  AdamState state{cfg.adam, 0, {}, {}};
  const std::size_t steps = std::max<std::size_t>(1, (d.size() + cfg.batch_size - 1) / cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0, pos_sum = 0.0, neg_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const PairBatch batch =
          sampler.sample(cfg.batch_size, cfg.neg_ratio, cfg.cross_class_positive_ratio, pair_rng);
      std::vector<std::size_t> rows_a, rows_b;
      for (const auto* list : {&batch.positives, &batch.negatives})
        for (const auto& [a, b] : *list) {
          rows_a.push_back(a);
          rows_b.push_back(b);
        }
      auto g = dual_loss_grad(model.encoder_a, model.encoder_b, select_rows(d.mod_a, rows_a),
                              select_rows(d.mod_b, rows_b), batch.positives.size(), cfg.contrastive, Mode::train,
                              &dropout_rng);
      if (!cfg.train_bias) {
        for (auto* grads : {&g.grad_a, &g.grad_b})
          for (auto& gb : grads->bias) std::fill(gb.begin(), gb.end(), 0.0);
      }
      auto params = parameter_spans(model.encoder_a);
      for (auto s : parameter_spans(model.encoder_b)) params.push_back(s);
      auto grads = gradient_spans(g.grad_a);
      for (auto s : gradient_spans(g.grad_b)) grads.push_back(s);
      adam_step(params, grads, state);

      loss_sum += g.loss;
      pos_sum += g.mean_pos_cos;
      neg_sum += g.mean_neg_cos;
    }
    const double k = static_cast<double>(steps);
    const EpochStats stats{epoch + 1, loss_sum / k, pos_sum / k, neg_sum / k};
    if (!std::isfinite(stats.mean_loss)) throw DivergenceError("train_cmad: loss became non-finite");
    model.trace.push_back(stats);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Linear model fitted by alternating block gradient descent.

struct LinearFitConfig {
  std::size_t r = 10;
  ContrastiveConfig contrastive;
  double neg_ratio = 1.0;
  std::size_t max_iters = 500;
  double tolerance = 1e-6;  // relative objective change
  double initial_step = 1.0;
  std::uint64_t seed = 0;
};

struct LinearModel {
  LinearProjector u;
  LinearProjector v;
  ContrastiveConfig contrastive;
  std::vector<double> objective_trace;  // value after each alternating round, starting with the initial value
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;

  double final_objective() const { return objective_trace.back(); }
  Matrix embed_a(const Matrix& x) const { return linear_forward(x, u); }
  Matrix embed_b(const Matrix& x) const { return linear_forward(x, v); }
};

// Aligned consistent rows as S, plus ceil(neg_ratio * |S|) rejection-sampled negatives.
inline PairBatch full_pair_sets(const Dataset& d, double neg_ratio, Rng& rng) {
  d.validate();
  if (!detail::has_cross_label_pair(d)) throw InfeasibleError("fit_linear: dataset has a single class");
  PairBatch b;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels_a[i] == d.labels_b[i]) b.positives.emplace_back(i, i);
  const auto n_neg = static_cast<std::size_t>(std::ceil(neg_ratio * static_cast<double>(b.positives.size())));
  for (std::size_t k = 0; k < n_neg; ++k) {
    std::size_t i, j;
    do {
      i = rng.uniform_index(d.size());
      j = rng.uniform_index(d.size());
    } while (d.labels_a[i] == d.labels_b[j]);
    b.negatives.emplace_back(i, j);
  }
  return b;
}

namespace detail {

// One backtracking descent step on a single block. Returns the accepted
// objective value, or `current` when no decreasing step was found.
template <class Eval>
double backtracking_block_step(Matrix& block, const Matrix& grad, double current, double& step, Eval&& eval) {
  constexpr double kMinStep = 1e-20;
  while (step > kMinStep) {
    Matrix trial = block - step * grad;
    const double value = eval(trial);
    if (!std::isfinite(value)) throw DivergenceError("fit_linear: objective became non-finite");
    if (value <= current) {
      block = std::move(trial);
      step *= 2.0;
      return value;
    }
    step *= 0.5;
  }
  step = kMinStep * 4.0;
  return current;
}

}  // namespace detail

inline LinearModel fit_linear(const Dataset& d, std::vector<IndexPair> positives, std::vector<IndexPair> negatives,
                              const LinearFitConfig& cfg, LinearProjector u, LinearProjector v) {
  cfg.contrastive.validate();
  if (cfg.r < 1 || cfg.r > std::min(d.dim_a(), d.dim_b())) {
    throw ArgumentError("fit_linear: r=" + std::to_string(cfg.r) + " outside [1, min(d_A, d_B)]");
  }
  LinearModel m{std::move(u), std::move(v), cfg.contrastive, {}, std::move(positives), std::move(negatives)};
  auto objective = [&](const LinearProjector& uu, const LinearProjector& vv) {
    return linear_objective(uu, vv, d, m.positives, m.negatives, cfg.contrastive);
  };
  double current = objective(m.u, m.v);
  if (!std::isfinite(current)) throw DivergenceError("fit_linear: initial objective is non-finite");
  m.objective_trace.push_back(current);
  double step_u = cfg.initial_step;
  double step_v = cfg.initial_step;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const double before = current;
    const auto gu = linear_objective_grad(m.u, m.v, d, m.positives, m.negatives, cfg.contrastive);
    current = detail::backtracking_block_step(m.u.weight, gu.grad_u, current, step_u, [&](const Matrix& w) {
      return objective(LinearProjector{w}, m.v);
    });
    const auto gv = linear_objective_grad(m.u, m.v, d, m.positives, m.negatives, cfg.contrastive);
    current = detail::backtracking_block_step(m.v.weight, gv.grad_v, current, step_v, [&](const Matrix& w) {
      return objective(m.u, LinearProjector{w});
    });
    m.objective_trace.push_back(current);
    const double denom = std::max(std::abs(before), 1e-300);
    if (std::abs(before - current) / denom < cfg.tolerance) break;
  }
  return m;
}

// Random Gaussian start (stddev 1/sqrt(d)) with pair sets drawn from cfg.seed.
inline LinearModel fit_linear(const Dataset& d, const LinearFitConfig& cfg) {
  Rng rng(cfg.seed);
  const auto sets = full_pair_sets(d, cfg.neg_ratio, rng);
  LinearProjector u{gaussian_sample(rng, d.dim_a(), cfg.r, 0.0, 1.0 / std::sqrt(static_cast<double>(d.dim_a())))};
  LinearProjector v{gaussian_sample(rng, d.dim_b(), cfg.r, 0.0, 1.0 / std::sqrt(static_cast<double>(d.dim_b())))};
  return fit_linear(d, sets.positives, sets.negatives, cfg, std::move(u), std::move(v));
}

// ---------------------------------------------------------------------------
// Persistence

inline std::string format_train_log(std::span<const EpochStats> trace) {
  std::string out = "epoch,mean_loss,mean_pos_cos,mean_neg_cos\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + "," + io::format_double(e.mean_loss) + "," + io::format_double(e.mean_pos_cos) +
           "," + io::format_double(e.mean_neg_cos) + "\n";
  }
  return out;
}

inline io::BlockFile trained_model_blocks(const TrainedModel& m) {
  const auto& c = m.config;
  io::BlockFile f;
  f.header = {{"version", "1"},
              {"method", "cmad"},
              {"arch_a", io::join_dims(m.encoder_a.arch())},
              {"arch_b", io::join_dims(m.encoder_b.arch())},
              {"r", std::to_string(m.encoder_a.output_dim())},
              {"gamma", io::format_double(c.contrastive.gamma)},
              {"seed", std::to_string(c.seed)},
              {"lambda", io::format_double(c.contrastive.lambda_neg)},
              {"epochs", std::to_string(c.epochs)},
              {"batch_size", std::to_string(c.batch_size)},
              {"neg_ratio", io::format_double(c.neg_ratio)},
              {"cross_class_positive_ratio", io::format_double(c.cross_class_positive_ratio)},
              {"lr", io::format_double(c.adam.lr)},
              {"beta1", io::format_double(c.adam.beta1)},
              {"beta2", io::format_double(c.adam.beta2)},
              {"adam_epsilon", io::format_double(c.adam.epsilon)},
              {"dropout", io::format_double(c.dropout_rate)},
              {"train_bias", c.train_bias ? "1" : "0"}};
  append_encoder(f, "a", m.encoder_a);
  append_encoder(f, "b", m.encoder_b);
  Matrix trace(m.trace.size(), 4);
  for (std::size_t i = 0; i < m.trace.size(); ++i) {
    trace(i, 0) = static_cast<double>(m.trace[i].epoch);
    trace(i, 1) = m.trace[i].mean_loss;
    trace(i, 2) = m.trace[i].mean_pos_cos;
    trace(i, 3) = m.trace[i].mean_neg_cos;
  }
  f.blocks.emplace_back("trace", std::move(trace));
  return f;
}

inline TrainedModel trained_model_from_blocks(const io::ParsedBlockFile& f, const std::string& what) {
  const auto& h = f.header;
  TrainedModel m;
  auto& c = m.config;
  c.arch_a = io::parse_dims(h.require("arch_a"), what + " arch_a");
  c.arch_b = io::parse_dims(h.require("arch_b"), what + " arch_b");
  c.contrastive.gamma = h.real("gamma");
  c.contrastive.lambda_neg = h.real("lambda");
  c.seed = h.unsigned_integer("seed");
  c.epochs = h.count("epochs");
  c.batch_size = h.count("batch_size");
  c.neg_ratio = h.real("neg_ratio");
  c.cross_class_positive_ratio = h.real("cross_class_positive_ratio");
  c.adam.lr = h.real("lr");
  c.adam.beta1 = h.real("beta1");
  c.adam.beta2 = h.real("beta2");
  c.adam.epsilon = h.real("adam_epsilon");
  c.dropout_rate = h.real("dropout");
  c.train_bias = h.integer("train_bias") != 0;
  m.encoder_a = read_encoder(f, "a", what);
  m.encoder_b = read_encoder(f, "b", what);
  if (m.encoder_a.output_dim() != m.encoder_b.output_dim() || h.count("r") != m.encoder_a.output_dim()) {
    throw FormatError(what + ": encoder output widths disagree with r");
  }
  const Matrix& trace = f.raw.block("trace", what);
  if (trace.cols() != 4 && trace.rows() > 0) throw FormatError(what + ": trace block must have 4 columns");
  for (std::size_t i = 0; i < trace.rows(); ++i) {
    m.trace.push_back({static_cast<std::size_t>(trace(i, 0)), trace(i, 1), trace(i, 2), trace(i, 3)});
  }
  return m;
}

}  // namespace cmad
