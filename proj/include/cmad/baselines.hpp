#pragma once

#include <algorithm>
#include <numeric>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cmad/data.hpp"
#include "cmad/detection.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"

namespace cmad {

enum class BaselineMethod { cca, pls, kcca };

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::cca: return "cca";
    case BaselineMethod::pls: return "pls";
    case BaselineMethod::kcca: return "kcca";
  }
  return "?";
}

inline BaselineMethod parse_baseline_method(std::string_view s) {
  if (s == "cca") return BaselineMethod::cca;
  if (s == "pls") return BaselineMethod::pls;
  if (s == "kcca") return BaselineMethod::kcca;
  throw ArgumentError("unknown baseline method '" + std::string(s) + "' (expected cca, pls or kcca)");
}

enum class Kernel { rbf, linear };

// Snapshot needed to project new points through a kernel CCA solution.
struct KernelSide {
  Kernel kernel = Kernel::rbf;
  double bandwidth = 1.0;
  Matrix train;       // raw training rows
  Vector col_means;   // column means of the uncentred training Gram matrix
  double grand_mean = 0.0;
  Matrix alpha;       // N x r dual coefficients

  bool operator==(const KernelSide&) const = default;
};

struct LinearBaselineModel {
  BaselineMethod method = BaselineMethod::cca;
  Matrix proj_a;  // d_A x r (unused for kcca)
  Matrix proj_b;
  Vector mean_a;
  Vector mean_b;
  Vector correlations;  // canonical correlations (cca, kcca) or cross-covariances (pls)
  double ridge = 0.0;
  KernelSide kernel_a;
  KernelSide kernel_b;

  std::size_t rank() const { return correlations.size(); }
  Matrix embed_a(const Matrix& x) const;
  Matrix embed_b(const Matrix& x) const;
  bool operator==(const LinearBaselineModel&) const = default;
};

namespace detail {

struct CenteredPair {
  Vector mean_a, mean_b;
  Matrix a, b;
};

inline CenteredPair center_pair(const Matrix& ma, const Matrix& mb, std::size_t r, const char* who) {
  if (ma.rows() != mb.rows()) throw ArgumentError(std::string(who) + ": modalities have different row counts");
  if (ma.rows() < 2) throw ArgumentError(std::string(who) + ": need at least 2 rows");
  if (r < 1 || r > std::min(ma.cols(), mb.cols())) {
    throw ArgumentError(std::string(who) + ": r=" + std::to_string(r) + " outside [1, min(d_A, d_B)]");
  }
  CenteredPair c;
  c.mean_a = column_means(ma);
  c.mean_b = column_means(mb);
  c.a = subtract_row_vector(ma, c.mean_a);
  c.b = subtract_row_vector(mb, c.mean_b);
  return c;
}

inline Matrix covariance(const Matrix& x, const Matrix& y) {
  return (1.0 / static_cast<double>(x.rows() - 1)) * matmul_tn(x, y);
}

inline Matrix column_block(const Matrix& m, std::size_t k) { return leading_columns(m, k); }

}  // namespace detail

// Canonical correlation analysis through the SVD of the whitened
// cross-covariance (C_aa + ridge I)^{-1/2} C_ab (C_bb + ridge I)^{-1/2}.
inline LinearBaselineModel cca_fit(const Matrix& ma, const Matrix& mb, std::size_t r, double ridge = 1e-6) {
  if (!(ridge >= 0.0)) throw ArgumentError("cca_fit: ridge must be >= 0");
  auto c = detail::center_pair(ma, mb, r, "cca_fit");
  Matrix caa = detail::covariance(c.a, c.a);
  Matrix cbb = detail::covariance(c.b, c.b);
  for (std::size_t i = 0; i < caa.rows(); ++i) caa(i, i) += ridge;
  for (std::size_t i = 0; i < cbb.rows(); ++i) cbb(i, i) += ridge;
  const Matrix wa = inverse_sqrt_spd(caa);
  const Matrix wb = inverse_sqrt_spd(cbb);
  const Matrix t = matmul(matmul(wa, detail::covariance(c.a, c.b)), wb);
  const SvdResult s = svd(t);

  LinearBaselineModel m;
  m.method = BaselineMethod::cca;
  m.ridge = ridge;
  m.proj_a = matmul(wa, detail::column_block(s.u, r));
  m.proj_b = matmul(wb, detail::column_block(transpose(s.vt), r));
  m.mean_a = std::move(c.mean_a);
  m.mean_b = std::move(c.mean_b);
  for (std::size_t k = 0; k < r; ++k) m.correlations.push_back(std::clamp(s.singular_values[k], 0.0, 1.0));
  return m;
}

// Partial least squares: top singular vector pairs of the centred cross-covariance.
inline LinearBaselineModel pls_fit(const Matrix& ma, const Matrix& mb, std::size_t r) {
  auto c = detail::center_pair(ma, mb, r, "pls_fit");
  const SvdResult s = svd(detail::covariance(c.a, c.b));
  LinearBaselineModel m;
  m.method = BaselineMethod::pls;
  m.proj_a = detail::column_block(s.u, r);
  m.proj_b = detail::column_block(transpose(s.vt), r);
  m.mean_a = std::move(c.mean_a);
  m.mean_b = std::move(c.mean_b);
  m.correlations.assign(s.singular_values.begin(), s.singular_values.begin() + static_cast<std::ptrdiff_t>(r));
  return m;
}

// ---------------------------------------------------------------------------
// Kernel CCA

namespace detail {

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

inline double kernel_value(Kernel k, double bandwidth, std::span<const double> x, std::span<const double> y) {
  if (k == Kernel::linear) return dot(x, y);
  return std::exp(-squared_distance(x, y) / (2.0 * bandwidth * bandwidth));
}

inline Matrix gram(Kernel k, double bandwidth, const Matrix& x, const Matrix& y) {
  Matrix g(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) g(i, j) = kernel_value(k, bandwidth, x.row(i), y.row(j));
  return g;
}

// H K H with H = I - 11^T/N; also returns the statistics needed for new points.
inline Matrix center_gram(const Matrix& k, Vector& col_means, double& grand_mean) {
  const std::size_t n = k.rows();
  col_means = column_means(k);
  grand_mean = std::accumulate(col_means.begin(), col_means.end(), 0.0) / static_cast<double>(n);
  Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) = k(i, j) - col_means[i] - col_means[j] + grand_mean;
  return c;
}

}  // namespace detail

// Bandwidth sigma = sqrt(median squared pairwise distance / 2).
inline double median_heuristic_bandwidth(const Matrix& x) {
  if (x.rows() < 2) throw ArgumentError("median_heuristic_bandwidth: need at least 2 rows");
  std::vector<double> d;
  d.reserve(x.rows() * (x.rows() - 1) / 2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) d.push_back(detail::squared_distance(x.row(i), x.row(j)));
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  const double bw = std::sqrt(*mid / 2.0);
  return bw > 0.0 ? bw : 1.0;
}

struct KccaOptions {
  Kernel kernel = Kernel::rbf;
  double bandwidth_a = 0.0;  // <= 0 selects the median heuristic
  double bandwidth_b = 0.0;
  // Same units as the CCA ridge: the dual problem uses (N - 1) * ridge.
  double ridge = 1e-3;
};

// Regularised kernel CCA. With eigen-decomposition K = Q L Q^T of each centred
// Gram matrix, R = Q sqrt(L / (L + kappa)) Q^T and the canonical correlations are
// the singular values of R_a R_b.
inline LinearBaselineModel kcca_fit(const Matrix& ma, const Matrix& mb, std::size_t r, const KccaOptions& opt = {}) {
  if (!(opt.ridge > 0.0)) throw ArgumentError("kcca_fit: ridge must be > 0");
  if (ma.rows() > 2000) throw ArgumentError("kcca_fit: dense kernels are limited to N <= 2000");
  if (ma.rows() != mb.rows()) throw ArgumentError("kcca_fit: modalities have different row counts");
  if (ma.rows() < 2) throw ArgumentError("kcca_fit: need at least 2 rows");
  const std::size_t n = ma.rows();
  if (r < 1 || r > n) throw ArgumentError("kcca_fit: r outside [1, N]");
  const double kappa = static_cast<double>(n - 1) * opt.ridge;

  LinearBaselineModel m;
  m.method = BaselineMethod::kcca;
  m.ridge = opt.ridge;

  struct Side {
    KernelSide snapshot;
    Matrix r_mat;
    SymmetricEigen eig;
  };
  auto prepare = [&](const Matrix& x, double bw) {
    Side s;
    s.snapshot.kernel = opt.kernel;
    s.snapshot.bandwidth = opt.kernel == Kernel::rbf ? (bw > 0.0 ? bw : median_heuristic_bandwidth(x)) : 1.0;
    s.snapshot.train = x;
    const Matrix k = detail::gram(opt.kernel, s.snapshot.bandwidth, x, x);
    const Matrix kc = detail::center_gram(k, s.snapshot.col_means, s.snapshot.grand_mean);
    s.eig = psd_eigen(kc);
    Matrix scaled(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double l = s.eig.values[j];
        scaled(i, j) = s.eig.vectors(i, j) * std::sqrt(l / (l + kappa));
      }
    s.r_mat = matmul_nt(scaled, s.eig.vectors);
    return s;
  };
  Side a = prepare(ma, opt.bandwidth_a);
  Side b = prepare(mb, opt.bandwidth_b);
  const SvdResult s = svd(matmul(a.r_mat, b.r_mat));
  if (!all_finite(s.singular_values)) throw DecompositionError("kcca_fit: regularised system is singular");

  // alpha = (K (K + kappa I))^{-1/2} u on the non-null eigenspace of K.
  auto dual = [&](const Side& side, const Matrix& dirs) {
    const double top = side.eig.values.empty() ? 0.0 : side.eig.values[0];
    Matrix scaled(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double l = side.eig.values[j];
        scaled(i, j) = l > top * 1e-12 ? side.eig.vectors(i, j) / std::sqrt(l * (l + kappa)) : 0.0;
      }
    return matmul(matmul_nt(scaled, side.eig.vectors), dirs);
  };
  a.snapshot.alpha = dual(a, detail::column_block(s.u, r));
  b.snapshot.alpha = dual(b, detail::column_block(transpose(s.vt), r));
  m.kernel_a = std::move(a.snapshot);
  m.kernel_b = std::move(b.snapshot);
  for (std::size_t k = 0; k < r; ++k) m.correlations.push_back(std::clamp(s.singular_values[k], 0.0, 1.0));
  return m;
}

namespace detail {

inline Matrix kernel_project(const KernelSide& side, const Matrix& x) {
  if (x.cols() != side.train.cols()) throw ArgumentError("baseline embed: input width does not match the model");
  const Matrix k = gram(side.kernel, side.bandwidth, x, side.train);
  Matrix kc(k.rows(), k.cols());
  for (std::size_t i = 0; i < k.rows(); ++i) {
    auto row = k.row(i);
    const double row_mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    for (std::size_t j = 0; j < k.cols(); ++j) kc(i, j) = row[j] - row_mean - side.col_means[j] + side.grand_mean;
  }
  return matmul(kc, side.alpha);
}

inline Matrix linear_project(const Matrix& proj, std::span<const double> mean, const Matrix& x) {
  if (x.cols() != proj.rows()) throw ArgumentError("baseline embed: input width does not match the model");
  return matmul(subtract_row_vector(x, mean), proj);
}

}  // namespace detail

inline Matrix LinearBaselineModel::embed_a(const Matrix& x) const {
  return method == BaselineMethod::kcca ? detail::kernel_project(kernel_a, x) : detail::linear_project(proj_a, mean_a, x);
}

inline Matrix LinearBaselineModel::embed_b(const Matrix& x) const {
  return method == BaselineMethod::kcca ? detail::kernel_project(kernel_b, x) : detail::linear_project(proj_b, mean_b, x);
}

// Cosine similarity of the two projected, mean-subtracted vectors.
inline double baseline_score(const LinearBaselineModel& m, std::span<const double> x_a, std::span<const double> x_b) {
  return score(m, x_a, x_b);
}

// Fits on the aligned consistent rows only.
inline LinearBaselineModel fit_baseline(const Dataset& d, BaselineMethod method, std::size_t r, double ridge,
                                        const KccaOptions& kcca = {}) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels_a[i] == d.labels_b[i]) rows.push_back(i);
  const Matrix a = select_rows(d.mod_a, rows);
  const Matrix b = select_rows(d.mod_b, rows);
  switch (method) {
    case BaselineMethod::cca: return cca_fit(a, b, r, ridge);
    case BaselineMethod::pls: return pls_fit(a, b, r);
    case BaselineMethod::kcca: {
      KccaOptions o = kcca;
      o.ridge = ridge;
      return kcca_fit(a, b, r, o);
    }
  }
  throw ArgumentError("fit_baseline: unknown method");
}

// ---------------------------------------------------------------------------
// Persistence

inline io::BlockFile baseline_blocks(const LinearBaselineModel& m) {
  io::BlockFile f;
  f.header = {{"version", "1"},
              {"method", to_string(m.method)},
              {"r", std::to_string(m.rank())},
              {"ridge", io::format_double(m.ridge)}};
  f.blocks.emplace_back("correlations", io::row_vector(m.correlations));
  if (m.method == BaselineMethod::kcca) {
    f.header.emplace_back("kernel", m.kernel_a.kernel == Kernel::rbf ? "rbf" : "linear");
    f.header.emplace_back("bandwidth_a", io::format_double(m.kernel_a.bandwidth));
    f.header.emplace_back("bandwidth_b", io::format_double(m.kernel_b.bandwidth));
    f.header.emplace_back("grand_mean_a", io::format_double(m.kernel_a.grand_mean));
    f.header.emplace_back("grand_mean_b", io::format_double(m.kernel_b.grand_mean));
    for (const auto& [name, side] : {std::pair{"a", &m.kernel_a}, std::pair{"b", &m.kernel_b}}) {
      const std::string p(name);
      f.blocks.emplace_back("train_" + p, side->train);
      f.blocks.emplace_back("col_means_" + p, io::row_vector(side->col_means));
      f.blocks.emplace_back("alpha_" + p, side->alpha);
    }
  } else {
    f.blocks.emplace_back("proj_a", m.proj_a);
    f.blocks.emplace_back("proj_b", m.proj_b);
    f.blocks.emplace_back("mean_a", io::row_vector(m.mean_a));
    f.blocks.emplace_back("mean_b", io::row_vector(m.mean_b));
  }
  return f;
}

inline LinearBaselineModel baseline_from_blocks(const io::ParsedBlockFile& f, const std::string& what) {
  LinearBaselineModel m;
  m.method = parse_baseline_method(f.header.require("method"));
  m.ridge = f.header.real("ridge");
  const std::size_t r = f.header.count("r");
  const Matrix& corr = f.raw.block("correlations", what);
  if (corr.rows() != 1 || corr.cols() != r) throw FormatError(what + ": correlations block must be 1 x r");
  m.correlations.assign(corr.data().begin(), corr.data().end());
  auto vec = [&](const std::string& name) {
    const Matrix& b = f.raw.block(name, what);
    if (b.rows() != 1) throw FormatError(what + ": block '" + name + "' must have one row");
    return Vector(b.data().begin(), b.data().end());
  };
  if (m.method == BaselineMethod::kcca) {
    const auto kernel = f.header.require("kernel");
    if (kernel != "rbf" && kernel != "linear") throw FormatError(what + ": unknown kernel '" + kernel + "'");
    for (auto [name, side] : {std::pair{"a", &m.kernel_a}, std::pair{"b", &m.kernel_b}}) {
      const std::string p(name);
      side->kernel = kernel == "rbf" ? Kernel::rbf : Kernel::linear;
      side->bandwidth = f.header.real("bandwidth_" + p);
      side->grand_mean = f.header.real("grand_mean_" + p);
      side->train = f.raw.block("train_" + p, what);
      side->col_means = vec("col_means_" + p);
      side->alpha = f.raw.block("alpha_" + p, what);
      if (side->alpha.rows() != side->train.rows() || side->alpha.cols() != r ||
          side->col_means.size() != side->train.rows()) {
        throw FormatError(what + ": kernel blocks for modality " + p + " have inconsistent shapes");
      }
    }
  } else {
    m.proj_a = f.raw.block("proj_a", what);
    m.proj_b = f.raw.block("proj_b", what);
    m.mean_a = vec("mean_a");
    m.mean_b = vec("mean_b");
    if (m.proj_a.cols() != r || m.proj_b.cols() != r || m.mean_a.size() != m.proj_a.rows() ||
        m.mean_b.size() != m.proj_b.rows()) {
      throw FormatError(what + ": projection blocks have inconsistent shapes");
    }
  }
  return m;
}

}  // namespace cmad
