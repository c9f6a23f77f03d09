#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmad/errors.hpp"

namespace cmad {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ArgumentError("Matrix: data length " + std::to_string(data_.size()) +
                          " != rows*cols " + std::to_string(rows_ * cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ArgumentError("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.row(i++).begin());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Elementary operations

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ArgumentError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                        std::to_string(b.rows()) + " differ");
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

// a^T * b without materialising the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ArgumentError("matmul_tn: row counts differ");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto out = c.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ArgumentError("matmul_nt: column counts differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

inline Matrix operator+(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("matrix add: shape mismatch");
  auto d = a.data();
  auto e = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += e[i];
  return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("matrix sub: shape mismatch");
  auto d = a.data();
  auto e = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
  return a;
}

inline Matrix operator*(double s, Matrix a) {
  for (double& v : a.data()) v *= s;
  return a;
}

inline double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline Vector column_means(const Matrix& a) {
  Vector mean(a.cols(), 0.0);
  if (a.rows() == 0) return mean;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(a.rows());
  return mean;
}

inline Matrix subtract_row_vector(Matrix a, std::span<const double> v) {
  if (v.size() != a.cols()) throw ArgumentError("subtract_row_vector: length mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= v[j];
  }
  return a;
}

inline Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw ArgumentError("select_rows: row index out of range");
    std::copy_n(a.row(idx[i]).begin(), a.cols(), out.row(i).begin());
  }
  return out;
}

inline Matrix leading_columns(const Matrix& a, std::size_t k) {
  Matrix out(a.rows(), k);
  for (std::size_t i = 0; i < a.rows(); ++i) std::copy_n(a.row(i).begin(), k, out.row(i).begin());
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers: xoshiro256** seeded through splitmix64.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static Rng from_state(const std::array<std::uint64_t, 4>& state) {
    Rng r(0);
    r.s_ = state;
    return r;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); rejection keeps it unbiased.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ArgumentError("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  // Standard normal via Box-Muller (cosine branch only, no cached state).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent child stream for a sub-task, derived deterministically.
  Rng fork(std::uint64_t stream) {
    std::uint64_t sm = next_u64() ^ (stream * 0xD1B54A32D192ED03ULL);
    Rng child(0);
    for (auto& w : child.s_) w = splitmix64(sm);
    return child;
  }

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};


// Fisher-Yates; std::shuffle is not reproducible across standard libraries.
template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(p), rng);
  return p;
}

inline Matrix gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ArgumentError("gaussian_sample: stddev must be >= 0");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = mean + stddev * rng.normal();
  return m;
}

// ---------------------------------------------------------------------------
// Singular value decomposition (one-sided Jacobi).

struct SvdResult {
  Matrix u;                     // rows x k, orthonormal columns
  Vector singular_values;       // k, non-increasing, non-negative
  Matrix vt;                    // k x cols, orthonormal rows
};

struct SvdOptions {
  int max_sweeps = 1000;
  double tolerance = 1e-12;  // relative off-diagonal threshold per column pair
};

namespace detail {

// Replaces every row not marked valid with a unit vector orthogonal to all
// other rows. Valid rows must already be orthonormal.
inline void complete_orthonormal_rows(Matrix& basis, std::vector<bool>& valid) {
  const std::size_t dim = basis.cols();
  std::size_t start = 0;
  for (std::size_t r = 0; r < basis.rows(); ++r) {
    if (valid[r]) continue;
    // Take the first unit vector with a healthy residual; failing that, the
    // largest one. Residual norms^2 sum to dim - #valid, so it is nonzero
    // while the basis is incomplete.
    Vector best;
    double best_norm = 0.0;
    for (std::size_t step = 0; step < dim && best_norm <= 0.5; ++step) {
      const std::size_t probe = (start + step) % dim;
      Vector cand(dim, 0.0);
      cand[probe] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q = 0; q < basis.rows(); ++q) {
          if (!valid[q]) continue;
          const double proj = dot(cand, basis.row(q));
          auto br = basis.row(q);
          for (std::size_t j = 0; j < dim; ++j) cand[j] -= proj * br[j];
        }
      }
      const double n = norm2(cand);
      if (n > best_norm) {
        best_norm = n;
        best = std::move(cand);
        if (n > 0.5) start = probe + 1;
      }
    }
    if (best_norm > 1e-8) {
      for (std::size_t j = 0; j < dim; ++j) basis(r, j) = best[j] / best_norm;
      valid[r] = true;
    }
    if (!valid[r]) throw DecompositionError("svd: could not complete orthonormal basis");
  }
}

// Requires a.rows() >= a.cols().
inline SvdResult svd_tall(const Matrix& a, const SvdOptions& opt) {
  const std::size_t n = a.cols();
  const std::size_t m = a.rows();
  // Work on columns of A stored as rows for contiguous access.
  Matrix w = transpose(a);
  Matrix v = Matrix::identity(n);  // row j holds column j of V
  // Columns at roundoff level relative to |A|_F count as zero; rotating pure
  // rounding noise against itself never settles.
  const double negligible = 1e-30 * dot(a.data(), a.data());

  bool converged = false;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = w.row(p);
        auto wq = w.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += wp[i] * wp[i];
          beta += wq[i] * wq[i];
          gamma += wp[i] * wq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= opt.tolerance * std::sqrt(alpha * beta)) continue;
        if (alpha <= negligible || beta <= negligible) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = wp[i];
          const double y = wq[i];
          wp[i] = c * x - s * y;
          wq[i] = s * x + c * y;
        }
        auto vp = v.row(p);
        auto vq = v.row(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) {
    throw DecompositionError("svd: no convergence after " + std::to_string(opt.max_sweeps) + " sweeps");
  }

  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(w.row(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.singular_values.resize(n);
  out.vt = Matrix(n, n);
  Matrix ut(n, m);  // rows are left singular vectors
  std::vector<bool> valid(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = sigma[j];
    std::copy_n(v.row(j).begin(), n, out.vt.row(k).begin());
    if (sigma[j] > 0.0 && sigma[j] * sigma[j] > negligible) {
      for (std::size_t i = 0; i < m; ++i) ut(k, i) = w(j, i) / sigma[j];
      valid[k] = true;
    }
  }
  complete_orthonormal_rows(ut, valid);
  out.u = transpose(ut);
  return out;
}

}  // namespace detail

// Thin SVD: A (m x n) = U (m x k) diag(s) Vt (k x n), k = min(m, n).
inline SvdResult svd(const Matrix& a, const SvdOptions& opt = {}) {
  if (a.rows() == 0 || a.cols() == 0) throw ArgumentError("svd: empty matrix");
  if (!all_finite(a.data())) throw ArgumentError("svd: non-finite entries");
  if (a.rows() >= a.cols()) return detail::svd_tall(a, opt);
  SvdResult t = detail::svd_tall(transpose(a), opt);
  return SvdResult{transpose(t.vt), std::move(t.singular_values), transpose(t.u)};
}

// Eigen-decomposition of a symmetric positive semi-definite matrix, via SVD.
// Eigenvalues are recovered as Rayleigh quotients so tiny negative values from
// rounding are clamped to zero.
struct SymmetricEigen {
  Vector values;  // non-increasing
  Matrix vectors; // columns
};

inline SymmetricEigen psd_eigen(const Matrix& s) {
  if (s.rows() != s.cols()) throw ArgumentError("psd_eigen: matrix not square");
  SvdResult d = svd(s);
  SymmetricEigen e{Vector(s.rows()), std::move(d.u)};
  const Matrix su = matmul(s, e.vectors);
  for (std::size_t k = 0; k < s.rows(); ++k) {
    double q = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) q += e.vectors(i, k) * su(i, k);
    e.values[k] = std::max(0.0, q);
  }
  return e;
}

// (S)^{-1/2} for symmetric positive definite S.
inline Matrix inverse_sqrt_spd(const Matrix& s) {
  SymmetricEigen e = psd_eigen(s);
  const std::size_t n = s.rows();
  Matrix scaled(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      if (e.values[k] <= 0.0) throw DecompositionError("inverse_sqrt_spd: matrix is singular");
      scaled(i, k) = e.vectors(i, k) / std::sqrt(e.values[k]);
    }
  return matmul_nt(scaled, e.vectors);
}

// ---------------------------------------------------------------------------
// Principal component analysis.

struct PcaResult {
  Matrix coords;             // N x k
  Matrix components;         // d x k, orthonormal columns
  Vector explained_variance; // k
  Vector mean;               // d
};

// Components are sign-normalised so their largest-magnitude entry is positive.
inline PcaResult pca_fit_project(const Matrix& x, std::size_t k) {
  if (x.rows() < 2) throw ArgumentError("pca: need at least 2 rows");
  if (k == 0 || k > std::min(x.rows(), x.cols())) {
    throw ArgumentError("pca: k=" + std::to_string(k) + " outside [1, min(N, d)]");
  }
  PcaResult out;
  out.mean = column_means(x);
  const Matrix centered = subtract_row_vector(x, out.mean);
  const SvdResult d = svd(centered);
  const std::size_t dim = x.cols();
  out.components = Matrix(dim, k);
  out.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto comp = d.vt.row(c);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < dim; ++j)
      if (std::abs(comp[j]) > std::abs(comp[arg])) arg = j;
    const double sign = comp[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < dim; ++j) out.components(j, c) = sign * comp[j];
    const double s = d.singular_values[c];
    out.explained_variance[c] = s * s / static_cast<double>(x.rows() - 1);
  }
  out.coords = matmul(centered, out.components);
  return out;
}

}  // namespace cmad
