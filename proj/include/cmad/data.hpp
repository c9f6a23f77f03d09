#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"

namespace cmad {

using Labels = std::vector<int>;

// Two aligned modality matrices with per-modality class labels.
struct Dataset {
  Matrix mod_a;
  Matrix mod_b;
  Labels labels_a;
  Labels labels_b;
  int num_classes = 0;

  std::size_t size() const { return mod_a.rows(); }
  std::size_t dim_a() const { return mod_a.cols(); }
  std::size_t dim_b() const { return mod_b.cols(); }

  // Throws ArgumentError describing the first violated invariant.
  void validate() const {
    const std::size_t n = mod_a.rows();
    if (mod_b.rows() != n || labels_a.size() != n || labels_b.size() != n) {
      throw ArgumentError("Dataset: row counts differ (mod_a " + std::to_string(n) + ", mod_b " +
                          std::to_string(mod_b.rows()) + ", labels_a " + std::to_string(labels_a.size()) +
                          ", labels_b " + std::to_string(labels_b.size()) + ")");
    }
    if (mod_a.cols() == 0 || mod_b.cols() == 0) throw ArgumentError("Dataset: modality dimension is zero");
    if (num_classes < 1) throw ArgumentError("Dataset: num_classes must be >= 1");
    for (const Labels* ls : {&labels_a, &labels_b})
      for (int l : *ls)
        if (l < 0 || l >= num_classes) {
          throw ArgumentError("Dataset: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
    if (!all_finite(mod_a.data()) || !all_finite(mod_b.data())) throw ArgumentError("Dataset: non-finite feature");
  }

  bool operator==(const Dataset&) const = default;
};

enum class Truth { consistent, anomalous };

struct EvalPair {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  Truth truth = Truth::consistent;

  bool operator==(const EvalPair&) const = default;
};

inline Dataset subset(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.mod_a = select_rows(d.mod_a, rows);
  out.mod_b = select_rows(d.mod_b, rows);
  out.num_classes = d.num_classes;
  for (std::size_t r : rows) {
    out.labels_a.push_back(d.labels_a[r]);
    out.labels_b.push_back(d.labels_b[r]);
  }
  return out;
}

// Seeded shuffle, then the first (1 - test_fraction) share becomes training data.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& d, double test_fraction, Rng& rng) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ArgumentError("split: test_fraction must be in [0, 1]");
  const auto perm = permutation(d.size(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
  const std::size_t n_train = d.size() - n_test;
  std::span<const std::size_t> all(perm);
  return {subset(d, all.first(n_train)), subset(d, all.subspan(n_train))};
}

// ---------------------------------------------------------------------------
// Synthetic generator

enum class Warp { none, tanh };

struct SyntheticOptions {
  int num_classes = 5;
  std::size_t per_class = 100;
  std::size_t d_a = 20;
  std::size_t d_b = 20;
  double noise = 0.1;
  Warp warp = Warp::none;
  // Gain applied inside the tanh; larger values saturate harder.
  double warp_gain = 2.0;
};

// Each class gets a standard-normal prototype per modality; instances are the
// prototype plus isotropic noise. With Warp::tanh, modality B is passed through
// tanh(gain * M x / sqrt(d_b)) for a fixed random mix M. Rows are shuffled and
// all instances are consistent (labels_a == labels_b).
inline Dataset gen_synthetic(const SyntheticOptions& opt, Rng& rng) {
  if (opt.num_classes < 2) throw ArgumentError("gen_synthetic: need at least 2 classes");
  if (opt.per_class < 1) throw ArgumentError("gen_synthetic: per_class must be >= 1");
  if (!(opt.noise >= 0.0)) throw ArgumentError("gen_synthetic: noise must be >= 0");
  if (opt.d_a == 0 || opt.d_b == 0) throw ArgumentError("gen_synthetic: dimensions must be >= 1");

  const auto c = static_cast<std::size_t>(opt.num_classes);
  const Matrix proto_a = gaussian_sample(rng, c, opt.d_a, 0.0, 1.0);
  const Matrix proto_b = gaussian_sample(rng, c, opt.d_b, 0.0, 1.0);
  Matrix mix;
  if (opt.warp == Warp::tanh) {
    mix = gaussian_sample(rng, opt.d_b, opt.d_b, 0.0, opt.warp_gain / std::sqrt(static_cast<double>(opt.d_b)));
  }

  const std::size_t n = c * opt.per_class;
  Dataset d;
  d.num_classes = opt.num_classes;
  d.mod_a = Matrix(n, opt.d_a);
  d.mod_b = Matrix(n, opt.d_b);
  d.labels_a.assign(n, 0);
  d.labels_b.assign(n, 0);
  const auto order = permutation(n, rng);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t row = order[k];
    const std::size_t cls = k / opt.per_class;
    d.labels_a[row] = static_cast<int>(cls);
    d.labels_b[row] = static_cast<int>(cls);
    for (std::size_t j = 0; j < opt.d_a; ++j) d.mod_a(row, j) = proto_a(cls, j) + opt.noise * rng.normal();
    Vector z(opt.d_b);
    for (std::size_t j = 0; j < opt.d_b; ++j) z[j] = proto_b(cls, j) + opt.noise * rng.normal();
    if (opt.warp == Warp::tanh) {
      for (std::size_t j = 0; j < opt.d_b; ++j) d.mod_b(row, j) = std::tanh(dot(mix.row(j), z));
    } else {
      std::copy(z.begin(), z.end(), d.mod_b.row(row).begin());
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Anomaly injection

namespace detail {

inline bool has_cross_label_pair(const Dataset& d) {
  const std::set<int> la(d.labels_a.begin(), d.labels_a.end());
  const std::set<int> lb(d.labels_b.begin(), d.labels_b.end());
  if (la.empty() || lb.empty()) return false;
  return !(la.size() == 1 && lb.size() == 1 && *la.begin() == *lb.begin());
}

}  // namespace detail

// Returns `num_anomalies` cross-class pairs (rejection sampled over random row
// pairs) followed by `num_anomalies` aligned consistent pairs drawn without
// replacement while rows last.
inline std::vector<EvalPair> inject_anomalies(const Dataset& d, std::size_t num_anomalies, Rng& rng) {
  d.validate();
  std::vector<EvalPair> pairs;
  if (num_anomalies == 0) return pairs;
  if (!detail::has_cross_label_pair(d)) {
    throw InfeasibleError("inject_anomalies: dataset has a single class, no inconsistent pair exists");
  }
  const std::size_t n = d.size();
  for (std::size_t k = 0; k < num_anomalies; ++k) {
    std::size_t a, b;
    do {
      a = rng.uniform_index(n);
      b = rng.uniform_index(n);
    } while (d.labels_a[a] == d.labels_b[b]);
    pairs.push_back({a, b, Truth::anomalous});
  }

  std::vector<std::size_t> aligned;
  for (std::size_t i = 0; i < n; ++i)
    if (d.labels_a[i] == d.labels_b[i]) aligned.push_back(i);
  if (aligned.empty()) throw InfeasibleError("inject_anomalies: no aligned consistent rows available");
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < num_anomalies; ++k) {
    if (k % aligned.size() == 0) {
      order = aligned;
      shuffle(std::span<std::size_t>(order), rng);
    }
    const std::size_t i = order[k % aligned.size()];
    pairs.push_back({i, i, Truth::consistent});
  }
  return pairs;
}

inline std::string format_pairs_csv(std::span<const EvalPair> pairs) {
  std::string out = "index_a,index_b,truth\n";
  for (const auto& p : pairs) {
    out += std::to_string(p.index_a) + "," + std::to_string(p.index_b) + "," +
           (p.truth == Truth::anomalous ? "anomalous" : "consistent") + "\n";
  }
  return out;
}

inline std::vector<EvalPair> parse_pairs_csv(std::string_view text, const Dataset& d) {
  auto lines = io::non_empty_lines(text);
  if (lines.empty() || io::trim(lines[0]) != "index_a,index_b,truth") {
    throw FormatError("pairs file: missing header 'index_a,index_b,truth'");
  }
  std::vector<EvalPair> pairs;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = io::split(lines[i], ',');
    if (f.size() != 3) throw FormatError("pairs file: line " + std::to_string(i + 1) + " needs 3 fields");
    EvalPair p;
    p.index_a = io::parse_uint(f[0], "pairs file index_a");
    p.index_b = io::parse_uint(f[1], "pairs file index_b");
    const auto t = io::trim(f[2]);
    if (t == "anomalous") {
      p.truth = Truth::anomalous;
    } else if (t == "consistent") {
      p.truth = Truth::consistent;
    } else {
      throw FormatError("pairs file: unknown truth '" + std::string(t) + "'");
    }
    if (p.index_a >= d.size() || p.index_b >= d.size()) {
      throw FormatError("pairs file: line " + std::to_string(i + 1) + " references a row outside the dataset");
    }
    const bool anomalous = d.labels_a[p.index_a] != d.labels_b[p.index_b];
    if (anomalous != (p.truth == Truth::anomalous)) {
      throw FormatError("pairs file: line " + std::to_string(i + 1) + " truth disagrees with labels");
    }
    pairs.push_back(p);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// IDX files (MNIST layout, big-endian headers)

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  Matrix images;  // N x (rows*cols), pixels scaled to [0, 1]
  Labels labels;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const std::string& field) {
  if (offset + 4 > bytes.size()) throw FormatError("IDX: file truncated while reading " + field);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

inline void append_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

}  // namespace detail

inline std::string encode_idx_images(std::size_t n, std::size_t rows, std::size_t cols,
                                     std::span<const std::uint8_t> pixels) {
  if (pixels.size() != n * rows * cols) throw ArgumentError("encode_idx_images: pixel count mismatch");
  std::string out;
  detail::append_be32(out, kIdxImageMagic);
  detail::append_be32(out, static_cast<std::uint32_t>(n));
  detail::append_be32(out, static_cast<std::uint32_t>(rows));
  detail::append_be32(out, static_cast<std::uint32_t>(cols));
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

inline std::string encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::string out;
  detail::append_be32(out, kIdxLabelMagic);
  detail::append_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(reinterpret_cast<const char*>(labels.data()), labels.size());
  return out;
}

struct IdxImageBytes {
  std::size_t n = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline IdxImageBytes decode_idx_images(std::string_view bytes) {
  const auto magic = detail::read_be32(bytes, 0, "magic");
  if (magic != kIdxImageMagic) throw FormatError("IDX images: bad magic number (expected 0x00000803)");
  IdxImageBytes out;
  out.n = detail::read_be32(bytes, 4, "image count");
  out.rows = detail::read_be32(bytes, 8, "row count");
  out.cols = detail::read_be32(bytes, 12, "column count");
  if (out.rows == 0 || out.cols == 0) throw FormatError("IDX images: zero row count or column count");
  // rows*cols fits in 64 bits; the product with n is checked by division
  const std::uint64_t per_image = static_cast<std::uint64_t>(out.rows) * out.cols;
  const std::uint64_t avail = bytes.size() - 16;
  if (out.n != 0 && per_image > avail / out.n) {
    throw FormatError("IDX images: file truncated (image count or dimensions too large)");
  }
  const std::uint64_t payload = per_image * out.n;
  if (avail < payload) throw FormatError("IDX images: file truncated (image count or dimensions too large)");
  if (bytes.size() - 16 > payload) throw FormatError("IDX images: trailing bytes after payload (image count or dimensions too small)");
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

inline std::vector<std::uint8_t> decode_idx_labels(std::string_view bytes) {
  const auto magic = detail::read_be32(bytes, 0, "magic");
  if (magic != kIdxLabelMagic) throw FormatError("IDX labels: bad magic number (expected 0x00000801)");
  const std::uint64_t n = detail::read_be32(bytes, 4, "label count");
  if (bytes.size() - 8 < n) throw FormatError("IDX labels: file truncated (label count too large)");
  if (bytes.size() - 8 > n) throw FormatError("IDX labels: trailing bytes after payload (label count too small)");
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.end());
}

inline IdxImages load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const IdxImageBytes img = decode_idx_images(io::read_file(images_path));
  const auto lab = decode_idx_labels(io::read_file(labels_path));
  if (lab.size() != img.n) {
    throw FormatError("IDX: label count " + std::to_string(lab.size()) + " does not match image count " +
                      std::to_string(img.n));
  }
  IdxImages out;
  out.image_rows = img.rows;
  out.image_cols = img.cols;
  out.images = Matrix(img.n, img.rows * img.cols);
  auto data = out.images.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) data[i] = static_cast<double>(img.pixels[i]) / 255.0;
  out.labels.assign(lab.begin(), lab.end());
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo tag embeddings

// One unit-norm Gaussian vector per class. Redraws the whole set while any two
// class vectors have |cosine| >= 0.5 (bounded number of attempts).
inline Matrix tag_vectors(int num_classes, std::size_t dim, Rng& rng) {
  if (dim < 1) throw ArgumentError("tag_vectors: dim must be >= 1");
  if (num_classes < 1) throw ArgumentError("tag_vectors: num_classes must be >= 1");
  const auto c = static_cast<std::size_t>(num_classes);
  Matrix v;
  for (int attempt = 0; attempt < 64; ++attempt) {
    v = gaussian_sample(rng, c, dim, 0.0, 1.0);
    for (std::size_t i = 0; i < c; ++i) {
      double n = norm2(v.row(i));
      if (n == 0.0) {
        v(i, 0) = 1.0;
        n = 1.0;
      }
      for (double& x : v.row(i)) x /= n;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i + 1; j < c; ++j) worst = std::max(worst, std::abs(dot(v.row(i), v.row(j))));
    if (worst < 0.5) break;
  }
  return v;
}

inline Matrix tag_embed(const Labels& labels, int num_classes, std::size_t dim, Rng& rng) {
  const Matrix classes = tag_vectors(num_classes, dim, rng);
  Matrix out(labels.size(), dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ArgumentError("tag_embed: label out of range");
    std::copy_n(classes.row(static_cast<std::size_t>(labels[i])).begin(), dim, out.row(i).begin());
  }
  return out;
}

// Image modality A paired with tag modality B.
inline Dataset image_tag_dataset(const IdxImages& idx, std::size_t tag_dim, Rng& rng) {
  Dataset d;
  d.num_classes = idx.labels.empty() ? 0 : *std::max_element(idx.labels.begin(), idx.labels.end()) + 1;
  d.mod_a = idx.images;
  d.labels_a = idx.labels;
  d.labels_b = idx.labels;
  d.mod_b = tag_embed(idx.labels, d.num_classes, tag_dim, rng);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.txt, mod_a.csv, mod_b.csv, labels_a.csv, labels_b.csv

namespace detail {

inline std::string labels_to_text(const Labels& l) {
  std::string out;
  for (int v : l) out += std::to_string(v) + "\n";
  return out;
}

inline Labels labels_from_text(std::string_view text, std::size_t expected, const std::string& what) {
  auto lines = io::non_empty_lines(text);
  if (lines.size() != expected) {
    throw FormatError(what + ": expected " + std::to_string(expected) + " labels, found " +
                      std::to_string(lines.size()));
  }
  Labels out;
  for (auto line : lines) out.push_back(static_cast<int>(io::parse_int(line, what)));
  return out;
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  d.validate();
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "mod_a.csv", io::matrix_to_csv(d.mod_a));
  io::write_file_atomic(dir / "mod_b.csv", io::matrix_to_csv(d.mod_b));
  io::write_file_atomic(dir / "labels_a.csv", detail::labels_to_text(d.labels_a));
  io::write_file_atomic(dir / "labels_b.csv", detail::labels_to_text(d.labels_b));
  io::write_file_atomic(dir / "manifest.txt", io::format_key_values({{"version", "1"},
                                                                     {"n", std::to_string(d.size())},
                                                                     {"d_a", std::to_string(d.dim_a())},
                                                                     {"d_b", std::to_string(d.dim_b())},
                                                                     {"num_classes", std::to_string(d.num_classes)}}));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string manifest_text = io::read_file(dir / "manifest.txt");
  const auto lines = io::split_lines(manifest_text);
  const auto manifest = io::parse_key_value_lines(lines, "dataset manifest");
  if (manifest.integer("version") != 1) throw FormatError("dataset manifest: unsupported version");
  const std::size_t n = manifest.count("n");
  const std::size_t d_a = manifest.count("d_a");
  const std::size_t d_b = manifest.count("d_b");
  const auto num_classes = manifest.integer("num_classes");
  if (d_a == 0 || d_b == 0) throw FormatError("dataset manifest: d_a and d_b must be >= 1");
  if (num_classes < 1) throw FormatError("dataset manifest: num_classes must be >= 1");

  Dataset d;
  d.num_classes = static_cast<int>(num_classes);
  const std::string a_text = io::read_file(dir / "mod_a.csv");
  const std::string b_text = io::read_file(dir / "mod_b.csv");
  d.mod_a = io::matrix_from_csv_lines(io::non_empty_lines(a_text), n, d_a, "mod_a.csv");
  d.mod_b = io::matrix_from_csv_lines(io::non_empty_lines(b_text), n, d_b, "mod_b.csv");
  d.labels_a = detail::labels_from_text(io::read_file(dir / "labels_a.csv"), n, "labels_a.csv");
  d.labels_b = detail::labels_from_text(io::read_file(dir / "labels_b.csv"), n, "labels_b.csv");
  try {
    d.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("dataset ") + dir.string() + ": " + e.what());
  }
  return d;
}

}  // namespace cmad
