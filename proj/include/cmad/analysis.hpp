#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cmad/data.hpp"
#include "cmad/detection.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"
#include "cmad/objective.hpp"

namespace cmad {

class GrayImage {
 public:
  GrayImage(std::size_t rows, std::size_t cols, std::vector<int> pixels)
      : rows_(rows), cols_(cols), pixels_(std::move(pixels)) {
    if (pixels_.size() != rows_ * cols_) {
      throw ArgumentError("GrayImage: " + std::to_string(pixels_.size()) + " pixels for a " + std::to_string(rows_) +
                          "x" + std::to_string(cols_) + " image");
    }
    for (int p : pixels_)
      if (p < 0 || p > 255) throw ArgumentError("GrayImage: pixel value " + std::to_string(p) + " outside [0, 255]");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const int> pixels() const { return pixels_; }
  int at(std::size_t r, std::size_t c) const { return pixels_[r * cols_ + c]; }

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<int> pixels_;
};

// ---------------------------------------------------------------------------
// 2-D view of the consensus space

enum class Modality { a, b };

struct EmbeddingView {
  Matrix coords;  // N x 2
  Labels classes;
};

template <CrossModalModel M>
EmbeddingView viz_embeddings(const M& model, const Dataset& d, Modality modality,
                             const std::optional<std::set<int>>& class_filter = std::nullopt) {
  std::vector<std::size_t> rows;
  const Labels& labels = modality == Modality::a ? d.labels_a : d.labels_b;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!class_filter || class_filter->count(labels[i])) rows.push_back(i);
  const Matrix x = select_rows(modality == Modality::a ? d.mod_a : d.mod_b, rows);
  const Matrix z = modality == Modality::a ? model.embed_a(x) : model.embed_b(x);
  EmbeddingView v;
  v.coords = pca_fit_project(z, 2).coords;
  for (std::size_t r : rows) v.classes.push_back(labels[r]);
  return v;
}

inline std::string format_coords_csv(const EmbeddingView& v) {
  std::string out = "x,y,class_id\n";
  for (std::size_t i = 0; i < v.coords.rows(); ++i) {
    out += io::format_double(v.coords(i, 0)) + "," + io::format_double(v.coords(i, 1)) + "," +
           std::to_string(v.classes[i]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-modal reconstruction

// Min-max maps values onto [0, 255]; a constant input maps to all zeros.
inline GrayImage normalize_to_gray(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw ArgumentError("normalize_to_gray: value count does not match image dims");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<int> px(values.size(), 0);
  if (*hi > *lo) {
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < values.size(); ++i)
      px[i] = static_cast<int>(std::lround(255.0 * (values[i] - *lo) / span));
  }
  return GrayImage(rows, cols, std::move(px));
}

// Sums every image whose cross-modal score against `query` (a modality-B
// vector) exceeds epsilon, then min-max normalises the sum to [0, 255].
template <CrossModalModel M>
GrayImage reconstruct(const M& model, std::span<const double> query, const Matrix& images, double epsilon,
                      std::size_t image_rows, std::size_t image_cols) {
  if (image_rows * image_cols != images.cols()) {
    throw ArgumentError("reconstruct: image dims " + std::to_string(image_rows) + "x" + std::to_string(image_cols) +
                        " do not match feature width " + std::to_string(images.cols()));
  }
  const Matrix zq = model.embed_b(io::row_vector(query));
  const Matrix zi = model.embed_a(images);
  Vector sum(images.cols(), 0.0);
  std::size_t selected = 0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    if (!(cosine_similarity(zi.row(i), zq.row(0)) - epsilon > 0.0)) continue;
    ++selected;
    auto row = images.row(i);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += row[j];
  }
  if (selected == 0) {
    throw EmptySelectionError("reconstruct: no image scores above epsilon=" + io::format_double(epsilon));
  }
  return normalize_to_gray(sum, image_rows, image_cols);
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  for (int p : img.pixels()) out.push_back(static_cast<char>(static_cast<unsigned char>(p)));
  return out;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_pgm(img));
}

inline GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("PGM: truncated header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError("PGM: magic must be P5");
  const auto width = io::parse_int(token(), "PGM width");
  const auto height = io::parse_int(token(), "PGM height");
  const auto maxval = io::parse_int(token(), "PGM maxval");
  if (width <= 0 || height <= 0) throw FormatError("PGM: non-positive dimensions");
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const auto n = static_cast<std::size_t>(width * height);
  if (bytes.size() < pos || bytes.size() - pos != n) throw FormatError("PGM: raster size does not match dimensions");
  std::vector<int> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<unsigned char>(bytes[pos + i]);
  return GrayImage(static_cast<std::size_t>(height), static_cast<std::size_t>(width), std::move(px));
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(io::read_file(path)); }

}  // namespace cmad
