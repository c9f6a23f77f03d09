#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "cmad/errors.hpp"
#include "cmad/numerics.hpp"

namespace cmad::io {

namespace fs = std::filesystem;

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw FormatError("format_double: conversion failed");
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view text, const std::string& what) {
  text = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw FormatError(what + ": cannot parse '" + std::string(text) + "' as a real number");
  }
  return v;
}

inline std::int64_t parse_int(std::string_view text, const std::string& what) {
  text = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw FormatError(what + ": cannot parse '" + std::string(text) + "' as an integer");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view text, const std::string& what) {
  text = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw FormatError(what + ": cannot parse '" + std::string(text) + "' as an unsigned integer");
  }
  return v;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline void append_csv_row(std::string& out, std::span<const double> row) {
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j) out += ',';
    out += format_double(row[j]);
  }
  out += '\n';
}

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) append_csv_row(out, m.row(i));
  return out;
}

// Parses `expected_rows` lines of `expected_cols` comma-separated reals.
inline Matrix matrix_from_csv_lines(std::span<const std::string_view> lines, std::size_t expected_rows,
                                    std::size_t expected_cols, const std::string& what) {
  if (lines.size() != expected_rows) {
    throw FormatError(what + ": expected " + std::to_string(expected_rows) + " rows, found " +
                      std::to_string(lines.size()));
  }
  Matrix m(expected_rows, expected_cols);
  for (std::size_t i = 0; i < expected_rows; ++i) {
    auto fields = split(lines[i], ',');
    if (fields.size() != expected_cols) {
      throw FormatError(what + ": row " + std::to_string(i) + " has " + std::to_string(fields.size()) +
                        " columns, expected " + std::to_string(expected_cols));
    }
    for (std::size_t j = 0; j < expected_cols; ++j) m(i, j) = parse_double(fields[j], what);
  }
  if (!all_finite(m.data())) throw FormatError(what + ": non-finite value");
  return m;
}

inline std::vector<std::string_view> non_empty_lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : split_lines(text))
    if (!trim(line).empty()) out.push_back(line);
  return out;
}

// ---------------------------------------------------------------------------
// key=value manifests

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

class KeyValueMap {
 public:
  KeyValueMap(std::string what, std::map<std::string, std::string> values)
      : what_(std::move(what)), values_(std::move(values)) {}

  bool contains(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw FormatError(what_ + ": missing key '" + key + "'");
    return it->second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double real(const std::string& key) const { return parse_double(require(key), what_ + " key '" + key + "'"); }
  std::int64_t integer(const std::string& key) const {
    return parse_int(require(key), what_ + " key '" + key + "'");
  }
  std::uint64_t unsigned_integer(const std::string& key) const {
    return parse_uint(require(key), what_ + " key '" + key + "'");
  }
  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw FormatError(what_ + ": key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }

 private:
  std::string what_;
  std::map<std::string, std::string> values_;
};

inline KeyValueMap parse_key_value_lines(std::span<const std::string_view> lines, const std::string& what) {
  std::map<std::string, std::string> values;
  for (auto raw : lines) {
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError(what + ": line '" + std::string(line) + "' lacks '='");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw FormatError(what + ": empty key");
    if (!values.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw FormatError(what + ": duplicate key '" + key + "'");
    }
  }
  return KeyValueMap(what, std::move(values));
}

// ---------------------------------------------------------------------------
// Block file: key=value header, then named matrices.
//
//   version=1
//   method=cmad
//   [a.0.weight 20 64]
//   <20 CSV rows of 64 values>

struct BlockFile {
  KeyValues header;
  std::vector<std::pair<std::string, Matrix>> blocks;

  const Matrix& block(const std::string& name, const std::string& what) const {
    for (const auto& [n, m] : blocks)
      if (n == name) return m;
    throw FormatError(what + ": missing block '" + name + "'");
  }
  bool has_block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.first == name) return true;
    return false;
  }
};

inline std::string format_block_file(const BlockFile& f) {
  std::string out = format_key_values(f.header);
  for (const auto& [name, m] : f.blocks) {
    out += "[" + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "]\n";
    out += matrix_to_csv(m);
  }
  return out;
}

struct ParsedBlockFile {
  KeyValueMap header;
  BlockFile raw;
};

inline ParsedBlockFile parse_block_file(std::string_view text, const std::string& what) {
  const auto lines = split_lines(text);
  std::size_t i = 0;
  std::vector<std::string_view> header_lines;
  while (i < lines.size() && !(trim(lines[i]).starts_with("["))) header_lines.push_back(lines[i++]);
  KeyValueMap header = parse_key_value_lines(header_lines, what);
  BlockFile raw;
  for (auto l : header_lines) {
    auto t = trim(l);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    raw.header.emplace_back(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
  }
  while (i < lines.size()) {
    auto line = trim(lines[i]);
    if (line.empty()) {
      ++i;
      continue;
    }
    if (!line.starts_with("[") || !line.ends_with("]")) {
      throw FormatError(what + ": expected block header, found '" + std::string(line) + "'");
    }
    auto parts = split(line.substr(1, line.size() - 2), ' ');
    if (parts.size() != 3) throw FormatError(what + ": malformed block header '" + std::string(line) + "'");
    const std::string name(parts[0]);
    const auto rows = parse_int(parts[1], what + " block '" + name + "' rows");
    const auto cols = parse_int(parts[2], what + " block '" + name + "' cols");
    if (rows < 0 || cols < 0) throw FormatError(what + ": negative block shape for '" + name + "'");
    ++i;
    if (i + static_cast<std::size_t>(rows) > lines.size()) {
      throw FormatError(what + ": block '" + name + "' truncated");
    }
    std::span<const std::string_view> body(lines.data() + i, static_cast<std::size_t>(rows));
    Matrix m = cols == 0 ? Matrix(static_cast<std::size_t>(rows), 0)
                         : matrix_from_csv_lines(body, static_cast<std::size_t>(rows),
                                                 static_cast<std::size_t>(cols), what + " block '" + name + "'");
    raw.blocks.emplace_back(name, std::move(m));
    i += static_cast<std::size_t>(rows);
  }
  return ParsedBlockFile{std::move(header), std::move(raw)};
}

inline std::string join_dims(std::span<const std::size_t> dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(dims[i]);
  }
  return s;
}

inline std::vector<std::size_t> parse_dims(std::string_view text, const std::string& what) {
  std::vector<std::size_t> dims;
  for (auto part : split(trim(text), '-')) {
    const auto v = parse_int(part, what);
    if (v <= 0) throw ArgumentError(what + ": layer widths must be positive");
    dims.push_back(static_cast<std::size_t>(v));
  }
  return dims;
}

inline Matrix row_vector(std::span<const double> v) { return Matrix(1, v.size(), Vector(v.begin(), v.end())); }

}  // namespace cmad::io
