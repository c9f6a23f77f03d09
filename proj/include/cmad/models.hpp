#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "cmad/baselines.hpp"
#include "cmad/detection.hpp"
#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/training.hpp"

namespace cmad {

// Every model kind that can live in a model.txt file.
using AnyModel = std::variant<TrainedModel, LinearModel, LinearBaselineModel>;

inline io::BlockFile linear_model_blocks(const LinearModel& m) {
  io::BlockFile f;
  f.header = {{"version", "1"},
              {"method", "linear"},
              {"r", std::to_string(m.u.output_dim())},
              {"gamma", io::format_double(m.contrastive.gamma)},
              {"lambda", io::format_double(m.contrastive.lambda_neg)},
              {"lambda_reg", io::format_double(m.contrastive.lambda_reg)}};
  f.blocks.emplace_back("u", m.u.weight);
  f.blocks.emplace_back("v", m.v.weight);
  f.blocks.emplace_back("objective_trace", io::row_vector(m.objective_trace));
  return f;
}

inline LinearModel linear_model_from_blocks(const io::ParsedBlockFile& f, const std::string& what) {
  LinearModel m;
  m.contrastive.gamma = f.header.real("gamma");
  m.contrastive.lambda_neg = f.header.real("lambda");
  m.contrastive.lambda_reg = f.header.real("lambda_reg");
  m.u.weight = f.raw.block("u", what);
  m.v.weight = f.raw.block("v", what);
  if (m.u.output_dim() != f.header.count("r") || m.v.output_dim() != m.u.output_dim()) {
    throw FormatError(what + ": projection widths disagree with r");
  }
  const Matrix& t = f.raw.block("objective_trace", what);
  m.objective_trace.assign(t.data().begin(), t.data().end());
  return m;
}

inline std::string format_model(const AnyModel& model) {
  return std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TrainedModel>) return io::format_block_file(trained_model_blocks(m));
        if constexpr (std::is_same_v<T, LinearModel>) return io::format_block_file(linear_model_blocks(m));
        if constexpr (std::is_same_v<T, LinearBaselineModel>) return io::format_block_file(baseline_blocks(m));
      },
      model);
}

inline AnyModel parse_model(std::string_view text, const std::string& what = "model file") {
  const auto f = io::parse_block_file(text, what);
  if (f.header.integer("version") != 1) throw FormatError(what + ": unsupported version");
  const std::string method = f.header.require("method");
  if (method == "cmad") return trained_model_from_blocks(f, what);
  if (method == "linear") return linear_model_from_blocks(f, what);
  if (method == "cca" || method == "pls" || method == "kcca") return baseline_from_blocks(f, what);
  throw FormatError(what + ": unknown method '" + method + "'");
}

// Writes <dir>/model.txt (and train_log.csv for trained dual encoders).
inline void save_model(const AnyModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "model.txt", format_model(model));
  if (const auto* t = std::get_if<TrainedModel>(&model)) io::write_file_atomic(dir / "train_log.csv", format_train_log(t->trace));
}

// Accepts either a model directory or a model.txt path.
inline AnyModel load_model(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "model.txt" : path;
  return parse_model(io::read_file(file), file.string());
}

}  // namespace cmad
