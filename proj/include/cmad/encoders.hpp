#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmad/errors.hpp"
#include "cmad/io.hpp"
#include "cmad/numerics.hpp"

namespace cmad {

enum class Activation { relu, identity };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

// A single projection matrix: z = weight^T x.
struct LinearProjector {
  Matrix weight;  // d x r

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t output_dim() const { return weight.cols(); }
  bool operator==(const LinearProjector&) const = default;
};

inline Vector linear_forward(std::span<const double> x, const LinearProjector& proj) {
  if (x.size() != proj.input_dim()) {
    throw ArgumentError("linear_forward: input length " + std::to_string(x.size()) + " != projector rows " +
                        std::to_string(proj.input_dim()));
  }
  Vector z(proj.output_dim(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto w = proj.weight.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += x[i] * w[j];
  }
  return z;
}

// Row-wise projection of a batch.
inline Matrix linear_forward(const Matrix& x, const LinearProjector& proj) {
  if (x.cols() != proj.input_dim()) throw ArgumentError("linear_forward: input width does not match projector");
  return matmul(x, proj.weight);
}

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Vector bias;    // fan_out
  Activation activation = Activation::relu;

  bool operator==(const DenseLayer&) const = default;
};

// Feed-forward encoder. Hidden layers use `activation`, the last layer is the
// embedding and has no dropout.
struct MlpEncoder {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.0;

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.back().weight.cols(); }

  std::vector<std::size_t> arch() const {
    std::vector<std::size_t> dims;
    if (layers.empty()) return dims;
    dims.push_back(input_dim());
    for (const auto& l : layers) dims.push_back(l.weight.cols());
    return dims;
  }

  void validate() const {
    if (layers.empty()) throw ArgumentError("MlpEncoder: no layers");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("MlpEncoder: dropout_rate must be in [0, 1)");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.bias.size() != L.weight.cols()) throw ArgumentError("MlpEncoder: bias length mismatch in layer " + std::to_string(l));
      if (l > 0 && layers[l - 1].weight.cols() != L.weight.rows()) {
        throw ArgumentError("MlpEncoder: layer " + std::to_string(l) + " input width does not chain");
      }
    }
    if (layers.back().activation != Activation::identity) {
      throw ArgumentError("MlpEncoder: embedding layer must use the identity activation");
    }
  }

  static MlpEncoder from_linear(const LinearProjector& p) {
    MlpEncoder e;
    e.layers.push_back({p.weight, Vector(p.output_dim(), 0.0), Activation::identity});
    return e;
  }

  bool operator==(const MlpEncoder&) const = default;
};

// He-scaled Gaussian weights, zero biases, ReLU hidden layers.
inline MlpEncoder init_params(std::span<const std::size_t> arch, std::uint64_t seed, double dropout_rate = 0.0) {
  if (arch.size() < 2) throw ArgumentError("init_params: architecture needs at least 2 dimensions");
  Rng rng(seed);
  MlpEncoder enc;
  enc.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(arch[l]));
    const bool last = l + 2 == arch.size();
    enc.layers.push_back({gaussian_sample(rng, arch[l], arch[l + 1], 0.0, stddev), Vector(arch[l + 1], 0.0),
                          last ? Activation::identity : Activation::relu});
  }
  enc.validate();
  return enc;
}

enum class Mode { train, eval };

// Everything the backward pass needs from a forward pass.
struct ForwardCache {
  std::vector<std::size_t> arch;
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> pre;          // pre-activation of each layer
  std::vector<Matrix> dropout_mask; // per layer; empty when no dropout was applied
};

inline std::pair<Matrix, ForwardCache> mlp_forward(const Matrix& x, const MlpEncoder& enc, Mode mode, Rng* rng) {
  if (enc.layers.empty()) throw ArgumentError("mlp_forward: encoder has no layers");
  if (x.cols() != enc.input_dim()) {
    throw ArgumentError("mlp_forward: input width " + std::to_string(x.cols()) + " != encoder input " +
                        std::to_string(enc.input_dim()));
  }
  const bool drop = mode == Mode::train && enc.dropout_rate > 0.0;
  if (drop && rng == nullptr) throw ArgumentError("mlp_forward: train mode with dropout needs an rng");
  const double keep_scale = drop ? 1.0 / (1.0 - enc.dropout_rate) : 1.0;

  ForwardCache cache;
  cache.arch = enc.arch();
  Matrix h = x;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    Matrix z = matmul(h, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
    }
    cache.inputs.push_back(std::move(h));
    Matrix out = z;
    if (layer.activation == Activation::relu)
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    cache.pre.push_back(std::move(z));
    const bool hidden = l + 1 < enc.layers.size();
    if (drop && hidden) {
      Matrix mask(out.rows(), out.cols());
      for (double& m : mask.data()) m = rng->uniform() < enc.dropout_rate ? 0.0 : keep_scale;
      auto o = out.data();
      auto md = mask.data();
      for (std::size_t k = 0; k < o.size(); ++k) o[k] *= md[k];
      cache.dropout_mask.push_back(std::move(mask));
    } else {
      cache.dropout_mask.emplace_back();
    }
    h = std::move(out);
  }
  return {std::move(h), std::move(cache)};
}

inline std::pair<Vector, ForwardCache> mlp_forward(std::span<const double> x, const MlpEncoder& enc, Mode mode,
                                                   Rng* rng) {
  auto [z, cache] = mlp_forward(io::row_vector(x), enc, mode, rng);
  return {Vector(z.data().begin(), z.data().end()), std::move(cache)};
}

// Eval-mode embedding of every row.
inline Matrix embed(const Matrix& x, const MlpEncoder& enc) { return mlp_forward(x, enc, Mode::eval, nullptr).first; }

struct MlpGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

struct BackwardResult {
  MlpGradients params;
  Matrix grad_x;
};

inline BackwardResult mlp_backward(const Matrix& grad_z, const ForwardCache& cache, const MlpEncoder& enc) {
  if (cache.arch != enc.arch() || cache.pre.size() != enc.layers.size()) {
    throw ContractError("mlp_backward: cache was produced by a different encoder architecture");
  }
  if (grad_z.rows() != cache.pre.back().rows() || grad_z.cols() != enc.output_dim()) {
    throw ContractError("mlp_backward: gradient shape does not match the cached forward pass");
  }
  const std::size_t depth = enc.layers.size();
  BackwardResult out;
  out.params.weight.resize(depth);
  out.params.bias.resize(depth);
  Matrix delta = grad_z;  // gradient w.r.t. the layer output
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = enc.layers[l];
    if (!cache.dropout_mask[l].empty()) {
      auto d = delta.data();
      auto m = cache.dropout_mask[l].data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] *= m[k];
    }
    if (layer.activation == Activation::relu) {
      auto d = delta.data();
      auto p = cache.pre[l].data();
      for (std::size_t k = 0; k < d.size(); ++k)
        if (!(p[k] > 0.0)) d[k] = 0.0;
    }
    out.params.weight[l] = matmul_tn(cache.inputs[l], delta);
    Vector gb(layer.bias.size(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto r = delta.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
    }
    out.params.bias[l] = std::move(gb);
    delta = matmul_nt(delta, layer.weight);
  }
  out.grad_x = std::move(delta);
  return out;
}

inline std::pair<MlpGradients, Vector> mlp_backward(std::span<const double> grad_z, const ForwardCache& cache,
                                                    const MlpEncoder& enc) {
  auto r = mlp_backward(io::row_vector(grad_z), cache, enc);
  return {std::move(r.params), Vector(r.grad_x.data().begin(), r.grad_x.data().end())};
}

// Parameter and gradient views in a fixed order: W0, b0, W1, b1, ...
inline std::vector<std::span<double>> parameter_spans(MlpEncoder& enc) {
  std::vector<std::span<double>> s;
  for (auto& l : enc.layers) {
    s.push_back(l.weight.data());
    s.push_back(l.bias);
  }
  return s;
}

inline std::vector<std::span<const double>> gradient_spans(const MlpGradients& g) {
  std::vector<std::span<const double>> s;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    s.push_back(g.weight[l].data());
    s.push_back(g.bias[l]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step_count = 0;
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
};

// Bias-corrected Adam update. Moments are allocated on the first call.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state) {
  if (params.size() != grads.size()) throw ArgumentError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ArgumentError("adam_step: state does not match parameters");
  const auto& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (p.size() != g.size() || m.size() != p.size()) throw ArgumentError("adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / correct1;
      const double vhat = v[i] / correct2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Serialisation into a block file. Layer l of encoder `prefix` is stored as
// blocks "<prefix>.<l>.weight" (fan_in x fan_out) and "<prefix>.<l>.bias" (1 x fan_out).

inline void append_encoder(io::BlockFile& f, const std::string& prefix, const MlpEncoder& enc) {
  std::string acts;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    if (l) acts += ',';
    acts += to_string(enc.layers[l].activation);
    f.blocks.emplace_back(prefix + "." + std::to_string(l) + ".weight", enc.layers[l].weight);
    f.blocks.emplace_back(prefix + "." + std::to_string(l) + ".bias", io::row_vector(enc.layers[l].bias));
  }
  f.header.emplace_back("activations_" + prefix, acts);
  f.header.emplace_back("dropout_" + prefix, io::format_double(enc.dropout_rate));
}

inline MlpEncoder read_encoder(const io::ParsedBlockFile& f, const std::string& prefix, const std::string& what) {
  const auto arch = io::parse_dims(f.header.require("arch_" + prefix), what + " arch_" + prefix);
  if (arch.size() < 2) throw FormatError(what + ": arch_" + prefix + " needs at least 2 dimensions");
  const auto acts = io::split(f.header.require("activations_" + prefix), ',');
  if (acts.size() != arch.size() - 1) throw FormatError(what + ": activations_" + prefix + " count mismatch");
  MlpEncoder enc;
  enc.dropout_rate = f.header.real("dropout_" + prefix);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const auto& w = f.raw.block(prefix + "." + std::to_string(l) + ".weight", what);
    const auto& b = f.raw.block(prefix + "." + std::to_string(l) + ".bias", what);
    if (w.rows() != arch[l] || w.cols() != arch[l + 1] || b.rows() != 1 || b.cols() != arch[l + 1]) {
      throw FormatError(what + ": layer " + std::to_string(l) + " of encoder " + prefix + " has the wrong shape");
    }
    enc.layers.push_back({w, Vector(b.data().begin(), b.data().end()), parse_activation(io::trim(acts[l]))});
  }
  try {
    enc.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return enc;
}

}  // namespace cmad
