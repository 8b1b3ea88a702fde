// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "srdl/errors.hpp"
#include "srdl/graph.hpp"
#include "srdl/ops.hpp"
#include "srdl/tensor.hpp"

namespace srdl {

enum class Arch { mlp, smallcnn };

inline std::string to_string(Arch a) { return a == Arch::mlp ? "mlp" : "smallcnn"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "smallcnn") return Arch::smallcnn;
  throw ConfigError("unknown architecture '" + s + "' (expected mlp or smallcnn)");
}

/**
 * Desk-scale architecture description.
 *
 * mlp:      input (flattened) -> [dense + relu] per hidden width -> dense(classes)
 * smallcnn: input [c x h x w] -> [conv3x3 pad 1 + relu] per channel count
 *           (stride 1 for the first block, 2 afterwards) -> global average
 *           pool -> dense(classes)
 */
struct ModelSpec {
  Arch arch = Arch::mlp;
  std::vector<std::size_t> hidden{256, 256};
  Shape input_shape{16};
  std::size_t classes = 10;

  std::size_t input_size() const { return shape_size(input_shape); }

  void validate() const {
    if (classes < 2) throw ConfigError("model needs at least 2 classes");
    if (input_shape.empty()) throw ConfigError("model input shape is empty");
    for (auto d : input_shape)
      if (d < 1) throw ConfigError("model input extents must be >= 1");
    for (auto w : hidden)
      if (w < 1) throw ConfigError("model widths must be >= 1");
    if (arch == Arch::smallcnn) {
      if (input_shape.size() != 3) throw ConfigError("smallcnn needs an input shape c x h x w");
      if (hidden.empty()) throw ConfigError("smallcnn needs at least one conv block");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

namespace detail {

inline constexpr std::size_t kConvKernel = 3;
inline constexpr std::size_t kConvPad = 1;

inline std::size_t conv_stride(std::size_t block) { return block == 0 ? 1 : 2; }

struct ParamLayout {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 marks a bias
};

inline std::vector<ParamLayout> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamLayout> out;
  if (spec.arch == Arch::mlp) {
    std::size_t in = spec.input_size();
    std::vector<std::size_t> widths = spec.hidden;
    widths.push_back(spec.classes);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const auto prefix = "fc" + std::to_string(l + 1);
      out.push_back({prefix + ".weight", {in, widths[l]}, in});
      out.push_back({prefix + ".bias", {widths[l]}, 0});
      in = widths[l];
    }
  } else {
    std::size_t cin = spec.input_shape[0];
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      const std::size_t k = kConvKernel;
      out.push_back({"conv" + std::to_string(l + 1) + ".weight",
                     {spec.hidden[l], cin, k, k},
                     cin * k * k});
      cin = spec.hidden[l];
    }
    out.push_back({"fc.weight", {cin, spec.classes}, cin});
    out.push_back({"fc.bias", {spec.classes}, 0});
  }
  return out;
}

}  // namespace detail

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered model parameters. The final dense layer's columns are the
/// per-class weight vectors.
template <typename T>
class ParameterSet {
public:
  std::vector<NamedTensor<T>> entries;
  std::string init_scheme = "he-normal";
  std::uint64_t seed = 0;

  std::size_t size() const { return entries.size(); }
  NamedTensor<T>& operator[](std::size_t i) { return entries[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries[i]; }

  const Tensor<T>& get(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e.value;
    throw ContractError("no parameter named " + name);
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries)
      if (!e.value.all_finite()) return false;
    return true;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    out.init_scheme = init_scheme;
    out.seed = seed;
    for (const auto& e : entries) out.entries.push_back({e.name, e.value.template cast<U>()});
    return out;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// Checks names and shapes against the layout the model spec implies.
template <typename T>
void check_params(const ModelSpec& spec, const ParameterSet<T>& params) {
  const auto layout = detail::param_layout(spec);
  if (layout.size() != params.size()) {
    throw DimensionError("parameter count " + std::to_string(params.size()) +
                         " does not match model (" + std::to_string(layout.size()) + ")");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params[i].name || layout[i].shape != params[i].value.shape()) {
      throw DimensionError("parameter " + params[i].name + " " +
                           shape_str(params[i].value.shape()) + " does not match expected " +
                           layout[i].name + " " + shape_str(layout[i].shape));
    }
  }
}

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases; deterministic in `seed`.
template <typename T>
ParameterSet<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<T> params;
  params.seed = seed;
  for (const auto& l : detail::param_layout(spec)) {
    Tensor<T> t(l.shape);
    if (l.fan_in > 0) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.fan_in)));
      for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    }
    params.entries.push_back({l.name, std::move(t)});
  }
  return params;
}

struct ForwardPass {
  Var logits;
  Var embedding;  // input of the final dense layer
  std::vector<Var> params;
};

/**
 * Records the network on `g` and returns raw logits [batch x classes].
 * `batch` is [batch x ...] with the trailing extents multiplying to the
 * spec's input size. No softmax is applied. With `track_grads` off the
 * parameters are recorded as constants and no backward closures are kept.
 */
template <typename T>
ForwardPass forward(Graph<T>& g, const ModelSpec& spec, const ParameterSet<T>& params,
                    const Tensor<T>& batch, bool track_grads = true) {
  check_params(spec, params);
  if (batch.rank() < 2 || batch.size() != batch.dim(0) * spec.input_size()) {
    throw DimensionError("batch " + shape_str(batch.shape()) + " does not match model input " +
                         shape_str(spec.input_shape));
  }
  const std::size_t b = batch.dim(0);
  ForwardPass pass;
  for (const auto& e : params.entries)
    pass.params.push_back(track_grads ? g.leaf(e.value) : g.constant(e.value));

  if (spec.arch == Arch::mlp) {
    Var h = g.constant(batch.reshaped({b, spec.input_size()}));
    const std::size_t layers = spec.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      if (l + 1 == layers) pass.embedding = h;
      h = add_bias(g, matmul(g, h, pass.params[2 * l]), pass.params[2 * l + 1]);
      if (l + 1 < layers) h = relu(g, h);
    }
    pass.logits = h;
  } else {
    Shape s{b};
    s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
    Var h = g.constant(batch.reshaped(s));
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      h = relu(g, conv2d(g, h, pass.params[l], detail::conv_stride(l), detail::kConvPad));
    }
    h = global_avg_pool(g, h);
    pass.embedding = h;
    const std::size_t fc = spec.hidden.size();
    pass.logits = add_bias(g, matmul(g, h, pass.params[fc]), pass.params[fc + 1]);
  }
  return pass;
}

template <typename T>
Var forward_logits(Graph<T>& g, const ModelSpec& spec, const ParameterSet<T>& params,
                   const Tensor<T>& batch) {
  return forward(g, spec, params, batch).logits;
}

/**
 * Forward FLOPs per sample. One multiply-accumulate counts as 2; bias adds,
 * ReLU and pooling accumulations count 1 per element; the pool's division
 * counts 1 per channel. Softmax is not part of the forward pass.
 */
inline std::uint64_t forward_flops(const ModelSpec& spec) {
  spec.validate();
  std::uint64_t flops = 0;
  if (spec.arch == Arch::mlp) {
    std::uint64_t in = spec.input_size();
    for (std::size_t l = 0; l <= spec.hidden.size(); ++l) {
      const bool last = l == spec.hidden.size();
      const std::uint64_t out = last ? spec.classes : spec.hidden[l];
      flops += 2 * in * out + out;
      if (!last) flops += out;
      in = out;
    }
    return flops;
  }
  std::uint64_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  const std::uint64_t k = detail::kConvKernel, pad = detail::kConvPad;
  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    const std::uint64_t stride = detail::conv_stride(l);
    if (k > h + 2 * pad || k > w + 2 * pad) throw ConfigError("smallcnn input too small");
    const std::uint64_t oh = (h + 2 * pad - k) / stride + 1;
    const std::uint64_t ow = (w + 2 * pad - k) / stride + 1;
    const std::uint64_t cout = spec.hidden[l];
    flops += 2 * cout * oh * ow * c * k * k;  // conv
    flops += cout * oh * ow;                  // relu
    c = cout;
    h = oh;
    w = ow;
  }
  flops += c * (h * w + 1);               // global average pool
  flops += 2 * c * spec.classes + spec.classes;  // classifier
  return flops;
}

}  // namespace srdl
