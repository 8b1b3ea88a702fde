// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srdl/graph.hpp"

namespace srdl {

/// Clamp applied inside every log.
inline constexpr double kLogFloor = 1e-12;

struct ProbabilityVector {
  std::vector<double> values;
  double temperature = 1.0;

  std::size_t classes() const { return values.size(); }
};

struct LossReport {
  double ce = 0;
  double kl = 0;
  double total = 0;
  double temperature = 1;
};

namespace detail {

// Writes softmax(z / temperature) into out using max subtraction.
template <typename In, typename Out>
void softened_softmax_row(const In* z, std::size_t c, double temperature, Out* out) {
  double mx = z[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max<double>(mx, z[j]);
  double sum = 0;
  for (std::size_t j = 0; j < c; ++j) {
    const double e = std::exp((static_cast<double>(z[j]) - mx) / temperature);
    out[j] = static_cast<Out>(e);
    sum += e;
  }
  for (std::size_t j = 0; j < c; ++j) out[j] = static_cast<Out>(static_cast<double>(out[j]) / sum);
}

inline void check_temperature(double t) {
  if (!(t > 0) || !std::isfinite(t)) {
    throw ContractError("temperature must be positive and finite, got " + std::to_string(t));
  }
}

}  // namespace detail

/// exp(z_c / T) / sum_j exp(z_j / T). T = 1 is the ordinary softmax posterior.
template <typename R>
ProbabilityVector softened_softmax(std::span<const R> logits, double temperature) {
  detail::check_temperature(temperature);
  if (logits.empty()) throw ContractError("softened_softmax: no logits");
  for (R z : logits) {
    if (!std::isfinite(static_cast<double>(z))) throw ContractError("softened_softmax: non-finite logit");
  }
  ProbabilityVector p{std::vector<double>(logits.size()), temperature};
  detail::softened_softmax_row(logits.data(), logits.size(), temperature, p.values.data());
  return p;
}

inline ProbabilityVector softened_softmax(const std::vector<double>& logits, double temperature) {
  return softened_softmax(std::span<const double>(logits), temperature);
}

/// Negative log-likelihood of `label` (0-based) under `probs`.
inline double cross_entropy(const ProbabilityVector& probs, std::size_t label) {
  if (label >= probs.classes()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                        std::to_string(probs.classes()) + ")");
  }
  return -std::log(std::max(probs.values[label], kLogFloor));
}

/// KL(reference || current), both clamped at kLogFloor before the logs.
inline double kl_imitation(const ProbabilityVector& reference, const ProbabilityVector& current) {
  if (reference.classes() != current.classes()) {
    throw ContractError("kl_imitation: class counts differ (" +
                        std::to_string(reference.classes()) + " vs " +
                        std::to_string(current.classes()) + ")");
  }
  if (reference.temperature != current.temperature) {
    throw ContractError("kl_imitation: temperatures differ");
  }
  double kl = 0;
  for (std::size_t j = 0; j < reference.classes(); ++j) {
    const double r = std::max(reference.values[j], kLogFloor);
    const double q = std::max(current.values[j], kLogFloor);
    kl += reference.values[j] * (std::log(r) - std::log(q));
  }
  // Clamping can push an exact-zero divergence a hair below zero.
  return std::max(kl, 0.0);
}

/// Joint objective: ce + T^2 * kl.
inline LossReport srdl_total(double ce, double kl, double temperature) {
  detail::check_temperature(temperature);
  return LossReport{ce, kl, ce + temperature * temperature * kl, temperature};
}

// ---------------------------------------------------------------------------
// Graph ops. Both return the batch mean as a one-element tensor.
// ---------------------------------------------------------------------------

/**
 * Fused softmax + cross-entropy on logits[batch x C] with 0-based labels.
 * Backward gives (p - onehot(y)) / batch, or -p / batch when p(y) sits
 * under the clamp.
 */
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels) {
  const auto& z = g.value(logits);
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = z.dim(0), c = z.dim(1);
  std::vector<double> probs(b * c);
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(c) + ")");
    }
    double* p = probs.data() + i * c;
    detail::softened_softmax_row(z.data().data() + i * c, c, 1.0, p);
    loss -= std::log(std::max(p[labels[i]], kLogFloor));
  }
  loss /= static_cast<double>(b);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.record(Tensor<T>({1}, {static_cast<T>(loss)}), {logits},
                  [logits, probs = std::move(probs), ys = std::move(ys), b, c](
                      Graph<T>& gr, const Tensor<T>& dy) {
                    auto& gz = gr.grad_buffer(logits);
                    const double scale = static_cast<double>(dy[0]) / static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i) {
                      const double* p = probs.data() + i * c;
                      const bool clamped = p[ys[i]] < kLogFloor;
                      for (std::size_t j = 0; j < c; ++j) {
                        double d = clamped ? 0.0 : p[j];
                        if (!clamped && static_cast<int>(j) == ys[i]) d -= 1.0;
                        gz[i * c + j] += static_cast<T>(scale * d);
                      }
                    }
                  });
}

/**
 * Mean over the batch of KL(reference_i || softmax(z_i / T)).
 *
 * `reference[batch x C]` is a frozen constant; no gradient reaches it. With
 * no clamped entries the logit gradient is (q - r) / (T * batch).
 */
template <typename T>
Var softened_kl(Graph<T>& g, Var logits, const Tensor<T>& reference, double temperature) {
  detail::check_temperature(temperature);
  const auto& z = g.value(logits);
  if (z.rank() != 2 || reference.shape() != z.shape()) {
    throw DimensionError("softened_kl: logits " + shape_str(z.shape()) + " vs reference " +
                         shape_str(reference.shape()));
  }
  const std::size_t b = z.dim(0), c = z.dim(1);
  std::vector<double> q(b * c);
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double* qi = q.data() + i * c;
    detail::softened_softmax_row(z.data().data() + i * c, c, temperature, qi);
    double kl = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double r = static_cast<double>(reference[i * c + j]);
      kl += r * (std::log(std::max(r, kLogFloor)) - std::log(std::max(qi[j], kLogFloor)));
    }
    loss += std::max(kl, 0.0);
  }
  loss /= static_cast<double>(b);
  return g.record(
      Tensor<T>({1}, {static_cast<T>(loss)}), {logits},
      [logits, reference, q = std::move(q), b, c, temperature](Graph<T>& gr,
                                                               const Tensor<T>& dy) {
        auto& gz = gr.grad_buffer(logits);
        const double scale =
            static_cast<double>(dy[0]) / (temperature * static_cast<double>(b));
        for (std::size_t i = 0; i < b; ++i) {
          const double* qi = q.data() + i * c;
          // d/dz_k of -sum_{j unclamped} r_j log q_j
          //   = -(1/T) [ r_k [k unclamped] - q_k * sum_{j unclamped} r_j ]
          double live_mass = 0;
          for (std::size_t j = 0; j < c; ++j)
            if (qi[j] >= kLogFloor) live_mass += static_cast<double>(reference[i * c + j]);
          for (std::size_t k = 0; k < c; ++k) {
            const double rk =
                qi[k] >= kLogFloor ? static_cast<double>(reference[i * c + k]) : 0.0;
            gz[i * c + k] += static_cast<T>(scale * (qi[k] * live_mass - rk));
          }
        }
      });
}

}  // namespace srdl
