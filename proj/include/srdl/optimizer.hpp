// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srdl/errors.hpp"
#include "srdl/model.hpp"
#include "srdl/schedule.hpp"

namespace srdl {

struct OptimizerConfig {
  ScheduleConfig schedule;
  double momentum = 0.9;
  double weight_decay = 0.0002;
  std::size_t batch_size = 128;

  void validate() const {
    schedule.validate();
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("optimizer.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  }
};

/**
 * SGD with Nesterov momentum and L2 weight decay:
 *
 *   d = g + wd * theta
 *   v <- mu * v - lr * d
 *   theta <- theta + mu * v - lr * d
 */
template <typename T>
class NesterovSgd {
public:
  NesterovSgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  explicit NesterovSgd(const OptimizerConfig& cfg) : NesterovSgd(cfg.momentum, cfg.weight_decay) {}

  void step(ParameterSet<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
    if (grads.size() != params.size()) {
      throw DimensionError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                           std::to_string(params.size()) + " parameters");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (grads[p].shape() != params[p].value.shape()) {
        throw DimensionError("gradient for " + params[p].name + " has shape " +
                             shape_str(grads[p].shape()));
      }
      if (!grads[p].all_finite()) {
        throw NumericError("non-finite gradient for parameter " + params[p].name);
      }
    }
    if (velocity_.size() != params.size()) reset(params);

    const T mu = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto theta = params[p].value.data();
      auto v = velocity_[p].data();
      const auto g = grads[p].data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const T d = g[i] + wd * theta[i];
        v[i] = mu * v[i] - rate * d;
        theta[i] += mu * v[i] - rate * d;
      }
    }
  }

  /// Zero velocity shaped like `params`.
  void reset(const ParameterSet<T>& params) {
    velocity_.clear();
    for (const auto& e : params.entries) velocity_.push_back(Tensor<T>::zeros(e.value.shape()));
  }

  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace srdl
