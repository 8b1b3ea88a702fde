// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "srdl/graph.hpp"

namespace srdl {

/**
 * Compares reverse-mode gradients with central differences.
 *
 * `f(graph, vars)` must build a one-element output from the leaves in `vars`
 * (one per entry of `params`, same order). Returns the largest
 * |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) over every
 * element of every parameter.
 */
template <typename F>
double grad_check(F&& f, const std::vector<Tensor<double>>& params, double h) {
  if (!(h > 0)) throw ContractError("grad_check: step must be positive");

  auto evaluate = [&](const std::vector<Tensor<double>>& ps, Graph<double>& g) {
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(g.leaf(p));
    Var out = f(g, std::span<const Var>(vars));
    if (g.value(out).size() != 1) {
      throw ContractError("grad_check: objective must be scalar, got " +
                          shape_str(g.value(out).shape()));
    }
    return std::pair{out, vars};
  };

  Graph<double> g;
  auto [out, vars] = evaluate(params, g);
  g.backward(out);

  auto scalar_at = [&](const std::vector<Tensor<double>>& ps) {
    Graph<double> probe;
    auto [o, unused] = evaluate(ps, probe);
    return probe.value(o)[0];
  };

  double worst = 0.0;
  std::vector<Tensor<double>> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto analytic = g.grad(vars[p]);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      work[p][i] = orig + h;
      const double up = scalar_at(work);
      work[p][i] = orig - h;
      const double down = scalar_at(work);
      work[p][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace srdl
