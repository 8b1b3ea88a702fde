// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srdl/errors.hpp"

namespace srdl {

enum class ScheduleMode { full_run, stage_complete };

/// Step-decay program: lr = initial_lr * drop_factor^(drops passed).
struct ScheduleConfig {
  double initial_lr = 0.1;
  int horizon = 200;
  double drop_factor = 0.1;
  std::vector<double> drop_points{0.5, 0.75};
  ScheduleMode mode = ScheduleMode::stage_complete;

  void validate() const {
    if (!(initial_lr > 0)) throw ConfigError("schedule.initial_lr must be > 0");
    if (horizon < 1) throw ConfigError("schedule horizon must be >= 1");
    if (!(drop_factor > 0 && drop_factor <= 1)) {
      throw ConfigError("schedule.drop_factor must lie in (0, 1]");
    }
    double prev = 0;
    for (double p : drop_points) {
      if (!(p > prev && p < 1)) {
        throw ConfigError("schedule.drop_points must be strictly increasing inside (0, 1)");
      }
      prev = p;
    }
  }
};

/// Epoch after which a drop at fraction `p` of `horizon` takes effect.
inline int drop_epoch(double p, int horizon) {
  // The slack keeps products such as 0.75 * 200 from rounding up to 151.
  return static_cast<int>(std::ceil(p * horizon - 1e-9));
}

/// Learning rate for epoch t in [1, horizon].
inline double lr_at(const ScheduleConfig& cfg, int t) {
  if (t < 1 || t > cfg.horizon) {
    throw ContractError("epoch " + std::to_string(t) + " outside [1, " +
                        std::to_string(cfg.horizon) + "]");
  }
  double lr = cfg.initial_lr;
  for (double p : cfg.drop_points)
    if (t > drop_epoch(p, cfg.horizon)) lr *= cfg.drop_factor;
  return lr;
}

/// Same program compressed into one stage; `cfg.horizon` is the stage length.
inline double stage_complete_lr_at(const ScheduleConfig& cfg, int t_within_stage) {
  return lr_at(cfg, t_within_stage);
}

/// Epochs of the two stages: ceil(M/2) and floor(M/2).
struct StageSplit {
  int first;
  int second;
};

inline StageSplit split_epochs(int total) {
  if (total < 2) throw ContractError("two-stage training needs at least 2 epochs");
  return {(total + 1) / 2, total / 2};
}

/**
 * Learning rates over a two-stage run of `total` epochs.
 *
 * stage_complete: each stage runs its own full program and restarts at the
 * initial rate. full_run: one program over all epochs, cut in half, so the
 * second stage continues where the first left off.
 */
inline std::vector<double> two_stage_lrs(ScheduleConfig cfg, int total) {
  const auto split = split_epochs(total);
  std::vector<double> lrs;
  lrs.reserve(static_cast<std::size_t>(total));
  if (cfg.mode == ScheduleMode::stage_complete) {
    for (int stage_len : {split.first, split.second}) {
      cfg.horizon = stage_len;
      for (int t = 1; t <= stage_len; ++t) lrs.push_back(stage_complete_lr_at(cfg, t));
    }
  } else {
    cfg.horizon = total;
    for (int t = 1; t <= total; ++t) lrs.push_back(lr_at(cfg, t));
  }
  return lrs;
}

/// Epochs that (re)start at the initial rate after a lower one, plus epoch 1.
inline int count_resets(const std::vector<double>& lrs, double initial_lr) {
  int resets = 0;
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    if (lrs[i] == initial_lr && (i == 0 || lrs[i - 1] < initial_lr)) ++resets;
  }
  return resets;
}

}  // namespace srdl
