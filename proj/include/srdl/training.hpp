// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "srdl/checkpoint.hpp"
#include "srdl/data.hpp"
#include "srdl/evaluation.hpp"
#include "srdl/knowledge.hpp"
#include "srdl/losses.hpp"
#include "srdl/model.hpp"
#include "srdl/optimizer.hpp"
#include "srdl/schedule.hpp"

namespace srdl {

enum class Strategy { vanilla, srdl, kd };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::vanilla: return "vanilla";
    case Strategy::srdl: return "srdl";
    case Strategy::kd: return "kd";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "vanilla") return Strategy::vanilla;
  if (s == "srdl") return Strategy::srdl;
  if (s == "kd") return Strategy::kd;
  throw ConfigError("unknown strategy '" + s + "' (expected vanilla, srdl or kd)");
}

struct EpochRecord {
  int epoch = 0;  // 1-based across the whole run
  int stage = 1;
  double lr = 0;
  double mean_ce = 0;
  double mean_kl = 0;
  double mean_total = 0;
  double train_top1 = 0;  // running accuracy over the epoch's mini-batches

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/**
 * Outcome of one training run.
 *
 * Conventions: batch losses are sample means; one multiply-accumulate is two
 * FLOPs; `trcost` is forward FLOPs x epochs x training-set size and leaves
 * out knowledge extraction; `training_flops_estimate` assumes backward costs
 * twice the forward pass.
 */
struct RunReport {
  Strategy strategy = Strategy::vanilla;
  std::vector<EpochRecord> epochs;
  double temperature = 1;
  std::uint64_t forward_flops = 0;
  std::uint64_t train_size = 0;
  Flops trcost = 0;
  Flops teacher_trcost = 0;
  Flops extraction_flops = 0;
  Flops training_flops_estimate = 0;
  std::vector<std::uint64_t> seeds;
  std::uint64_t dataset_fingerprint = 0;
  double final_train_ce = 0;
  double final_train_top1 = 0;
  double final_test_top1 = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;
  double wall_clock_seconds = 0;  // not part of the serialized report

  /// Cost as tabulated: the run itself plus an in-session teacher.
  Flops table_trcost() const { return trcost + teacher_trcost; }

  /// Forward+backward training estimate plus extraction passes.
  Flops measured_cost() const { return training_flops_estimate + extraction_flops; }
};

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  AugmentPolicy augment;
};

namespace detail {

inline constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void check_train_data(const ModelSpec& spec, const TrainData& data) {
  if (!data.train || data.train->size() == 0) throw DataError("training set is empty");
  data.train->validate();
  if (data.train->sample_size() != spec.input_size()) {
    throw DimensionError("training samples " + shape_str(data.train->sample_shape) +
                         " do not match model input " + shape_str(spec.input_shape));
  }
  if (data.train->classes != spec.classes) {
    throw ContractError("dataset has " + std::to_string(data.train->classes) +
                        " classes, model has " + std::to_string(spec.classes));
  }
  if (data.augment.enabled() && data.train->sample_shape.size() != 3) {
    throw ContractError("augmentation needs image samples [c x h x w]");
  }
}

/**
 * Runs one stage: one epoch per entry of `lrs`. When `knowledge` is set the
 * objective is ce + T^2 * kl against the stored rows (matched by sample id);
 * otherwise plain cross-entropy.
 */
template <typename T>
void run_stage(const ModelSpec& spec, ParameterSet<T>& params, NesterovSgd<T>& opt,
               const TrainData& data, const OptimizerConfig& cfg, std::span<const double> lrs,
               int first_epoch, int stage, std::uint64_t seed, const KnowledgeStore* knowledge,
               double temperature, RunReport& report, std::mt19937_64& aug_rng) {
  const Dataset& train = *data.train;
  const std::size_t n = train.size();
  const std::size_t c = spec.classes;
  const T weight = static_cast<T>(temperature * temperature);
  Shape image_shape;
  if (data.augment.enabled()) image_shape = train.sample_shape;

  for (std::size_t e = 0; e < lrs.size(); ++e) {
    const int epoch = first_epoch + static_cast<int>(e);
    const auto order = epoch_order(n, seed ^ kShuffleSalt, epoch);
    double ce_sum = 0, kl_sum = 0, total_sum = 0;
    std::size_t hits = 0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      const std::size_t b = rows.size();
      Tensor<T> x = gather_features<T>(train, rows);
      if (data.augment.enabled()) x = augment(x, data.augment, aug_rng);
      const auto labels = gather_labels(train, rows);

      Graph<T> g;
      const auto pass = forward(g, spec, params, x);
      const Var ce = softmax_cross_entropy(g, pass.logits, std::span<const int>(labels));
      Var total = ce;
      double kl_value = 0;
      if (knowledge) {
        Tensor<T> ref({b, c});
        for (std::size_t r = 0; r < b; ++r) {
          const auto row = knowledge->row(train.ids[rows[r]]);
          std::transform(row.begin(), row.end(), ref.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                         [](float v) { return static_cast<T>(v); });
        }
        const Var kl = softened_kl(g, pass.logits, ref, temperature);
        kl_value = static_cast<double>(g.value(kl)[0]);
        total = weighted_sum(g, ce, kl, weight);
      }
      const double ce_value = static_cast<double>(g.value(ce)[0]);
      const double total_value = static_cast<double>(g.value(total)[0]);
      if (!std::isfinite(total_value)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch), epoch);
      }
      g.backward(total);
      std::vector<Tensor<T>> grads;
      grads.reserve(pass.params.size());
      for (Var p : pass.params) grads.push_back(g.grad(p));
      try {
        opt.step(params, grads, lrs[e]);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " in epoch " + std::to_string(epoch), epoch);
      }

      const auto& z = g.value(pass.logits);
      for (std::size_t r = 0; r < b; ++r) {
        if (static_cast<int>(argmax(std::span<const T>(z.data().data() + r * c, c))) == labels[r]) {
          ++hits;
        }
      }
      ce_sum += ce_value * static_cast<double>(b);
      kl_sum += kl_value * static_cast<double>(b);
      total_sum += total_value * static_cast<double>(b);
    }
    if (!params.all_finite()) {
      throw NumericError("parameters became non-finite in epoch " + std::to_string(epoch), epoch);
    }
    const double dn = static_cast<double>(n);
    report.epochs.push_back({epoch, stage, lrs[e], ce_sum / dn, kl_sum / dn, total_sum / dn,
                             static_cast<double>(hits) / dn});
  }
}

template <typename T>
void finish_report(RunReport& report, const ModelSpec& spec, const ParameterSet<T>& params,
                   const TrainData& data, int epochs) {
  report.forward_flops = forward_flops(spec);
  report.train_size = data.train->size();
  report.trcost = trcost(report.forward_flops, static_cast<std::uint64_t>(epochs), report.train_size);
  report.training_flops_estimate = 3 * report.trcost;
  report.dataset_fingerprint = data.train->fingerprint();
  const auto tr = evaluate(spec, params, *data.train);
  report.final_train_ce = tr.mean_ce;
  report.final_train_top1 = tr.top1;
  if (data.test) report.final_test_top1 = evaluate(spec, params, *data.test).top1;
  report.notes.push_back("losses are per-sample means over each mini-batch");
  report.notes.push_back("FLOPs: one multiply-accumulate = 2; trcost = forward FLOPs x epochs x train size");
  report.notes.push_back("training_flops_estimate = 3 x trcost (backward ~ 2 x forward)");
}

template <typename T>
Checkpoint make_checkpoint(const ModelSpec& spec, const ParameterSet<T>& params, StageTag stage,
                           int epoch, const std::mt19937_64& rng) {
  return Checkpoint{spec, params.template cast<float>(), stage, epoch, rng_state(rng)};
}

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Knowledge extraction
// ---------------------------------------------------------------------------

/**
 * One forward pass over `data` (canonical samples, no augmentation) and a
 * softened softmax at `temperature` per sample, keyed by sample id.
 */
template <typename T>
KnowledgeStore extract_knowledge(const ModelSpec& spec, const ParameterSet<T>& params,
                                 const Dataset& data, double temperature, KnowledgeSource source) {
  detail::check_temperature(temperature);
  const auto inf = infer(spec, params, data);
  const std::size_t c = spec.classes;
  KnowledgeStore store(c, temperature, source);
  std::vector<float> row(c);
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::softened_softmax_row(inf.logits.data().data() + i * c, c, temperature, row.data());
    store.add(data.ids[i], row);
  }
  return store;
}

template <typename T = float>
KnowledgeStore extract_knowledge(const Checkpoint& ckpt, const Dataset& data, double temperature,
                                 KnowledgeSource source = KnowledgeSource::self_stage1) {
  return extract_knowledge(ckpt.spec, ckpt.params.cast<T>(), data, temperature, source);
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

struct VanillaResult {
  Checkpoint checkpoint;
  RunReport report;
};

/// Single stage of cross-entropy training under the full-run step decay.
template <typename T>
VanillaResult train_vanilla(const ModelSpec& spec, const TrainData& data, int epochs,
                            OptimizerConfig cfg, std::uint64_t seed,
                            StageTag tag = StageTag::vanilla_final) {
  if (epochs < 1) throw ContractError("training needs at least 1 epoch");
  detail::check_train_data(spec, data);
  cfg.schedule.horizon = epochs;
  cfg.validate();
  detail::Stopwatch clock;

  RunReport report;
  report.strategy = Strategy::vanilla;
  report.seeds = {seed};
  std::vector<double> lrs;
  for (int t = 1; t <= epochs; ++t) lrs.push_back(lr_at(cfg.schedule, t));

  auto params = init_params<T>(spec, seed);
  NesterovSgd<T> opt(cfg);
  opt.reset(params);
  std::mt19937_64 aug_rng(seed);
  detail::run_stage(spec, params, opt, data, cfg, lrs, 1, 1, seed, nullptr, 1.0, report, aug_rng);
  detail::finish_report(report, spec, params, data, epochs);
  report.wall_clock_seconds = clock.seconds();
  return {detail::make_checkpoint(spec, params, tag, epochs, aug_rng), std::move(report)};
}

struct SrdlOptions {
  bool restart = true;         // fresh parameters for stage 2
  bool stage_complete = true;  // each stage runs a complete decay program
};

struct SrdlResult {
  Checkpoint stage1;  // the half-trained model
  Checkpoint final;
  KnowledgeStore knowledge;
  RunReport report;
};

/**
 * Two-stage self-referenced training over `epochs` total.
 *
 * Stage 1 trains ceil(M/2) epochs on cross-entropy. Its softened predictions
 * on the canonical training set become frozen soft targets. Stage 2 starts
 * from a fresh initialization (seed2) with reset velocity and trains
 * floor(M/2) epochs on ce + T^2 * kl.
 */
template <typename T>
SrdlResult train_srdl(const ModelSpec& spec, const TrainData& data, int epochs,
                      OptimizerConfig cfg, double temperature, std::uint64_t seed1,
                      std::uint64_t seed2, const SrdlOptions& options = {}) {
  detail::check_temperature(temperature);
  detail::check_train_data(spec, data);
  const auto split = split_epochs(epochs);
  cfg.schedule.mode = options.stage_complete ? ScheduleMode::stage_complete : ScheduleMode::full_run;
  cfg.schedule.horizon = epochs;
  cfg.validate();
  detail::Stopwatch clock;

  RunReport report;
  report.strategy = Strategy::srdl;
  report.temperature = temperature;
  report.seeds = {seed1, seed2};
  if (seed1 == seed2 && options.restart) {
    report.notes.push_back("warning: restart seed equals stage-1 seed; stage 2 re-creates the stage-1 initialization");
  }
  report.notes.push_back(std::string("schedule: ") +
                         (options.stage_complete ? "stage-complete" : "stage-incomplete"));
  report.notes.push_back(std::string("random restart: ") + (options.restart ? "on" : "off"));
  const auto lrs = two_stage_lrs(cfg.schedule, epochs);
  const std::span<const double> all(lrs);

  auto params = init_params<T>(spec, seed1);
  NesterovSgd<T> opt(cfg);
  opt.reset(params);
  std::mt19937_64 aug_rng(seed1);
  detail::run_stage(spec, params, opt, data, cfg, all.first(split.first), 1, 1, seed1, nullptr, 1.0,
                    report, aug_rng);
  Checkpoint stage1 = detail::make_checkpoint(spec, params, StageTag::stage1_final, split.first, aug_rng);

  KnowledgeStore knowledge =
      extract_knowledge(spec, params, *data.train, temperature, KnowledgeSource::self_stage1);

  if (options.restart) params = init_params<T>(spec, seed2);
  opt.reset(params);
  aug_rng.seed(seed2);
  detail::run_stage(spec, params, opt, data, cfg, all.subspan(split.first), split.first + 1, 2, seed2,
                    &knowledge, temperature, report, aug_rng);

  detail::finish_report(report, spec, params, data, epochs);
  report.extraction_flops = Flops{report.forward_flops} * report.train_size;
  report.wall_clock_seconds = clock.seconds();
  Checkpoint final = detail::make_checkpoint(spec, params, StageTag::stage2_final, epochs, aug_rng);
  return {std::move(stage1), std::move(final), std::move(knowledge), std::move(report)};
}

struct KdOptions {
  /// Cost of training the teacher in this session; counted into the table
  /// cost. Leave empty for a pre-existing teacher.
  std::optional<Flops> teacher_trcost;
};

struct KdResult {
  Checkpoint checkpoint;
  KnowledgeStore knowledge;
  RunReport report;
};

/// Student training on ce + T^2 * kl against a teacher's soft targets,
/// full-run step decay over all epochs.
template <typename T>
KdResult train_kd(const ModelSpec& student, const Checkpoint& teacher, const TrainData& data,
                  int epochs, OptimizerConfig cfg, double temperature, std::uint64_t seed,
                  const KdOptions& options = {}) {
  if (epochs < 1) throw ContractError("training needs at least 1 epoch");
  if (teacher.spec.classes != student.classes) {
    throw ContractError("teacher has " + std::to_string(teacher.spec.classes) +
                        " classes, student has " + std::to_string(student.classes));
  }
  detail::check_temperature(temperature);
  detail::check_train_data(student, data);
  cfg.schedule.mode = ScheduleMode::full_run;
  cfg.schedule.horizon = epochs;
  cfg.validate();
  detail::Stopwatch clock;

  RunReport report;
  report.strategy = Strategy::kd;
  report.temperature = temperature;
  report.seeds = {seed};
  KnowledgeStore knowledge =
      extract_knowledge(teacher.spec, teacher.params.cast<T>(), *data.train, temperature,
                        KnowledgeSource::teacher);
  std::vector<double> lrs;
  for (int t = 1; t <= epochs; ++t) lrs.push_back(lr_at(cfg.schedule, t));

  auto params = init_params<T>(student, seed);
  NesterovSgd<T> opt(cfg);
  opt.reset(params);
  std::mt19937_64 aug_rng(seed);
  detail::run_stage(student, params, opt, data, cfg, lrs, 1, 1, seed, &knowledge, temperature,
                    report, aug_rng);
  detail::finish_report(report, student, params, data, epochs);
  report.extraction_flops = Flops{forward_flops(teacher.spec)} * report.train_size;
  if (options.teacher_trcost) {
    report.teacher_trcost = *options.teacher_trcost;
    report.notes.push_back("table cost includes the in-session teacher");
  } else {
    report.notes.push_back("teacher pre-existing; its cost is excluded");
  }
  report.wall_clock_seconds = clock.seconds();
  return {detail::make_checkpoint(student, params, StageTag::kd_final, epochs, aug_rng),
          std::move(knowledge), std::move(report)};
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Mean of the members' T = 1 softmax outputs for every sample in `batch`.
template <typename T>
std::vector<ProbabilityVector> ensemble_predict(std::span<const Checkpoint> members,
                                                const Tensor<T>& batch) {
  if (members.empty()) throw ContractError("ensemble needs at least one checkpoint");
  const std::size_t c = members.front().spec.classes;
  for (const auto& m : members) {
    if (m.spec.classes != c) throw ContractError("ensemble members disagree on class count");
  }
  const std::size_t n = batch.dim(0);
  std::vector<ProbabilityVector> out(n, ProbabilityVector{std::vector<double>(c, 0.0), 1.0});
  std::vector<double> p(c);
  for (const auto& m : members) {
    Graph<T> g;
    const auto& z = g.value(forward(g, m.spec, m.params.cast<T>(), batch, false).logits);
    for (std::size_t i = 0; i < n; ++i) {
      detail::softened_softmax_row(z.data().data() + i * c, c, 1.0, p.data());
      for (std::size_t j = 0; j < c; ++j) out[i].values[j] += p[j];
    }
  }
  for (auto& pv : out)
    for (auto& v : pv.values) v /= static_cast<double>(members.size());
  return out;
}

/// Argmax of an averaged distribution (lowest index on ties).
inline std::size_t predict(const ProbabilityVector& p) {
  return argmax(std::span<const double>(p.values));
}

/// Top-1 accuracy of the ensemble over a dataset, processed in batches.
template <typename T = float>
double ensemble_accuracy(std::span<const Checkpoint> members, const Dataset& data) {
  std::size_t hits = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += kEvalBatch) {
    const std::size_t hi = std::min(data.size(), lo + kEvalBatch);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    const auto probs = ensemble_predict(members, gather_features<T>(data, rows));
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (static_cast<int>(predict(probs[r])) == data.labels[rows[r]]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace srdl
